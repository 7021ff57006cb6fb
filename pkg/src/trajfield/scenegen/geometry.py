"""Analytic ray-traced scenes with exact ground truth.

Objects are textured primitives that translate rigidly along an analytic
trajectory; textures are evaluated in object-local coordinates so material
points keep their color as they move. Shading is Lambertian under fixed
directional lights, with an optional specular lobe to exercise
view/time-dependent radiance.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

_EPS = 1e-9


# -- trajectories --------------------------------------------------------------

@dataclass
class StaticMotion:
    def offset(self, t):
        t = np.asarray(t, dtype=np.float64)
        return np.zeros(t.shape + (3,))


@dataclass
class LinearMotion:
    velocity: np.ndarray  # units per frame

    def offset(self, t):
        t = np.asarray(t, dtype=np.float64)
        return t[..., None] * np.asarray(self.velocity, dtype=np.float64)


@dataclass
class SinusoidMotion:
    amplitude: np.ndarray   # (3,) per-axis amplitude
    cycles: float           # full periods over the sequence
    T: int
    phase: float = 0.0

    def offset(self, t):
        t = np.asarray(t, dtype=np.float64)
        arg = 2.0 * np.pi * self.cycles * t / (self.T - 1) + self.phase
        return np.sin(arg)[..., None] * np.asarray(self.amplitude, dtype=np.float64)


@dataclass
class TrackMotion:
    """Explicit per-frame offsets; integer frame times only."""
    track: np.ndarray  # (T, 3)

    def offset(self, t):
        track = np.asarray(self.track, dtype=np.float64)
        idx = np.asarray(np.rint(t), dtype=np.int64)
        return track[idx]


# -- textures ------------------------------------------------------------------

def checker_texture(scale, color_a, color_b):
    ca, cb = np.asarray(color_a), np.asarray(color_b)

    def tex(p):
        k = np.floor(p[..., 0] / scale) + np.floor(p[..., 1] / scale)
        m = (np.mod(k, 2.0) < 1.0)[..., None]
        return np.where(m, ca, cb)

    return tex


def smooth_texture(base, amp, freq, phases):
    """Per-channel sinusoidal color field in the local xy plane."""
    base = np.asarray(base, dtype=np.float64)
    amp = np.asarray(amp, dtype=np.float64)
    freq = np.asarray(freq, dtype=np.float64)
    phases = np.asarray(phases, dtype=np.float64)

    def tex(p):
        x, y = p[..., 0:1], p[..., 1:2]
        return np.clip(
            base + amp * np.sin(freq[0] * x + phases) * np.cos(freq[1] * y + 2.0 * phases),
            0.0, 1.0)

    return tex


def blend_textures(tex_a, tex_b, w_b):
    def tex(p):
        return np.clip((1.0 - w_b) * tex_a(p) + w_b * tex_b(p), 0.0, 1.0)

    return tex


# -- primitives ----------------------------------------------------------------

@dataclass
class Primitive:
    texture: callable
    motion: object = field(default_factory=StaticMotion)
    specular: float = 0.0       # Phong lobe strength; 0 disables
    shininess: float = 24.0

    def offset(self, t):
        return self.motion.offset(t)

    def local(self, points, t):
        return points - self.anchor() - self.offset(t)

    def albedo(self, points, t):
        return self.texture(self.local(points, t))


@dataclass
class Sphere(Primitive):
    center: np.ndarray = None
    radius: float = 1.0

    def anchor(self):
        return np.asarray(self.center, dtype=np.float64)

    def intersect(self, o, d, t):
        c = self.anchor() + self.offset(t)
        oc = o - c
        a = np.sum(d * d, axis=1)
        b = 2.0 * np.sum(oc * d, axis=1)
        cc = np.sum(oc * oc, axis=1) - self.radius ** 2
        disc = b * b - 4.0 * a * cc
        hit = disc >= 0.0
        s = np.full(o.shape[0], np.inf)
        sq = np.sqrt(np.maximum(disc, 0.0))
        s0 = (-b - sq) / (2.0 * a)
        s1 = (-b + sq) / (2.0 * a)
        near = np.where(s0 > _EPS, s0, s1)
        s[hit & (near > _EPS)] = near[hit & (near > _EPS)]
        return s

    def normal(self, points, t):
        n = points - (self.anchor() + self.offset(t))
        return n / np.linalg.norm(n, axis=-1, keepdims=True)


@dataclass
class Plane(Primitive):
    """Infinite plane through `point` with unit `n`."""
    point: np.ndarray = None
    n: np.ndarray = None

    def anchor(self):
        return np.asarray(self.point, dtype=np.float64)

    def intersect(self, o, d, t):
        n = np.asarray(self.n, dtype=np.float64)
        p0 = self.anchor() + self.offset(t)
        denom = d @ n
        s = np.where(np.abs(denom) > _EPS, ((p0 - o) @ n) / denom, np.inf)
        return np.where(s > _EPS, s, np.inf)

    def normal(self, points, t):
        n = np.asarray(self.n, dtype=np.float64)
        return np.broadcast_to(n, points.shape)


@dataclass
class Box(Primitive):
    """Axis-aligned box, translated along its motion."""
    center: np.ndarray = None
    half: np.ndarray = None

    def anchor(self):
        return np.asarray(self.center, dtype=np.float64)

    def intersect(self, o, d, t):
        c = self.anchor() + self.offset(t)
        h = np.asarray(self.half, dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            t0 = (c - h - o) * inv
            t1 = (c + h - o) * inv
        lo = np.nanmax(np.minimum(t0, t1), axis=1)
        hi = np.nanmin(np.maximum(t0, t1), axis=1)
        s = np.where((hi >= lo) & (hi > _EPS), np.where(lo > _EPS, lo, hi), np.inf)
        return s

    def normal(self, points, t):
        c = self.anchor() + self.offset(t)
        h = np.asarray(self.half, dtype=np.float64)
        rel = (points - c) / h
        axis = np.argmax(np.abs(rel), axis=-1)
        n = np.zeros_like(points)
        n[np.arange(points.shape[0]), axis] = np.sign(
            rel[np.arange(points.shape[0]), axis])
        return n


# -- scene ---------------------------------------------------------------------

@dataclass
class Lighting:
    direction: np.ndarray = (0.3, 0.4, 0.8)
    ambient: float = 0.35
    diffuse: float = 0.65

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        self.direction = d / np.linalg.norm(d)


@dataclass
class TraceResult:
    depth: np.ndarray      # (R,) ray parameter of first hit, inf on miss
    points: np.ndarray     # (R, 3)
    obj_id: np.ndarray     # (R,) int, -1 on miss
    rgb: np.ndarray        # (R, 3)


def trace(objects, o, d, t, lighting: Lighting):
    """First-hit trace plus shading for rays o + s*d at frame time t."""
    r = o.shape[0]
    depths = np.stack([obj.intersect(o, d, t) for obj in objects], axis=0)
    obj_id = np.argmin(depths, axis=0)
    s = depths[obj_id, np.arange(r)]
    miss = ~np.isfinite(s)
    obj_id = np.where(miss, -1, obj_id)

    points = o + np.where(miss, 0.0, s)[:, None] * d
    rgb = np.zeros((r, 3))
    ldir = lighting.direction
    for i, obj in enumerate(objects):
        m = obj_id == i
        if not np.any(m):
            continue
        p = points[m]
        n = obj.normal(p, t)
        lam = lighting.ambient + lighting.diffuse * np.maximum(0.0, n @ ldir)
        col = obj.albedo(p, t) * lam[:, None]
        if obj.specular > 0.0:
            v = -d[m] / np.linalg.norm(d[m], axis=1, keepdims=True)
            refl = 2.0 * (n @ ldir)[:, None] * n - ldir
            spec = np.maximum(0.0, np.sum(refl * v, axis=1)) ** obj.shininess
            col = col + obj.specular * spec[:, None]
        rgb[m] = np.clip(col, 0.0, 1.0)
    return TraceResult(depth=s, points=points, obj_id=obj_id, rgb=rgb)
