"""Scene dataset construction, ground-truth derivation, and disk format.

A dataset is a posed image sequence with exact per-frame depth, forward
and backward optical flow, motion masks, and sequence-long 3D tracks for
probe points, all derived analytically from the generating geometry.

Directory layout:
    manifest.json   version, sizes, frame count, bounds, intrinsics, NDC ref
    poses.json      per-frame 3x4 camera-to-world, row-major
    rgb/%04d.png    8-bit color
    depth/%04d.bin  float32 LE, row-major, planar camera z-depth
    flow_fwd/%04d.bin, flow_bwd/%04d.bin
                    float32 LE, H*W*2, channels (d_col, d_row) in pixels
    mask/%04d.png   motion mask, 0/255
    tracks.json     probe pixel tracks, world coordinates
"""

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from ..renderer import Camera, NdcSpace
from . import geometry as geo

log = logging.getLogger(__name__)

FORMAT_VERSION = "trajfield-dataset-v1"
MOTION_EPS = 1e-6  # world-units scene-flow magnitude that counts as moving


@dataclass
class CameraPath:
    """Camera trajectory over the sequence: a lateral slide along x or a
    small orbit arc about a look-at target."""
    kind: str = "slide"          # "slide" | "orbit"
    amplitude: float = 0.55      # slide half-range / orbit arc half-angle (rad)
    target: tuple = (0.0, 0.0, -5.0)
    orbit_radius: float = 6.0

    def pose(self, t, T):
        tau = 2.0 * t / (T - 1) - 1.0 if T > 1 else 0.0
        if self.kind == "slide":
            r = np.eye(3)
            tr = np.array([self.amplitude * tau, 0.0, 0.0])
            return np.hstack([r, tr[:, None]])
        if self.kind == "orbit":
            ang = self.amplitude * tau
            tgt = np.asarray(self.target, dtype=np.float64)
            eye = tgt + self.orbit_radius * np.array(
                [np.sin(ang), 0.0, np.cos(ang)])
            fwd = tgt - eye
            fwd = fwd / np.linalg.norm(fwd)
            up = np.array([0.0, 1.0, 0.0])
            right = np.cross(fwd, up)
            right /= np.linalg.norm(right)
            true_up = np.cross(right, fwd)
            r = np.stack([right, true_up, -fwd], axis=1)
            return np.hstack([r, eye[:, None]])
        raise ValueError(f"unknown camera path kind '{self.kind}'")


@dataclass
class SceneSpec:
    name: str
    T: int = 24
    width: int = 96
    height: int = 64
    focal: float = 80.0
    near: float = 2.0
    far: float = 12.0
    ndc_margin: float = 1.5
    path: CameraPath = field(default_factory=CameraPath)
    objects: list = field(default_factory=list)
    lighting: geo.Lighting = field(default_factory=geo.Lighting)
    max_probes: int = 192

    def camera(self, t):
        return Camera(fx=self.focal, fy=self.focal,
                      cx=self.width / 2.0, cy=self.height / 2.0,
                      width=self.width, height=self.height,
                      pose=self.path.pose(t, self.T),
                      near=self.near, far=self.far)

    def ndc(self):
        return NdcSpace(width=self.width, height=self.height,
                        fx=self.focal / self.ndc_margin,
                        fy=self.focal / self.ndc_margin, near=self.near,
                        far=self.far)


@dataclass
class ProbeTrack:
    pixel: tuple          # (row, col) at t0
    t0: int
    track: np.ndarray     # (T, 3) world positions


@dataclass
class SceneDataset:
    T: int
    width: int
    height: int
    near: float
    far: float
    intrinsics: dict                  # fx, fy, cx, cy
    ndc_params: dict                  # fx, fy, near of the reference frustum
    poses: np.ndarray                 # (T, 3, 4)
    images: np.ndarray                # (T, H, W, 3) uint8
    depths: np.ndarray                # (T, H, W) float32
    flow_fwd: np.ndarray = None       # (T-1, H, W, 2) float32, frame t -> t+1
    flow_bwd: np.ndarray = None       # (T-1, H, W, 2) float32, frame t+1 -> t
    masks: np.ndarray = None          # (T, H, W) bool
    probes: list = field(default_factory=list)
    preset: str = ""
    obj_ids: np.ndarray = None        # (T, H, W) int; in-memory only, not exported

    @property
    def has_flow(self):
        return self.flow_fwd is not None and self.flow_bwd is not None

    def camera(self, t):
        it = self.intrinsics
        return Camera(fx=it["fx"], fy=it["fy"], cx=it["cx"], cy=it["cy"],
                      width=self.width, height=self.height,
                      pose=self.poses[t], near=self.near, far=self.far)

    def ndc(self):
        return NdcSpace(width=self.width, height=self.height,
                        fx=self.ndc_params["fx"], fy=self.ndc_params["fy"],
                        near=self.ndc_params["near"],
                        far=self.ndc_params.get("far", self.far))

    def image_f64(self, t):
        return self.images[t].astype(np.float64) / 255.0

    def rgb_at(self, t, pixels):
        px = np.asarray(pixels)
        return self.images[t][px[:, 0], px[:, 1]].astype(np.float64) / 255.0

    def xi_at(self, t, pixels):
        """Reference NDC depth of the ground-truth surface at given pixels."""
        px = np.asarray(pixels)
        depth = self.depths[t][px[:, 0], px[:, 1]].astype(np.float64)
        world = self.camera(t).unproject(px, depth)
        return self.ndc().world_to_ndc(world)[:, 2]

    def flow_at(self, t, dt, pixels):
        """GT flow at pixels from frame t toward t+dt, or None at sequence ends."""
        px = np.asarray(pixels)
        if dt == 1 and self.flow_fwd is not None and t < self.T - 1:
            return self.flow_fwd[t][px[:, 0], px[:, 1]].astype(np.float64)
        if dt == -1 and self.flow_bwd is not None and t > 0:
            return self.flow_bwd[t - 1][px[:, 0], px[:, 1]].astype(np.float64)
        return None


def _all_pixels(h, w):
    rows, cols = np.mgrid[0:h, 0:w]
    return np.stack([rows.ravel(), cols.ravel()], axis=1)


def _frame_arrays(spec: SceneSpec, t):
    """Trace frame t: rgb (quantized), depth, per-pixel hit object/point."""
    cam = spec.camera(t)
    px = _all_pixels(spec.height, spec.width)
    o, d = cam.pixel_rays_world(px)
    tr = geo.trace(spec.objects, o, d, float(t), spec.lighting)
    if np.any(tr.obj_id < 0):
        raise ValueError(
            f"preset '{spec.name}' leaves {int((tr.obj_id < 0).sum())} pixels "
            "uncovered at frame %d; ground truth requires full coverage" % t)
    depth = -cam.world_to_cam(tr.points)[:, 2]
    rgb = np.clip(np.rint(tr.rgb * 255.0), 0, 255).astype(np.uint8)
    return (rgb.reshape(spec.height, spec.width, 3),
            depth.reshape(spec.height, spec.width).astype(np.float32),
            tr.points.reshape(spec.height, spec.width, 3),
            tr.obj_id.reshape(spec.height, spec.width))


def _flow_field(spec: SceneSpec, t, dt, points, obj_id):
    """Exact flow from frame t to t+dt: move each hit point with its object,
    project through the destination camera, difference the pixels."""
    h, w = spec.height, spec.width
    cam_to = spec.camera(t + dt)
    pts = points.reshape(-1, 3)
    ids = obj_id.reshape(-1)
    moved = pts.copy()
    for i, obj in enumerate(spec.objects):
        m = ids == i
        if np.any(m):
            moved[m] = pts[m] + obj.offset(float(t + dt)) - obj.offset(float(t))
    rowcol = cam_to.project(moved)
    src = _all_pixels(h, w).astype(np.float64)
    flow = np.stack([rowcol[:, 1] - src[:, 1], rowcol[:, 0] - src[:, 0]], axis=1)
    return flow.reshape(h, w, 2).astype(np.float32), moved.reshape(h, w, 3)


def _displacement_mag(spec, t, dt, obj_id):
    ids = obj_id.reshape(-1)
    mag = np.zeros(ids.shape[0])
    for i, obj in enumerate(spec.objects):
        m = ids == i
        if np.any(m):
            step = obj.offset(float(t + dt)) - obj.offset(float(t))
            mag[m] = np.linalg.norm(step)
    return mag.reshape(obj_id.shape)


def make_scene(spec: SceneSpec, seed=0):
    """Render all frames of a scene and derive its exact ground truth.

    Deterministic in (spec, seed); the seed only drives probe selection.
    """
    T, h, w = spec.T, spec.height, spec.width
    images = np.zeros((T, h, w, 3), dtype=np.uint8)
    depths = np.zeros((T, h, w), dtype=np.float32)
    points = np.zeros((T, h, w, 3))
    obj_ids = np.zeros((T, h, w), dtype=np.int64)
    for t in range(T):
        images[t], depths[t], points[t], obj_ids[t] = _frame_arrays(spec, t)

    flow_fwd = np.zeros((T - 1, h, w, 2), dtype=np.float32)
    flow_bwd = np.zeros((T - 1, h, w, 2), dtype=np.float32)
    masks = np.zeros((T, h, w), dtype=bool)
    for t in range(T - 1):
        flow_fwd[t], _ = _flow_field(spec, t, +1, points[t], obj_ids[t])
        flow_bwd[t], _ = _flow_field(spec, t + 1, -1, points[t + 1], obj_ids[t + 1])
    for t in range(T):
        dt = 1 if t < T - 1 else -1
        masks[t] = _displacement_mag(spec, t, dt, obj_ids[t]) > MOTION_EPS

    # Warn about objects never visible from any camera.
    seen = set(np.unique(obj_ids))
    for i, obj in enumerate(spec.objects):
        if i not in seen:
            log.warning("object %d of preset '%s' is outside every frame's view",
                        i, spec.name)

    probes = _select_probes(spec, seed, points[0], obj_ids[0], masks[0])
    return SceneDataset(
        T=T, width=w, height=h, near=spec.near, far=spec.far,
        intrinsics={"fx": spec.focal, "fy": spec.focal,
                    "cx": w / 2.0, "cy": h / 2.0},
        ndc_params={"fx": spec.focal / spec.ndc_margin,
                    "fy": spec.focal / spec.ndc_margin, "near": spec.near,
                    "far": spec.far},
        poses=np.stack([spec.path.pose(t, T) for t in range(T)]),
        images=images, depths=depths,
        flow_fwd=flow_fwd, flow_bwd=flow_bwd, masks=masks,
        probes=probes, preset=spec.name, obj_ids=obj_ids)


def _select_probes(spec, seed, points0, obj_id0, mask0):
    """Probe pixels at t0=0: motion-mask pixels when any, else a grid."""
    h, w = spec.height, spec.width
    if np.any(mask0):
        rows, cols = np.nonzero(mask0)
    else:
        rows, cols = np.mgrid[4:h:8, 4:w:8]
        rows, cols = rows.ravel(), cols.ravel()
    order = np.random.default_rng(np.random.PCG64(seed)).permutation(rows.shape[0])
    keep = np.sort(order[:spec.max_probes])
    probes = []
    times = np.arange(spec.T, dtype=np.float64)
    for r, c in zip(rows[keep], cols[keep]):
        x0 = points0[r, c]
        obj = spec.objects[obj_id0[r, c]]
        track = x0 + obj.offset(times) - obj.offset(0.0)
        probes.append(ProbeTrack(pixel=(int(r), int(c)), t0=0, track=track))
    return probes


# -- disk format ----------------------------------------------------------------

def _write_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, sort_keys=True, indent=1)


def export_dataset(ds: SceneDataset, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    for sub in ("rgb", "depth", "flow_fwd", "flow_bwd", "mask"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)

    _write_json(os.path.join(out_dir, "manifest.json"), {
        "version": FORMAT_VERSION, "T": ds.T,
        "width": ds.width, "height": ds.height,
        "near": ds.near, "far": ds.far,
        "intrinsics": ds.intrinsics, "ndc": ds.ndc_params,
        "preset": ds.preset,
    })
    _write_json(os.path.join(out_dir, "poses.json"),
                [p.reshape(-1).tolist() for p in ds.poses])
    for t in range(ds.T):
        Image.fromarray(ds.images[t]).save(
            os.path.join(out_dir, "rgb", f"{t:04d}.png"))
        ds.depths[t].astype("<f4").tofile(
            os.path.join(out_dir, "depth", f"{t:04d}.bin"))
        if ds.masks is not None:
            Image.fromarray((ds.masks[t] * np.uint8(255))).save(
                os.path.join(out_dir, "mask", f"{t:04d}.png"))
    if ds.flow_fwd is not None:
        for t in range(ds.T - 1):
            ds.flow_fwd[t].astype("<f4").tofile(
                os.path.join(out_dir, "flow_fwd", f"{t:04d}.bin"))
            ds.flow_bwd[t].astype("<f4").tofile(
                os.path.join(out_dir, "flow_bwd", f"{t:04d}.bin"))
    _write_json(os.path.join(out_dir, "tracks.json"), {
        "T": ds.T,
        "probes": [{"pixel": list(p.pixel), "t0": p.t0,
                    "track": p.track.tolist()} for p in ds.probes],
    })


def load_dataset(dir_path):
    man_path = os.path.join(dir_path, "manifest.json")
    if not os.path.isfile(man_path):
        raise FileNotFoundError(f"no dataset manifest at {man_path}")
    with open(man_path) as f:
        man = json.load(f)
    if man.get("version") != FORMAT_VERSION:
        raise ValueError(
            f"unsupported dataset version {man.get('version')!r}; "
            f"expected {FORMAT_VERSION!r}")
    T, h, w = man["T"], man["height"], man["width"]
    with open(os.path.join(dir_path, "poses.json")) as f:
        poses = np.array([np.reshape(p, (3, 4)) for p in json.load(f)])
    if poses.shape[0] != T:
        raise ValueError(f"poses.json has {poses.shape[0]} entries, expected {T}")

    images = np.zeros((T, h, w, 3), dtype=np.uint8)
    depths = np.zeros((T, h, w), dtype=np.float32)
    masks = np.zeros((T, h, w), dtype=bool)
    for t in range(T):
        images[t] = np.asarray(Image.open(
            os.path.join(dir_path, "rgb", f"{t:04d}.png")))
        depths[t] = np.fromfile(
            os.path.join(dir_path, "depth", f"{t:04d}.bin"),
            dtype="<f4").reshape(h, w)
        mask_file = os.path.join(dir_path, "mask", f"{t:04d}.png")
        if os.path.isfile(mask_file):
            masks[t] = np.asarray(Image.open(mask_file)) > 127

    def read_flow(sub):
        out = np.zeros((T - 1, h, w, 2), dtype=np.float32)
        for t in range(T - 1):
            path = os.path.join(dir_path, sub, f"{t:04d}.bin")
            if not os.path.isfile(path):
                return None
            out[t] = np.fromfile(path, dtype="<f4").reshape(h, w, 2)
        return out

    flow_fwd = read_flow("flow_fwd")
    flow_bwd = read_flow("flow_bwd")
    if flow_fwd is None or flow_bwd is None:
        log.warning("dataset at %s has no flow; flow supervision disabled", dir_path)
        flow_fwd = flow_bwd = None

    probes = []
    tracks_path = os.path.join(dir_path, "tracks.json")
    if os.path.isfile(tracks_path):
        with open(tracks_path) as f:
            tr = json.load(f)
        probes = [ProbeTrack(pixel=tuple(p["pixel"]), t0=p["t0"],
                             track=np.asarray(p["track"]))
                  for p in tr["probes"]]

    return SceneDataset(
        T=T, width=w, height=h, near=man["near"], far=man["far"],
        intrinsics=man["intrinsics"], ndc_params=man["ndc"], poses=poses,
        images=images, depths=depths, flow_fwd=flow_fwd, flow_bwd=flow_bwd,
        masks=masks, probes=probes, preset=man.get("preset", ""))
