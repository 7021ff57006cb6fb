"""Ground-truth field built directly from a scene's analytic geometry.

Serves as the independent oracle for renderer and loss validation: density
is a hard indicator of object interiors, colors are the shaded albedo of
the material point, and trajectory coefficients are the exact cosine-basis
projection of the material point's NDC track. No gradients; Lambertian
presets only.
"""

from dataclasses import dataclass

import numpy as np

from .. import diffcore as dc
from ..trajectory import basis_matrix
from . import geometry as geo
from .dataset import SceneSpec


def _inside(obj, x, t):
    if isinstance(obj, geo.Sphere):
        c = obj.anchor() + obj.offset(t)
        return np.linalg.norm(x - c, axis=1) <= obj.radius
    if isinstance(obj, geo.Box):
        c = obj.anchor() + obj.offset(t)
        return np.all(np.abs(x - c) <= np.asarray(obj.half), axis=1)
    if isinstance(obj, geo.Plane):
        n = np.asarray(obj.n, dtype=np.float64)
        return (x - obj.anchor() - obj.offset(t)) @ n <= 0.0
    raise TypeError(f"unsupported primitive {type(obj)!r}")


@dataclass
class _CfgShim:
    T: int
    K: int


class OracleField:
    """Implements the field protocol (query_field / query_color / cfg)."""

    def __init__(self, spec: SceneSpec, K=None, sigma_opaque=5000.0):
        self.spec = spec
        self.ndc = spec.ndc()
        K = K if K is not None else spec.T - 1
        self.cfg = _CfgShim(T=spec.T, K=K)
        self.sigma_opaque = sigma_opaque
        self.basis = basis_matrix(spec.T, K)        # (K, T)
        self.times = np.arange(spec.T, dtype=np.float64)

    def detached(self):
        return self

    def query_field(self, p, t):
        pn = p.data if isinstance(p, dc.Tensor) else np.asarray(p, dtype=np.float64)
        x = self.ndc.ndc_to_world(pn, clamp=True)
        b = x.shape[0]
        T, K = self.cfg.T, self.cfg.K
        sigma = np.zeros((b, 1))
        omega = np.zeros((b, 3))
        phi = np.zeros((b, 3 * K))
        ldir = self.spec.lighting.direction
        claimed = np.zeros(b, dtype=bool)
        # Front-to-back object priority: first object whose interior holds
        # the point claims it (planes last; they are half-spaces).
        order = sorted(range(len(self.spec.objects)),
                       key=lambda i: isinstance(self.spec.objects[i], geo.Plane))
        for i in order:
            obj = self.spec.objects[i]
            m = _inside(obj, x, float(t)) & ~claimed
            if not np.any(m):
                continue
            claimed |= m
            sigma[m, 0] = self.sigma_opaque
            lam = (self.spec.lighting.ambient + self.spec.lighting.diffuse
                   * np.maximum(0.0, obj.normal(x[m], float(t)) @ ldir))
            omega[m] = np.clip(obj.albedo(x[m], float(t)) * lam[:, None], 0.0, 1.0)
            # Exact NDC track of the material point, projected on the basis.
            offs = obj.offset(self.times) - obj.offset(float(t))   # (T, 3)
            world_track = x[m][:, None, :] + offs[None, :, :]      # (M, T, 3)
            ndc_track = self.ndc.world_to_ndc(world_track)
            coeffs = np.einsum("kt,mta->mak", self.basis, ndc_track)
            phi[m] = coeffs.reshape(m.sum(), 3 * K)
        return _OracleOutput(phi=dc.Tensor(phi), omega=dc.Tensor(omega),
                             sigma=dc.Tensor(sigma))

    def query_color(self, omega, t_query, d):
        if isinstance(omega, dc.Tensor):
            return dc.Tensor(omega.data)
        return dc.Tensor(np.asarray(omega))


@dataclass
class _OracleOutput:
    phi: dc.Tensor
    omega: dc.Tensor
    sigma: dc.Tensor
