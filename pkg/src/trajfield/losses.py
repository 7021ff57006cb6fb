"""Training objectives: photometric terms, consistency regularizers, and
the supervision terms driven by reference depth and flow.

Every loss returns a scalar Tensor so the whole objective stays inside
one backward pass. Aggregation over a batch is always a mean, reduced in
a fixed order for determinism.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .renderer import Camera, FrameRender, WarpedRender, p_empty, render_frame, render_warped
from .trajectory import displacement_batch

log = logging.getLogger(__name__)


@dataclass
class LossWeights:
    """Linear combination weights. cycle and traj are fixed; the scheduled
    three vary over training (see trainer.weight_schedule)."""
    cycle: float = 1.0
    traj: float = 0.1
    svs: float = 1e-5
    depth: float = 0.04
    flow: float = 0.02

    def __post_init__(self):
        for name in ("cycle", "traj", "svs", "depth", "flow"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be nonnegative")

    def to_dict(self):
        return {k: getattr(self, k) for k in ("cycle", "traj", "svs", "depth", "flow")}


@dataclass
class LossBreakdown:
    photo_t0: float = 0.0
    photo_prev: float = 0.0
    photo_next: float = 0.0
    photo_t1: float = 0.0
    cycle: float = 0.0
    traj_spatial: float = 0.0
    traj_arap: float = 0.0
    traj_temporal: float = 0.0
    svs: float = 0.0
    depth: float = 0.0
    flow: float = 0.0
    total: float = 0.0

    @property
    def traj(self):
        return self.traj_spatial + self.traj_arap + self.traj_temporal

    @property
    def photometric(self):
        return self.photo_t0 + self.photo_prev + self.photo_next + self.photo_t1

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["traj"] = self.traj
        d["photometric"] = self.photometric
        return d

    def add_scaled(self, other, scale):
        for k in self.__dataclass_fields__:
            setattr(self, k, getattr(self, k) + scale * getattr(other, k))


def photo_loss(rendered, reference):
    """Mean over pixels of the squared L2 color error."""
    reference = np.asarray(reference, dtype=np.float64)
    if rendered.shape != reference.shape:
        raise ValueError(
            f"photo_loss: shape mismatch {rendered.shape} vs {reference.shape}")
    diff = dc.sub(rendered, dc.Tensor(reference))
    return dc.tensor_mean(dc.tensor_sum(dc.mul(diff, diff), axis=1))


def temporal_photo_loss(field, rays, t1, depths, reference, base=None, **warp_kw):
    """Photometric loss of the warped render from t1 against the t0 image.

    Returns (loss, WarpedRender) so the warped field state can be reused
    by the cycle loss without a second query.
    """
    warped = render_warped(field, rays, t1, depths, base=base, **warp_kw)
    return photo_loss(warped.comp.rgb, reference), warped


def cycle_loss(state_t0, state_t1, p_occ):
    """Consistency of (phi, sigma, color) between corresponding points.

    Each state is a (phi, sigma, color) triple of Tensors batched over
    sample points; the two colors must have been queried with identical
    (d, t) inputs. Per point: (1 - p_occ) * (|dphi|_1 + 0.1 |dsigma|_1 +
    0.1 |dcolor|_1), averaged over the batch.
    """
    phi0, sig0, c0 = state_t0
    phi1, sig1, c1 = state_t1
    keep = dc.sub(1.0, p_occ)
    term = dc.tensor_sum(dc.tensor_abs(dc.sub(phi0, phi1)), axis=1, keepdims=True)
    term = dc.add(term, dc.mul(0.1, dc.tensor_abs(dc.sub(sig0, sig1))))
    term = dc.add(term, dc.mul(0.1, dc.tensor_sum(
        dc.tensor_abs(dc.sub(c0, c1)), axis=1, keepdims=True)))
    return dc.tensor_mean(dc.mul(keep, term))


def cycle_loss_from_warp(w: WarpedRender):
    return cycle_loss((w.base.phi, w.base.sigma, w.base.colors),
                      (w.phi_w, w.sigma_w, w.colors_w), w.p_occ)


_WINDOW_CACHE = {}


def _window_sum_matrix(n, window):
    key = (n, window)
    if key not in _WINDOW_CACHE:
        m = np.zeros((n, n - window + 1))
        for j in range(n - window + 1):
            m[j:j + window, j] = 1.0
        _WINDOW_CACHE[key] = m
    return _WINDOW_CACHE[key]


def svs_loss(atten_norm, window_size, acc=None):
    """One minus the largest attenuation mass inside any contiguous window.

    Encourages each ray's normalized attenuation to concentrate on a
    single visible surface. Rays carrying (essentially) no mass contribute
    0; `acc` (total quadrature weight per ray) supplies that mask.
    """
    atten_norm = dc.as_tensor(atten_norm)
    r, n = atten_norm.shape
    if window_size > n:
        raise ValueError(f"svs window {window_size} exceeds {n} samples")
    wsums = dc.matmul(atten_norm, dc.Tensor(_window_sum_matrix(n, window_size)))
    best = dc.max_over_window(wsums, wsums.shape[-1])          # (R, 1)
    per_ray = dc.sub(1.0, best)
    if acc is not None:
        acc_v = acc.data if isinstance(acc, dc.Tensor) else np.asarray(acc)
        mask = (acc_v.reshape(r, 1) > 1e-6).astype(np.float64)
        per_ray = dc.mul(per_ray, dc.Tensor(mask))
    return dc.tensor_mean(per_ray)


def _corresponded_euclid(base: FrameRender, T, ndc, t0, t_target):
    """Euclidean positions of the batch samples corresponded to t_target."""
    delta = displacement_batch(base.phi, T, t0, t_target)
    pts = dc.add(dc.Tensor(base.points), delta)
    r, n = base.depths.shape
    return dc.reshape(ndc.ndc_to_world(pts, clamp=True), (r, n, 3))


def _pair_l1_mean(a, b):
    """Mean over pairs/rays of the xyz L1 norm of (a - b), optionally weighted."""
    return dc.tensor_mean(dc.tensor_sum(dc.tensor_abs(dc.sub(a, b)), axis=2))


def traj_reg_terms(base: FrameRender, field, ndc, t0, t1, neighbor_dts):
    """The three trajectory regularizers for one rendered batch.

    Positions are converted from NDC to Euclidean coordinates before any
    distance is taken; pairs are adjacent quadrature samples along each
    ray. Returns (spatial smoothness of scene flow, as-rigid-as-possible,
    temporal smoothness) as scalar Tensors. The first and third terms
    average over the available +-1 neighbors; the second uses the sampled
    t1 and is damped by emptiness, weighting each pair by one minus its
    mean emptiness probability.
    """
    r, n = base.depths.shape
    if n < 2:
        raise ValueError("trajectory regularizer needs at least 2 samples per ray")
    if not neighbor_dts:
        raise ValueError("trajectory regularizer needs at least one neighbor frame")
    T = field.cfg.T

    e0 = dc.reshape(ndc.ndc_to_world(dc.Tensor(base.points), clamp=True), (r, n, 3))
    spatial = None
    temporal = None
    for dt in neighbor_dts:
        en = _corresponded_euclid(base, T, ndc, t0, t0 + dt)
        flow = dc.sub(e0, en)
        s = _pair_l1_mean(flow[:, :-1, :], flow[:, 1:, :])
        tm = dc.tensor_mean(dc.tensor_sum(dc.tensor_abs(flow), axis=2))
        spatial = s if spatial is None else dc.add(spatial, s)
        temporal = tm if temporal is None else dc.add(temporal, tm)
    inv = 1.0 / len(neighbor_dts)
    spatial = dc.mul(spatial, inv)
    temporal = dc.mul(temporal, inv)

    e1 = _corresponded_euclid(base, T, ndc, t0, t1)
    off0 = dc.sub(e0[:, :-1, :], e0[:, 1:, :])
    off1 = dc.sub(e1[:, :-1, :], e1[:, 1:, :])
    pe = dc.reshape(p_empty(base.sigma), (r, n))
    pair_occ = dc.sub(1.0, dc.mul(dc.add(pe[:, :-1], pe[:, 1:]), 0.5))
    dist = dc.tensor_sum(dc.tensor_abs(dc.sub(off0, off1)), axis=2)
    arap = dc.tensor_mean(dc.mul(pair_occ, dist))
    return spatial, arap, temporal


def traj_reg_loss(base, field, ndc, t0, t1, neighbor_dts):
    s, a, t = traj_reg_terms(base, field, ndc, t0, t1, neighbor_dts)
    return dc.add(dc.add(s, a), t)


def depth_loss(pred, reference):
    """Affine-invariant depth supervision.

    Fits scale a and shift b minimizing sum((a * pred + b - reference)^2)
    in closed form, then returns the mean L1 of the aligned residuals.
    A constant reference batch is degenerate; the term is skipped (None)
    with a warning.
    """
    reference = np.asarray(reference, dtype=np.float64).reshape(-1)
    if reference.size < 2 or float(np.var(reference)) < 1e-12:
        log.warning("depth_loss skipped: degenerate (constant) reference batch")
        return None
    pred = dc.reshape(dc.as_tensor(pred), (-1,))
    ref = dc.Tensor(reference)
    mp = dc.tensor_mean(pred)
    mr = float(reference.mean())
    cov = dc.sub(dc.tensor_mean(dc.mul(pred, ref)), dc.mul(mp, mr))
    # Guard only the constant-prediction case (cov is then 0 as well).
    var = dc.add(dc.sub(dc.tensor_mean(dc.mul(pred, pred)), dc.mul(mp, mp)), 1e-30)
    a = dc.div(cov, var)
    b = dc.sub(mr, dc.mul(a, mp))
    resid = dc.sub(dc.add(dc.mul(a, pred), b), ref)
    return dc.tensor_mean(dc.tensor_abs(resid))


@dataclass
class FlowTarget:
    """Reference optical flow from t0 toward t0+dt, through the neighbor camera."""
    dt: int
    cam: Camera
    gt: np.ndarray  # (R, 2) pixel displacement (d_col, d_row)


def flow_loss(base: FrameRender, field, ndc, t0, pixels, target: FlowTarget):
    """L1 error of the predicted 2D flow for one neighbor direction.

    The corresponded sample positions at t0+dt are composited per ray with
    the normalized quadrature weights (so the point is a true expectation
    on the ray even before opacity saturates), mapped back to Euclidean
    space, projected through the neighbor camera, and differenced against
    the source pixel. Rays carrying almost no mass are excluded.
    """
    r, n = base.depths.shape
    T = field.cfg.T
    delta = displacement_batch(base.phi, T, t0, t0 + target.dt)
    pts = dc.reshape(dc.add(dc.Tensor(base.points), delta), (r, n, 3))
    w = dc.reshape(base.comp.atten_norm, (r, n, 1))
    x_ndc = dc.tensor_sum(dc.mul(w, pts), axis=1)              # (R, 3)
    x_w = ndc.ndc_to_world(x_ndc, clamp=True)

    cam = target.cam
    rot, tr = cam.pose[:, :3], cam.pose[:, 3]
    pc = dc.matmul(dc.sub(x_w, dc.Tensor(tr[None, :])), dc.Tensor(rot))
    z = dc.mul(pc[:, 2:3], -1.0)
    col = dc.add(dc.div(dc.mul(pc[:, 0:1], cam.fx), z), cam.cx - 0.5)
    row = dc.sub(cam.cy - 0.5, dc.div(dc.mul(pc[:, 1:2], cam.fy), z))

    px = np.asarray(pixels, dtype=np.float64)
    pred = dc.concat([dc.sub(col, dc.Tensor(px[:, 1:2])),
                      dc.sub(row, dc.Tensor(px[:, 0:1]))], axis=1)
    gt = np.asarray(target.gt, dtype=np.float64)
    err = dc.tensor_sum(dc.tensor_abs(dc.sub(pred, dc.Tensor(gt))), axis=1)
    live = (base.comp.acc.data > 0.05).astype(np.float64)
    denom = max(float(live.sum()), 1.0)
    return dc.mul(dc.tensor_sum(dc.mul(err, dc.Tensor(live))), 1.0 / denom)


@dataclass
class TrainingBatch:
    """Everything one optimization step needs, assembled by the trainer."""
    rays: object                   # RayBatch at t0
    depths: np.ndarray             # (R, N)
    gt_rgb: np.ndarray             # (R, 3)
    t1: int
    neighbor_dts: list = field(default_factory=list)   # subset of [-1, +1]
    gt_depth_xi: np.ndarray = None                     # (R,) or None
    flow_targets: list = field(default_factory=list)   # list of FlowTarget
    svs_window: int = 8

    @property
    def t0(self):
        return int(self.rays.t0)


def total_loss(field, batch: TrainingBatch, weights: LossWeights, ndc, **warp_kw):
    """The full objective for one batch.

    Photometric part: the frame loss at t0 plus warped losses from both
    existing neighbors and from the sampled t1. Regularizers: cycle
    (averaged over the distinct warped renders), the three trajectory
    terms, single-visible-surface, and the depth and flow supervision,
    each with its weight. Returns (LossBreakdown, scalar Tensor).
    """
    rays, depths, t0, t1 = batch.rays, batch.depths, batch.t0, batch.t1
    base = render_frame(field, rays, depths)
    terms = []

    l_t0 = photo_loss(base.comp.rgb, batch.gt_rgb)
    terms.append(l_t0)

    warps = {}
    photo_by_dt = {}
    for dt in batch.neighbor_dts:
        l, w = temporal_photo_loss(field, rays, t0 + dt, depths, batch.gt_rgb,
                                   base=base, **warp_kw)
        warps[t0 + dt] = w
        photo_by_dt[dt] = l
        terms.append(l)

    if t1 in warps:   # t1 landed on a neighbor; reuse the render, count the term
        l_t1 = photo_by_dt[t1 - t0]
    else:
        l_t1, w = temporal_photo_loss(field, rays, t1, depths, batch.gt_rgb,
                                      base=base, **warp_kw)
        warps[t1] = w
    terms.append(l_t1)

    cyc = None
    for t in sorted(warps):
        c = cycle_loss_from_warp(warps[t])
        cyc = c if cyc is None else dc.add(cyc, c)
    cyc = dc.mul(cyc, 1.0 / len(warps))

    tr_s, tr_a, tr_t = traj_reg_terms(base, field, ndc, t0, t1, batch.neighbor_dts)
    svs = svs_loss(base.comp.atten_norm, batch.svs_window, acc=base.comp.acc)

    dep = None
    if batch.gt_depth_xi is not None and weights.depth > 0:
        dep = depth_loss(base.comp.depth, batch.gt_depth_xi)

    flw = None
    if batch.flow_targets and weights.flow > 0:
        for tgt in batch.flow_targets:
            l = flow_loss(base, field, ndc, t0, rays.pixels, tgt)
            flw = l if flw is None else dc.add(flw, l)
        flw = dc.mul(flw, 1.0 / len(batch.flow_targets))

    reg = dc.mul(cyc, weights.cycle)
    reg = dc.add(reg, dc.mul(dc.add(dc.add(tr_s, tr_a), tr_t), weights.traj))
    reg = dc.add(reg, dc.mul(svs, weights.svs))
    if dep is not None:
        reg = dc.add(reg, dc.mul(dep, weights.depth))
    if flw is not None:
        reg = dc.add(reg, dc.mul(flw, weights.flow))

    root = terms[0]
    for t in terms[1:]:
        root = dc.add(root, t)
    root = dc.add(root, reg)

    bd = LossBreakdown(
        photo_t0=l_t0.item(),
        photo_prev=photo_by_dt[-1].item() if -1 in photo_by_dt else 0.0,
        photo_next=photo_by_dt[1].item() if 1 in photo_by_dt else 0.0,
        photo_t1=l_t1.item(),
        cycle=cyc.item(),
        traj_spatial=tr_s.item(),
        traj_arap=tr_a.item(),
        traj_temporal=tr_t.item(),
        svs=svs.item(),
        depth=dep.item() if dep is not None else 0.0,
        flow=flw.item() if flw is not None else 0.0,
        total=root.item(),
    )
    return bd, root
