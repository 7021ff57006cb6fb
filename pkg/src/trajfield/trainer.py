"""Optimization loop: batch composition, the local-to-global temporal
schedule, loss-weight ramps, Adam, and deterministic checkpointing.

Training is a pure function of (dataset, config, seed): the sampling rng
is a counter-based generator whose state rides along in checkpoints, all
reductions run in a fixed order, and checkpoints serialize to
byte-identical files for identical state.
"""

import json
import logging
import math
import os
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import diffcore as dc
from .fieldnet import FieldNet, ModelConfig
from .losses import FlowTarget, LossBreakdown, LossWeights, TrainingBatch, total_loss
from .renderer import generate_rays, sample_depths
from .trajectory import default_num_coeffs

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"TRAJFIELD-CKPT-v1\n"


class TrainingAbort(RuntimeError):
    """Raised when the loss goes non-finite; carries the term dump."""


@dataclass
class TrainConfig:
    epochs: int = 80                  # 70 at full lr + 10 fine-tune
    lr: float = 5e-4
    lr_drop_epoch: int = 70
    lr_drop_factor: float = 0.1
    batch_uniform: int = 1024
    batch_mask: int = 512
    radius_initial: int = 2
    radius_double_every: int = 10
    sched_period: int = 7             # epochs between weight-schedule steps
    w_depth0: float = 0.04
    w_flow0: float = 0.02
    w_svs0: float = 1e-5
    w_svs_max: float = 1e-2
    n_samples: int = 128
    seed: int = 0
    holdout_every: int = 4            # every k-th frame held out; 0 disables
    steps_per_epoch: int = 0          # 0 -> train pixels / batch size
    shard_rays: int = 192
    svs_window: int = 8
    stratified: bool = True
    checkpoint_every: int = 10
    freeze_phi: bool = False          # static baseline: trajectory head stays 0
    warp_attenuation: str = "blended"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_uniform < 1 or self.radius_initial < 1:
            raise ValueError("counts must be positive and radius >= 1")

    @property
    def batch_size(self):
        return self.batch_uniform + self.batch_mask

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# -- schedules -------------------------------------------------------------------

def temporal_radius(epoch, cfg: TrainConfig, T):
    """Sampling radius for t1: doubles every `radius_double_every` epochs,
    capped at the whole sequence."""
    if epoch < 0:
        raise ValueError("epoch must be nonnegative")
    return int(min(cfg.radius_initial * 2 ** (epoch // cfg.radius_double_every),
                   T - 1))


def weight_schedule(epoch, cfg: TrainConfig):
    """Loss weights at a given epoch: depth and flow decay by 10x every
    schedule period, the single-visible-surface weight grows by 10x up to
    its cap, cycle and trajectory weights stay fixed."""
    if epoch < 0:
        raise ValueError("epoch must be nonnegative")
    k = epoch // cfg.sched_period
    return LossWeights(
        cycle=1.0,
        traj=0.1,
        svs=min(cfg.w_svs0 * 10.0 ** k, cfg.w_svs_max),
        depth=cfg.w_depth0 * 0.1 ** k,
        flow=cfg.w_flow0 * 0.1 ** k,
    )


def learning_rate(epoch, cfg: TrainConfig):
    return cfg.lr if epoch < cfg.lr_drop_epoch else cfg.lr * cfg.lr_drop_factor


def split_frames(T, holdout_every):
    """(training frames, held-out frames). Held-out indices are t = 2 mod k,
    keeping both sequence endpoints in the training set."""
    if holdout_every and holdout_every > 1:
        held = [t for t in range(T) if t % holdout_every == 2]
    else:
        held = []
    train = [t for t in range(T) if t not in held]
    return train, held


# -- batch sampling ---------------------------------------------------------------

def sample_batch(ds, epoch, rng, cfg: TrainConfig):
    """Draw (t0, pixels, t1) for one step.

    t0 is uniform over training frames; pixels are `batch_uniform` uniform
    draws plus `batch_mask` draws from the frame's motion mask (uniform
    fallback when the mask is empty); t1 is uniform over the radius window
    around t0, excluding t0 itself.
    """
    train_frames, _ = split_frames(ds.T, cfg.holdout_every)
    t0 = train_frames[rng.integers(len(train_frames))]
    h, w = ds.height, ds.width

    flat = rng.integers(0, h * w, size=cfg.batch_uniform)
    mask = ds.masks[t0] if ds.masks is not None else None
    if cfg.batch_mask > 0:
        if mask is not None and mask.any():
            midx = np.flatnonzero(mask.reshape(-1))
            extra = midx[rng.integers(0, midx.size, size=cfg.batch_mask)]
        else:
            extra = rng.integers(0, h * w, size=cfg.batch_mask)
        flat = np.concatenate([flat, extra])
    pixels = np.stack([flat // w, flat % w], axis=1)

    radius = temporal_radius(epoch, cfg, ds.T)
    lo, hi = max(0, t0 - radius), min(ds.T - 1, t0 + radius)
    candidates = [t for t in range(lo, hi + 1) if t != t0]
    t1 = candidates[rng.integers(len(candidates))]
    return t0, pixels, t1


def assemble_batch(ds, t0, pixels, t1, cfg: TrainConfig, rng, ndc):
    """Gather rays, depth samples, and all ground-truth targets for a step."""
    cam = ds.camera(t0)
    rays = generate_rays(cam, pixels, t0, ndc)
    depths = sample_depths(cfg.n_samples, stratified=cfg.stratified,
                           rng=rng if cfg.stratified else None,
                           n_rays=len(pixels))

    neighbor_dts = [dt for dt in (-1, 1) if 0 <= t0 + dt <= ds.T - 1]
    flow_targets = []
    for dt in neighbor_dts:
        gt = ds.flow_at(t0, dt, pixels)
        if gt is not None:
            flow_targets.append(FlowTarget(dt=dt, cam=ds.camera(t0 + dt), gt=gt))

    return TrainingBatch(
        rays=rays, depths=depths, gt_rgb=ds.rgb_at(t0, pixels), t1=t1,
        neighbor_dts=neighbor_dts, gt_depth_xi=ds.xi_at(t0, pixels),
        flow_targets=flow_targets, svs_window=cfg.svs_window)


def _shard(batch: TrainingBatch, lo, hi):
    sl = slice(lo, hi)
    return TrainingBatch(
        rays=batch.rays.subset(sl), depths=batch.depths[sl],
        gt_rgb=batch.gt_rgb[sl], t1=batch.t1,
        neighbor_dts=batch.neighbor_dts,
        gt_depth_xi=batch.gt_depth_xi[sl] if batch.gt_depth_xi is not None else None,
        flow_targets=[FlowTarget(t.dt, t.cam, t.gt[sl]) for t in batch.flow_targets],
        svs_window=batch.svs_window)


# -- optimizer --------------------------------------------------------------------

@dataclass
class AdamState:
    """Adaptive-moment estimates, one pair of arrays per parameter."""
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_field(cls, net: FieldNet):
        st = cls()
        for name, p in net.named_params():
            st.m[name] = np.zeros_like(p.data)
            st.v[name] = np.zeros_like(p.data)
        return st

    def apply(self, net: FieldNet, lr, skip=()):
        self.step += 1
        c1 = 1.0 - self.beta1 ** self.step
        c2 = 1.0 - self.beta2 ** self.step
        for name, p in net.named_params():
            if name in skip or p.grad is None:
                continue
            g = p.grad
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            mh = self.m[name] / c1
            vh = self.v[name] / c2
            p.data = p.data - lr * mh / (np.sqrt(vh) + self.eps)


# -- one step ---------------------------------------------------------------------

def train_step(net: FieldNet, adam: AdamState, batch: TrainingBatch,
               weights: LossWeights, lr, ndc, cfg: TrainConfig):
    """Forward/backward over ray shards, then one serialized Adam update."""
    net.zero_grad()
    n = len(batch.rays)
    agg = LossBreakdown()
    for lo in range(0, n, cfg.shard_rays):
        hi = min(lo + cfg.shard_rays, n)
        bd, root = total_loss(net, _shard(batch, lo, hi), weights, ndc,
                              attenuation=cfg.warp_attenuation)
        scale = (hi - lo) / n
        dc.mul(root, scale).backward()
        agg.add_scaled(bd, scale)
    if not math.isfinite(agg.total):
        dump = json.dumps({k: v for k, v in agg.to_dict().items()}, indent=1)
        raise TrainingAbort(f"non-finite loss; term dump:\n{dump}")
    skip = net.frozen_phi() if cfg.freeze_phi else ()
    adam.apply(net, lr, skip=skip)
    return agg


# -- checkpointing ------------------------------------------------------------------

def _rng_state_to_json(rng):
    st = rng.bit_generator.state
    return {"state": str(st["state"]["state"]), "inc": str(st["state"]["inc"]),
            "has_uint32": st["has_uint32"], "uinteger": st["uinteger"]}


def _rng_from_json(d):
    rng = np.random.default_rng(np.random.PCG64(0))
    rng.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {"state": int(d["state"]), "inc": int(d["inc"])},
        "has_uint32": d["has_uint32"], "uinteger": d["uinteger"]}
    return rng


def save_checkpoint(path, net: FieldNet, adam: AdamState, cfg: TrainConfig,
                    epoch, global_step, rng):
    """Binary checkpoint: magic, length-prefixed JSON header, then the raw
    little-endian float64 blocks named in the header's array table."""
    blocks = []
    table = []
    offset = 0
    for kind, source in (("param", {n: p.data for n, p in net.named_params()}),
                         ("m", adam.m), ("v", adam.v)):
        for name in (n for n, _ in net.named_params()):
            arr = np.ascontiguousarray(source[name], dtype="<f8")
            table.append({"name": name, "kind": kind,
                          "shape": list(arr.shape), "offset": offset})
            blocks.append(arr.tobytes())
            offset += arr.nbytes
    header = json.dumps({
        "model_cfg": net.cfg.to_dict(),
        "train_cfg": cfg.to_dict(),
        "epoch": epoch,
        "global_step": global_step,
        "adam_step": adam.step,
        "rng": _rng_state_to_json(rng),
        "arrays": table,
    }, sort_keys=True).encode()
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for b in blocks:
            f.write(b)
    os.replace(tmp, path)


def load_checkpoint(path, expect_model_cfg: ModelConfig = None):
    """Returns (net, adam, train_cfg, epoch, global_step, rng).

    Rejects unknown formats, truncated files, and (when expect_model_cfg
    is given) checkpoints whose architecture disagrees, naming the
    offending shape.
    """
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a trajfield checkpoint (bad magic)")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode())
        data = f.read()

    model_cfg = ModelConfig.from_dict(header["model_cfg"])
    if expect_model_cfg is not None and expect_model_cfg != model_cfg:
        for k in expect_model_cfg.to_dict():
            a, b = getattr(expect_model_cfg, k), getattr(model_cfg, k)
            if a != b:
                raise ValueError(
                    f"{path}: checkpoint {k}={b} does not match requested {k}={a}")
    net = FieldNet(model_cfg)
    adam = AdamState.for_field(net)
    adam.step = header["adam_step"]

    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + count * 8
        if end > len(data):
            raise ValueError(f"{path}: truncated checkpoint "
                             f"(array {entry['name']} overruns file)")
        arr = np.frombuffer(data[start:end], dtype="<f8").reshape(shape).copy()
        name, kind = entry["name"], entry["kind"]
        if name not in net.params:
            raise ValueError(f"{path}: unknown parameter {name!r}")
        if kind == "param":
            if net.params[name].data.shape != arr.shape:
                raise ValueError(
                    f"{path}: shape mismatch for {name}: checkpoint "
                    f"{arr.shape} vs model {net.params[name].data.shape}")
            net.params[name].data = arr
        elif kind == "m":
            adam.m[name] = arr
        elif kind == "v":
            adam.v[name] = arr
        else:
            raise ValueError(f"{path}: unknown array kind {kind!r}")

    rng = _rng_from_json(header["rng"])
    cfg = TrainConfig.from_dict(header["train_cfg"])
    return net, adam, cfg, header["epoch"], header["global_step"], rng


# -- the loop ----------------------------------------------------------------------

def default_steps_per_epoch(ds, cfg: TrainConfig):
    train_frames, _ = split_frames(ds.T, cfg.holdout_every)
    return max(1, math.ceil(len(train_frames) * ds.height * ds.width / cfg.batch_size))


def make_model_config(ds, cfg: TrainConfig, **overrides):
    kw = dict(T=ds.T, K=default_num_coeffs(ds.T), init_seed=cfg.seed)
    kw.update(overrides)
    return ModelConfig(**kw)


def run_training(ds, cfg: TrainConfig, model_cfg: ModelConfig = None,
                 out_dir=None, resume=None, log_file=None, on_epoch=None):
    """Train on a dataset; returns (net, adam, global_step).

    Writes `epoch_%03d.ckpt` every `checkpoint_every` epochs plus
    `final.ckpt`, and appends one JSON line per step to the training log.
    `resume` restores everything (parameters, moments, rng) from a
    checkpoint and continues; the result is bit-identical to the
    uninterrupted run.
    """
    ndc = ds.ndc()
    if resume:
        net, adam, cfg, start_epoch, global_step, rng = load_checkpoint(
            resume, expect_model_cfg=model_cfg)
    else:
        if model_cfg is None:
            model_cfg = make_model_config(ds, cfg)
        if model_cfg.T != ds.T:
            raise ValueError(f"model T={model_cfg.T} != dataset T={ds.T}")
        net = FieldNet(model_cfg)
        adam = AdamState.for_field(net)
        start_epoch, global_step = 0, 0
        rng = np.random.default_rng(np.random.PCG64(cfg.seed))

    steps = cfg.steps_per_epoch or default_steps_per_epoch(ds, cfg)
    logf = open(log_file, "a") if log_file else None
    try:
        for epoch in range(start_epoch, cfg.epochs):
            weights = weight_schedule(epoch, cfg)
            lr = learning_rate(epoch, cfg)
            radius = temporal_radius(epoch, cfg, ds.T)
            for _ in range(steps):
                t0, pixels, t1 = sample_batch(ds, epoch, rng, cfg)
                batch = assemble_batch(ds, t0, pixels, t1, cfg, rng, ndc)
                bd = train_step(net, adam, batch, weights, lr, ndc, cfg)
                global_step += 1
                if logf:
                    rec = {"epoch": epoch, "step": global_step,
                           "t0": t0, "t1": t1, "lr": lr, "radius": radius,
                           "weights": weights.to_dict()}
                    rec.update(bd.to_dict())
                    logf.write(json.dumps(rec, sort_keys=True) + "\n")
            if logf:
                logf.flush()
            if out_dir and cfg.checkpoint_every and \
                    (epoch + 1) % cfg.checkpoint_every == 0 and epoch + 1 < cfg.epochs:
                save_checkpoint(os.path.join(out_dir, f"epoch_{epoch + 1:03d}.ckpt"),
                                net, adam, cfg, epoch + 1, global_step, rng)
            if on_epoch:
                on_epoch(epoch, net)
        if out_dir:
            save_checkpoint(os.path.join(out_dir, "final.ckpt"),
                            net, adam, cfg, cfg.epochs, global_step, rng)
    finally:
        if logf:
            logf.close()
    return net, adam, global_step
