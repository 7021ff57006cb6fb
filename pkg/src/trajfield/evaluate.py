"""Held-out evaluation, full-frame rendering at arbitrary times, and
trajectory export."""

import math

import numpy as np
from PIL import Image

from . import metrics
from .renderer import (generate_rays, render_frame, render_warped,
                       sample_depths)
from .trainer import split_frames
from .trajectory import TrajectoryCoeffs, idct_eval


def write_image(path, img):
    """Save a unit-range float image as 8-bit PNG, or ASCII PPM (P3) when
    the path ends in .ppm. Quantization is clamp(round(255 * v))."""
    arr = np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    path = str(path)
    if path.endswith(".ppm"):
        h, w = arr.shape[:2]
        with open(path, "w") as f:
            f.write(f"P3\n{w} {h}\n255\n")
            for row in arr.reshape(h, w * 3):
                f.write(" ".join(str(v) for v in row) + "\n")
    else:
        Image.fromarray(arr).save(path)


def render_image_at(net, cam, t, ndc, n_samples=128, t_query=None,
                    extrapolate=False, chunk=1024):
    """Full-frame render at real time t.

    Inside [0, T-1] this is a plain frame render (with an optional
    distinct radiance time). Outside, geometry is obtained by warping the
    nearest observed frame along the predicted trajectories, and radiance
    times are clamped; this requires extrapolate=True.
    """
    T = net.cfg.T
    net = net.detached()
    in_range = 0.0 <= t <= T - 1
    if not in_range and not extrapolate:
        raise ValueError(f"time {t} outside [0, {T - 1}]; pass extrapolate")
    t_base = min(max(t, 0.0), float(T - 1))
    tq = t_base if t_query is None else min(max(t_query, 0.0), float(T - 1))

    rows, cols = np.mgrid[0:cam.height, 0:cam.width]
    pixels = np.stack([rows.ravel(), cols.ravel()], axis=1)
    depths = sample_depths(n_samples)
    out = np.empty((pixels.shape[0], 3))
    for lo in range(0, pixels.shape[0], chunk):
        rays = generate_rays(cam, pixels[lo:lo + chunk], t_base, ndc)
        if in_range:
            res = render_frame(net, rays, depths, t_query=tq)
        else:
            res = render_warped(net, rays, t, depths, t_query=tq)
        out[lo:lo + chunk] = res.comp.rgb.data
    return out.reshape(cam.height, cam.width, 3)


def evaluate_dataset(net, ds, frames=None, n_samples=None, chunk=1024):
    """Render the given frames (default: the held-out split) at their own
    poses and times, and report PSNR/SSIM for the full frame and for the
    motion-mask region. Returns a JSON-ready dict."""
    if frames is None:
        _, frames = split_frames(ds.T, 4)
    if n_samples is None:
        n_samples = 128
    ndc = ds.ndc()
    per_frame = []
    for t in frames:
        img = render_image_at(net, ds.camera(t), float(t), ndc,
                              n_samples=n_samples, chunk=chunk)
        gt = ds.image_f64(t)
        mask = ds.masks[t] if ds.masks is not None else None
        entry = {
            "frame": int(t),
            "psnr": metrics.psnr(img, gt),
            "ssim": metrics.ssim(img, gt),
            "psnr_dynamic": metrics.psnr(img, gt, mask=mask)
            if mask is not None and mask.any() else None,
            "ssim_dynamic": metrics.ssim(img, gt, mask=mask)
            if mask is not None and mask.any() else None,
        }
        per_frame.append(entry)

    def agg(key):
        vals = [e[key] for e in per_frame if e[key] is not None
                and math.isfinite(e[key])]
        return float(np.mean(vals)) if vals else None

    return {
        "frames": per_frame,
        "aggregate": {k: agg(k) for k in
                      ("psnr", "ssim", "psnr_dynamic", "ssim_dynamic")},
    }


def export_trajectories(net, ds, t0=0, pixels=None, grid=8, mask_only=False,
                        n_samples=None):
    """Sequence-long tracks for a set of pixels, queried only at time t0.

    Each ray is collapsed to its expected-depth point and its
    quadrature-weighted trajectory coefficients; the track follows the
    cosine basis through every frame. Positions are reported in world
    (Euclidean) coordinates; coefficients stay in the NDC frame they are
    predicted in. Returns the trajectory-export document as a dict.
    """
    if n_samples is None:
        n_samples = 128
    T, K = net.cfg.T, net.cfg.K
    ndc = ds.ndc()
    net = net.detached()
    if pixels is None:
        if mask_only and ds.masks is not None and ds.masks[t0].any():
            rows, cols = np.nonzero(ds.masks[t0])
            keep = np.arange(0, rows.size, max(1, rows.size // 256))
            pixels = np.stack([rows[keep], cols[keep]], axis=1)
        else:
            rr, cc = np.mgrid[grid // 2:ds.height:grid, grid // 2:ds.width:grid]
            pixels = np.stack([rr.ravel(), cc.ravel()], axis=1)
    pixels = np.asarray(pixels).reshape(-1, 2)

    doc = {"T": T, "K": K, "points": []}
    if pixels.shape[0] == 0:
        return doc

    rays = generate_rays(ds.camera(t0), pixels, t0, ndc)
    depths = sample_depths(n_samples)
    base = render_frame(net, rays, depths)
    r, n = base.depths.shape
    w = base.comp.weights.data                          # (R, N)
    phi = base.phi.data.reshape(r, n, 3 * K)
    phi_bar = np.einsum("rn,rnk->rk", w, phi)           # (R, 3K)
    xi = base.comp.depth.data                           # (R,)
    p_ndc = rays.origins + xi[:, None] * rays.dirs

    times = np.arange(T, dtype=np.float64)
    for i in range(r):
        coeffs = TrajectoryCoeffs(coeffs=phi_bar[i].reshape(3, K), T=T)
        track_ndc = p_ndc[i] + idct_eval(coeffs, times) - idct_eval(coeffs, float(t0))
        track_w = ndc.ndc_to_world(track_ndc)
        doc["points"].append({
            "pixel": [int(pixels[i, 0]), int(pixels[i, 1])],
            "p0": ndc.ndc_to_world(p_ndc[i]).tolist(),
            "t0": float(t0),
            "coeffs": coeffs.coeffs.tolist(),
            "track": track_w.tolist(),
        })
    return doc
