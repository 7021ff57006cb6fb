"""Image quality metrics on unit-range float images."""

import math

import numpy as np

_SSIM_C1 = 0.01 ** 2
_SSIM_C2 = 0.03 ** 2
_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5

# Rec. 601 luma weights.
_LUMA = np.array([0.299, 0.587, 0.114])


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, mask=None):
    """Peak signal-to-noise ratio in dB; +inf for identical images.

    With a boolean mask, the error is averaged over masked pixels only.
    """
    a, b = _check_pair(a, b)
    err = (a - b) ** 2
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            return math.inf
        err = err[mask]
    mse = float(err.mean())
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _luma(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[-1] == 3:
        return img @ _LUMA
    return img


def _gaussian_kernel():
    half = _SSIM_WINDOW // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / _SSIM_SIGMA) ** 2)
    return k / k.sum()


def _filter2_valid(img, k):
    """Separable valid-mode correlation with the 1-D kernel k."""
    n = k.size
    vert = np.lib.stride_tricks.sliding_window_view(img, n, axis=0) @ k
    return np.lib.stride_tricks.sliding_window_view(vert, n, axis=1) @ k


def ssim(a, b, mask=None, return_map=False):
    """Structural similarity on unit-range luma, 11x11 Gaussian window
    (sigma 1.5), valid-mode. With a mask, averages the SSIM map over the
    windows centered on masked pixels; returns None for an empty mask.
    """
    a, b = _check_pair(a, b)
    x, y = _luma(a), _luma(b)
    if min(x.shape[:2]) < _SSIM_WINDOW:
        raise ValueError("image smaller than the SSIM window")
    k = _gaussian_kernel()
    mu_x = _filter2_valid(x, k)
    mu_y = _filter2_valid(y, k)
    xx = _filter2_valid(x * x, k) - mu_x ** 2
    yy = _filter2_valid(y * y, k) - mu_y ** 2
    xy = _filter2_valid(x * y, k) - mu_x * mu_y
    num = (2 * mu_x * mu_y + _SSIM_C1) * (2 * xy + _SSIM_C2)
    den = (mu_x ** 2 + mu_y ** 2 + _SSIM_C1) * (xx + yy + _SSIM_C2)
    smap = num / den
    if return_map:
        return smap
    if mask is not None:
        half = _SSIM_WINDOW // 2
        m = np.asarray(mask, dtype=bool)[half:-half, half:-half]
        if not m.any():
            return None
        return float(smap[m].mean())
    return float(smap.mean())
