"""Finite-difference gradient checking for scalar-valued Tensor functions."""

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import DiffcoreError, Tensor


@dataclass
class GradCheckReport:
    """Per-input max relative error between analytic and numeric gradients."""
    max_rel_err: list = field(default_factory=list)
    tolerance: float = 0.0
    passed: bool = False

    @property
    def worst(self):
        return max(self.max_rel_err) if self.max_rel_err else 0.0

    def __str__(self):
        verdict = "PASS" if self.passed else "FAIL"
        return (f"gradient_check {verdict}: worst rel err {self.worst:.3e} "
                f"(tolerance {self.tolerance:.1e})")


def _rel_err(a, n, floor):
    scale = np.maximum(np.abs(a), np.abs(n))
    return np.where(scale > floor, np.abs(a - n) / np.maximum(scale, floor),
                    np.abs(a - n))


def gradient_check(f, inputs, step=1e-5, tolerance=1e-5, floor=1e-6):
    """Compare analytic gradients of f against central finite differences.

    f takes the list of Tensors and returns a scalar Tensor; it must be
    deterministic. Errors below `floor` in gradient magnitude are measured
    absolutely instead of relatively (central differences carry ~1e-11
    absolute noise at the default step, so tiny true gradients would
    otherwise drown in it).
    """
    inputs = list(inputs)
    for t in inputs:
        if not isinstance(t, Tensor):
            raise DiffcoreError("gradient_check inputs must be Tensors")
        if not np.all(np.isfinite(t.data)):
            raise DiffcoreError("gradient_check inputs must be finite")
        t.requires_grad = True
        t.grad = None

    out = f(inputs)
    if out.size != 1:
        raise DiffcoreError("gradient_check target must be scalar-valued")
    if not math.isfinite(out.item()):
        raise DiffcoreError("gradient_check: function returned non-finite value")
    out.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
                for t in inputs]

    report = GradCheckReport(tolerance=tolerance)
    for which, t in enumerate(inputs):
        flat = t.data.reshape(-1)
        num = np.zeros_like(flat)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            hi = f(inputs).item()
            flat[i] = keep - step
            lo = f(inputs).item()
            flat[i] = keep
            if not (math.isfinite(hi) and math.isfinite(lo)):
                raise DiffcoreError("gradient_check: non-finite perturbed value")
            num[i] = (hi - lo) / (2.0 * step)
        err = _rel_err(analytic[which].reshape(-1), num, floor)
        report.max_rel_err.append(float(err.max()) if err.size else 0.0)

    report.passed = report.worst < tolerance
    return report
