"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    n_checked: int
    tol: float
    worst: tuple[int, int] | None = None  # (input index, flat coordinate)
    analytic: np.ndarray = field(default=None, repr=False)
    numeric: np.ndarray = field(default=None, repr=False)

    def __str__(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"{verdict} max_rel_err={self.max_rel_err:.3e} tol={self.tol:g} coords={self.n_checked}"


def gradient_check(
    f: Callable[..., Tensor],
    inputs: Tensor | Sequence[Tensor],
    eps: float | None = None,
    tol: float = 1e-3,
    n_samples: int | None = None,
    seed: int = 0,
    floor_frac: float = 1e-3,
    numeric_dtype=np.float64,
) -> GradCheckReport:
    """Compare backward() gradients of ``f(*inputs)`` with central differences.

    ``eps`` defaults to 1e-3 when any input is float32 and 1e-6 otherwise.
    Analytic gradients are taken at the inputs' own precision.  The numeric
    side re-evaluates ``f`` with the inputs promoted to ``numeric_dtype``.
    Relative error per coordinate is ``|a - n| / max(|a|, |n|, floor)`` with
    ``floor = floor_frac * max|n|`` over the checked coordinates, so
    coordinates whose gradient is negligible next to the largest one are
    judged on an absolute scale.  Non-finite values count as failure.
    """
    xs = [inputs] if isinstance(inputs, Tensor) else list(inputs)
    if eps is None:
        eps = 1e-3 if any(x.dtype == np.float32 for x in xs) else 1e-6
    if eps <= 0:
        raise ValueError("eps must be positive")
    flags = [x.requires_grad for x in xs]
    saved_grads = [x.grad for x in xs]
    for x in xs:
        x.requires_grad = True
        x.grad = None
    try:
        y = f(*xs)
        backward(y)
        grads = [np.zeros(x.shape, x.dtype) if x.grad is None else np.array(x.grad) for x in xs]
    finally:
        for x, flag, g in zip(xs, flags, saved_grads):
            x.requires_grad = flag
            x.grad = g

    sizes = [x.size for x in xs]
    total = int(np.sum(sizes))
    if n_samples is None or n_samples >= total:
        flat = np.arange(total)
    else:
        flat = np.sort(np.random.default_rng(seed).choice(total, size=n_samples, replace=False))
    offsets = np.cumsum([0] + sizes)
    coords = [(int(np.searchsorted(offsets, c, side="right") - 1), 0) for c in flat]
    coords = [(i, int(c - offsets[i])) for (i, _), c in zip(coords, flat)]

    originals = [x.data for x in xs]
    promoted = [x.data.astype(numeric_dtype) for x in xs]
    numeric = np.empty(len(coords))
    analytic = np.empty(len(coords))
    try:
        for x, p in zip(xs, promoted):
            x.data = p
        with no_grad():
            for m, (i, c) in enumerate(coords):
                view = promoted[i].reshape(-1)
                base = view[c]
                view[c] = base + eps
                fp = float(np.asarray(f(*xs).data, dtype=np.float64).reshape(-1)[0])
                view[c] = base - eps
                fm = float(np.asarray(f(*xs).data, dtype=np.float64).reshape(-1)[0])
                view[c] = base
                numeric[m] = (fp - fm) / (2 * eps)
                analytic[m] = float(grads[i].reshape(-1)[c])
    finally:
        for x, o in zip(xs, originals):
            x.data = o

    if not (np.all(np.isfinite(numeric)) and np.all(np.isfinite(analytic))):
        return GradCheckReport(float("inf"), False, len(coords), tol, None, analytic, numeric)
    floor = max(floor_frac * float(np.max(np.abs(numeric))) if len(coords) else 0.0, 1e-300)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    rel = np.abs(analytic - numeric) / denom
    k = int(np.argmax(rel)) if len(rel) else 0
    max_rel = float(rel[k]) if len(rel) else 0.0
    return GradCheckReport(max_rel, max_rel <= tol, len(coords), tol, coords[k] if len(rel) else None,
                           analytic, numeric)
