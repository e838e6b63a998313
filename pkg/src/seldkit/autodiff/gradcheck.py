"""Central finite-difference checks against backprop gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-wise relative error ||a - b|| / max(||a||, ||b||)."""
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def numeric_grad(fn: Callable[[], Tensor], x: Tensor, h: float = 1e-5, indices=None) -> np.ndarray:
    """Central differences of the scalar ``fn()`` w.r.t. entries of ``x``.

    Only ``indices`` (flat) are perturbed when given; the result is returned
    for those entries in order.
    """
    flat = x.data.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    out = []
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        fp = float(fn().data.sum())
        flat[i] = orig - h
        fm = float(fn().data.sum())
        flat[i] = orig
        out.append((fp - fm) / (2 * h))
    return np.array(out)


def check_gradients(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-5,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
    zero_tol: float = 1e-6,
) -> float:
    """Return the worst relative error between backprop and finite differences.

    ``fn`` must rebuild the graph from ``inputs`` on every call and return a
    scalar (or a tensor whose sum is taken). ``max_entries`` samples that many
    random coordinates per input instead of checking them all. An input whose
    analytic and numeric gradients both have norm below ``zero_tol`` has an
    identically vanishing gradient (e.g. a bias feeding a softmax or batch
    norm); relative error is undefined there, so the absolute error counts.
    """
    for x in inputs:
        x.grad = None
    out = fn()
    out.backward(np.ones_like(out.data))
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for x in inputs:
        analytic = np.zeros_like(x.data) if x.grad is None else x.grad
        n = x.data.size
        if max_entries is not None and n > max_entries:
            idx = np.sort(rng.choice(n, size=max_entries, replace=False))
        else:
            idx = np.arange(n)
        numeric = numeric_grad(fn, x, h, idx)
        a = analytic.reshape(-1)[idx]
        if max(np.linalg.norm(a), np.linalg.norm(numeric)) < zero_tol:
            err = float(np.linalg.norm(a - numeric))
        else:
            err = relative_error(a, numeric)
        worst = max(worst, err)
    return worst
