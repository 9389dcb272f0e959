"""Central finite-difference gradient checks."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """max |a - n| / max(|a|_inf, |n|_inf, floor)."""
    diff = np.max(np.abs(analytic - numeric)) if analytic.size else 0.0
    scale = max(np.max(np.abs(analytic), initial=0.0), np.max(np.abs(numeric), initial=0.0), floor)
    return float(diff / scale)


def numeric_grad(f: Callable[[], float], x: Tensor, h: float = 1e-5,
                 indices: Sequence[tuple] | None = None) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. entries of ``x`` (all, or ``indices``)."""
    out = np.zeros_like(x.data)
    idxs = list(np.ndindex(x.shape)) if indices is None else indices
    for idx in idxs:
        orig = x.data[idx]
        x.data[idx] = orig + h
        fp = f()
        x.data[idx] = orig - h
        fm = f()
        x.data[idx] = orig
        out[idx] = (fp - fm) / (2 * h)
    return out


def check_gradients(f: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5,
                    max_entries: int | None = None, rng: np.random.Generator | None = None
                    ) -> dict[int, float]:
    """Compare tape gradients of scalar ``f()`` with central differences.

    Returns the relative error per input position. With ``max_entries``,
    a random subset of coordinates per input is probed.
    """
    for x in inputs:
        x.grad = None
    out = f()
    out.backward()
    analytic = [np.zeros_like(x.data) if x.grad is None else x.grad.copy() for x in inputs]
    errs = {}
    for i, x in enumerate(inputs):
        if max_entries is not None and x.size > max_entries:
            rng = rng or np.random.default_rng(0)
            flat = rng.choice(x.size, size=max_entries, replace=False)
            idxs = [np.unravel_index(k, x.shape) for k in flat]
        else:
            idxs = list(np.ndindex(x.shape))
        num = numeric_grad(lambda: f().item(), x, h, idxs)
        sel = tuple(np.array(ix) for ix in zip(*idxs)) if idxs and x.ndim else ()
        if x.ndim == 0:
            errs[i] = rel_error(analytic[i], num)
        else:
            errs[i] = rel_error(analytic[i][sel], num[sel])
    return errs
