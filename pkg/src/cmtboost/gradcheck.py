"""Central-difference gradient oracle."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad


def relative_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


def numeric_grad(f: Callable[[], Tensor], t: Tensor, h: float = 1e-5,
                 entries: Optional[np.ndarray] = None) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. the flat entries of ``t``."""
    flat = t.data.reshape(-1)
    if entries is None:
        entries = np.arange(flat.size)
    out = np.empty(len(entries), dtype=np.float64)
    with no_grad():
        for j, i in enumerate(entries):
            orig = flat[i]
            flat[i] = orig + h
            fp = f().item()
            flat[i] = orig - h
            fm = f().item()
            flat[i] = orig
            out[j] = (fp - fm) / (2 * h)
    return out


def gradcheck(f: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5,
              max_entries: Optional[int] = None, seed: int = 0) -> float:
    """Return the worst relative error between backward() and central differences.

    ``f`` takes no arguments and closes over ``inputs``; it must return a
    scalar tensor. Inputs should be 64-bit. When ``max_entries`` is set,
    only that many randomly chosen entries of each input are perturbed.
    """
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    loss = f()
    backward(loss)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in inputs:
        analytic = np.zeros(t.size) if t.grad is None else t.grad.reshape(-1).astype(np.float64)
        entries = np.arange(t.size)
        if max_entries is not None and t.size > max_entries:
            entries = np.sort(rng.choice(t.size, size=max_entries, replace=False))
        numeric = numeric_grad(f, t, h, entries)
        err = relative_error(analytic[entries], numeric)
        if err.size:
            worst = max(worst, float(err.max()))
    return worst
