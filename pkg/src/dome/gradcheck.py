"""Central finite-difference gradient checking."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, backward


def numeric_grad(f, t: Tensor, step: float = 1e-6, max_entries: int | None = None,
                 rng: np.random.Generator | None = None):
    """Central differences of scalar ``f()`` w.r.t. ``t.data``.

    With ``max_entries`` only a random subset of coordinates is probed; the
    rest are returned as NaN.
    """
    grad = np.full(t.data.shape, np.nan)
    flat = t.data.reshape(-1)
    coords = np.arange(flat.size)
    if max_entries is not None and flat.size > max_entries:
        coords = (rng or np.random.default_rng(0)).choice(flat.size, max_entries, replace=False)
    gflat = grad.reshape(-1)
    for i in coords:
        orig = flat[i]
        flat[i] = orig + step
        hi = float(f().data)
        flat[i] = orig - step
        lo = float(f().data)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * step)
    return grad


def relative_error(analytic, numeric) -> float:
    """``||a - n|| / max(||a|| + ||n||, 1e-12)`` over the probed (non-NaN) coordinates."""
    sel = ~np.isnan(numeric)
    a, n = analytic[sel], numeric[sel]
    denom = max(np.linalg.norm(a) + np.linalg.norm(n), 1e-12)
    return float(np.linalg.norm(a - n) / denom)


def check_gradients(f, tensors: dict, step: float = 1e-6, max_entries: int | None = None,
                    seed: int = 0) -> dict[str, float]:
    """Relative error of backprop vs finite differences for every named tensor."""
    for t in tensors.values():
        t.grad = None
    loss = f()
    backward(loss)
    analytic = {name: (t.grad if t.grad is not None else np.zeros_like(t.data))
                for name, t in tensors.items()}
    rng = np.random.default_rng(seed)
    errors = {}
    for name, t in tensors.items():
        num = numeric_grad(f, t, step, max_entries, rng)
        errors[name] = relative_error(analytic[name], num)
    return errors
