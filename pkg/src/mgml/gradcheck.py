"""Central finite-difference gradient checks."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    checked: int

    def ok(self, tol: float) -> bool:
        return self.max_rel_error < tol


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``||a - n|| / max(||a||, ||n||)`` over the checked coordinates (0 if both vanish)."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)


def _pick(analytic: np.ndarray, max_coords: int | None, rng: np.random.Generator) -> np.ndarray:
    size = analytic.size
    if max_coords is None or size <= max_coords:
        return np.arange(size)
    # always include the largest-magnitude entry, fill the rest at random
    top = int(np.argmax(np.abs(analytic.ravel())))
    rest = rng.choice(size, size=max_coords, replace=False)
    return np.unique(np.concatenate([[top], rest]))


def check_gradients(
    loss_fn: Callable[[], Tensor],
    tensors: Sequence[tuple[str, Tensor]],
    eps: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
) -> list[GradCheckResult]:
    """Compare backprop gradients of ``loss_fn()`` against central differences.

    ``loss_fn`` must rebuild the forward pass from the current contents of the
    given leaf tensors and return a scalar tensor. At most ``max_coords``
    coordinates (plus the largest analytic entry) are probed per tensor.
    """
    for _, t in tensors:
        t.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {name: (np.zeros_like(t.data) if t.grad is None else t.grad.copy()) for name, t in tensors}

    rng = np.random.default_rng(seed)
    results = []
    for name, t in tensors:
        g = analytic[name]
        coords = _pick(g, max_coords, rng)
        numeric = np.empty(coords.size)
        flat = t.data.reshape(-1)
        for j, idx in enumerate(coords):
            orig = flat[idx]
            flat[idx] = orig + eps
            up = loss_fn().data.item()
            flat[idx] = orig - eps
            down = loss_fn().data.item()
            flat[idx] = orig
            numeric[j] = (up - down) / (2 * eps)
        results.append(GradCheckResult(name, relative_error(g.ravel()[coords], numeric), coords.size))
    for _, t in tensors:
        t.grad = None
    return results
