"""Central finite-difference checks for the autodiff engine."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor

STEP = 1e-4


def numeric_grad(f: Callable[[], float], x: np.ndarray, step: float = STEP) -> np.ndarray:
    """d f / d x by central differences; ``x`` is perturbed in place and restored."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + step
        fp = f()
        x[i] = old - step
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * step)
    return g


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """max |a - b| / max(|a|, |b|, 1e-6) over all entries, scaled globally."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-6)
    return float(np.abs(a - b).max(initial=0.0) / scale)


def check_grad(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    step: float = STEP,
    seed_weights: np.ndarray | None = None,
) -> float:
    """Worst relative error between autodiff and finite differences.

    A fixed random projection of a non-scalar output reduces it to a scalar so
    every output coordinate contributes.
    """
    out = fn(*inputs)
    if seed_weights is None:
        seed_weights = np.random.default_rng(1234).standard_normal(out.shape)
    w = Tensor(np.asarray(seed_weights).reshape(out.shape))

    def scalar() -> Tensor:
        return T.reduce_sum(T.mul(fn(*inputs), w))

    analytic = T.grad(scalar(), list(inputs))
    worst = 0.0
    for t, g in zip(inputs, analytic):

        # grad mode stays on: nested cases differentiate inside ``fn``
        def f() -> float:
            return scalar().item()

        num = numeric_grad(f, t.data, step)
        worst = max(worst, rel_error(g.data, num))
    return worst
