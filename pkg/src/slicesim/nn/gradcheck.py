"""Finite-difference gradient verification.

The oracle is central differences on the same scalar function; it never
touches the autodiff tape, so it independently validates every backward
rule.  Errors are relative with an absolute floor of 1, i.e.
``|ad - fd| / max(1, |ad|, |fd|)``.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor
from .optim import zero_grads

__all__ = ["grad_check"]


def grad_check(
    fn: Callable[[], Tensor],
    wrt: Sequence[Tensor],
    eps: float = 1e-5,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between autodiff and central differences.

    ``fn`` evaluates the scalar loss from current tensor contents; ``wrt``
    lists the tensors to check.  ``max_entries`` samples that many
    coordinates per tensor (seeded) instead of sweeping all of them.
    """
    zero_grads([("", t) for t in wrt])
    loss = fn()
    loss.backward()
    grads = []
    for t in wrt:
        if t.grad is None:
            grads.append(np.zeros_like(t.data))
        else:
            grads.append(t.grad.copy())

    worst = 0.0
    for t, g in zip(wrt, grads):
        flat = t.data.reshape(-1)
        n = flat.size
        if max_entries is not None and n > max_entries:
            if rng is None:
                rng = np.random.default_rng(0)
            coords = rng.choice(n, size=max_entries, replace=False)
        else:
            coords = range(n)
        gflat = g.reshape(-1)
        for i in coords:
            original = flat[i]
            flat[i] = original + eps
            hi = float(fn().data)
            flat[i] = original - eps
            lo = float(fn().data)
            flat[i] = original
            fd = (hi - lo) / (2.0 * eps)
            ad = gflat[i]
            err = abs(ad - fd) / max(1.0, abs(ad), abs(fd))
            worst = max(worst, err)
    return worst
