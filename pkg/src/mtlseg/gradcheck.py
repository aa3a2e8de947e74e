"""Finite-difference gradient verification.

Central differences per coordinate against the reverse-mode gradient.
Runs in 64-bit only: the 32-bit path cannot resolve the difference
quotient below the tolerances the rest of the suite asserts.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NumericError
from .tensor import Tensor


def relative_error(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-6,
    max_coords_per_param: int | None = None,
    seed: int = 0,
    retry_threshold: float = 1e-6,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must be a deterministic closure over ``params`` returning a scalar
    Tensor. When a parameter has more coordinates than
    ``max_coords_per_param``, a seeded subsample of coordinates is probed;
    the analytic gradient is still produced by one full backward pass.

    The difference quotient trades truncation error (grows with the step)
    against evaluation noise (shrinks with it), and no single step suits
    both curved and flat directions. A coordinate whose first estimate
    disagrees beyond ``retry_threshold`` is re-probed at 10x and 100x the
    step and the best estimate kept.
    """
    params = list(params)
    for p in params:
        if p.dtype != np.float64:
            raise NumericError("grad_check requires float64 parameters")

    for p in params:
        p.zero_grad()
    out = f()
    if out.size != 1:
        raise NumericError("grad_check target must be scalar")
    if not np.isfinite(out.data).all():
        raise NumericError("grad_check target is non-finite")
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    def quotient(flat, i, step) -> float:
        orig = flat[i]
        flat[i] = orig + step
        f_plus = float(f().data)
        flat[i] = orig - step
        f_minus = float(f().data)
        flat[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericError("non-finite value during finite differencing")
        return (f_plus - f_minus) / (2.0 * step)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        n = flat.shape[0]
        if max_coords_per_param is not None and n > max_coords_per_param:
            coords = rng.choice(n, size=max_coords_per_param, replace=False)
        else:
            coords = range(n)
        gflat = ga.reshape(-1)
        for i in coords:
            err = relative_error(float(gflat[i]), quotient(flat, i, eps))
            for scale in (10.0, 100.0):
                if err <= retry_threshold:
                    break
                err = min(err, relative_error(float(gflat[i]), quotient(flat, i, eps * scale)))
            worst = max(worst, err)
    return worst
