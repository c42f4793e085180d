"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

# |analytic - numeric| / max(|analytic|, |numeric|, DENOM_FLOOR); the floor
# keeps round-off on near-zero coordinates (~1e-13 for h=1e-3) from reading
# as a large relative error
DENOM_FLOOR = 1e-6


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_err: float
    max_abs_err: float
    n_checked: int
    worst: tuple[int, int]  # (array index, flat coordinate)

    def ok(self, tol: float) -> bool:
        return self.max_rel_err < tol


def finite_diff_check(loss_fn: Callable[[], float], arrays: Sequence[np.ndarray],
                      analytic: Sequence[np.ndarray], h: float = 1e-3,
                      max_coords: int | None = None, seed: int = 0) -> GradCheckReport:
    """Compare ``analytic`` gradients of ``loss_fn`` w.r.t. ``arrays`` against central differences.

    ``loss_fn`` must read the arrays in place (they are perturbed and restored).
    When an array has more than ``max_coords`` entries a random subset of
    that size is probed.
    """
    rng = np.random.default_rng(seed)
    worst_rel, worst_abs, count, worst = 0.0, 0.0, 0, (-1, -1)
    for ai, (arr, grad) in enumerate(zip(arrays, analytic)):
        if arr.dtype != np.float64:
            raise TypeError("finite-difference checks run at float64")
        flat = arr.reshape(-1)
        gflat = np.asarray(grad).reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        for i in coords:
            old = flat[i]
            flat[i] = old + h
            fp = loss_fn()
            flat[i] = old - h
            fm = loss_fn()
            flat[i] = old
            num = (fp - fm) / (2 * h)
            a = float(gflat[i])
            err = abs(a - num)
            rel = err / max(abs(a), abs(num), DENOM_FLOOR)
            count += 1
            worst_abs = max(worst_abs, err)
            if rel > worst_rel:
                worst_rel, worst = rel, (ai, int(i))
    return GradCheckReport(worst_rel, worst_abs, count, worst)
