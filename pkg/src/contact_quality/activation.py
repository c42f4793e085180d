"""Activation grids: per-bin surface membership states at one or more resolutions.

A bin holds state 0 when empty, 1 when only side-a points fall in it, 2 for
side-b only and 3 when both sides are present.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import GeometryError
from .geometry import Aabb, SurfacePair, union_aabb

EMPTY, SIDE_A, SIDE_B, OVERLAP = 0, 1, 2, 3
N_STATES = 4
PAD_REL = 1e-6
PAD_ABS = 1e-6


@dataclass(frozen=True)
class ActivationGrid:
    resolution: int
    states: np.ndarray  # (R, R, R) uint8, axis order x, y, z
    bounds: Aabb

    def __post_init__(self):
        r = int(self.resolution)
        s = np.asarray(self.states, dtype=np.uint8)
        if s.shape != (r, r, r):
            raise GeometryError(f"states shape {s.shape} does not match resolution {r}")
        if s.size and s.max() > OVERLAP:
            raise GeometryError("activation states must lie in {0,1,2,3}")
        s = s.copy()
        s.setflags(write=False)
        object.__setattr__(self, "states", s)
        object.__setattr__(self, "resolution", r)

    def __eq__(self, other):
        if not isinstance(other, ActivationGrid):
            return NotImplemented
        return self.resolution == other.resolution and np.array_equal(self.states, other.states)

    __hash__ = None


@dataclass(frozen=True)
class MultiResInput:
    coarse: ActivationGrid
    fine: ActivationGrid

    def __post_init__(self):
        if self.coarse.resolution >= self.fine.resolution:
            raise GeometryError("coarse resolution must be below fine resolution")


def padded_bounds(pair: SurfacePair, cubic: bool = True) -> Aabb:
    """Union box of the pair grown by ``1e-6 * diagonal`` (``1e-6`` if the box is a point).

    With ``cubic=True`` the box is first expanded to a cube about its center so
    bins have equal physical size on every axis.
    """
    box = union_aabb(pair)
    diag = box.diagonal
    pad = PAD_REL * diag if diag > 0 else PAD_ABS
    if cubic:
        half = 0.5 * float(box.extent.max())
        c = box.center
        box = Aabb(c - half, c + half)
    return box.padded(pad)


def bin_indices(points: np.ndarray, resolution: int, bounds: Aabb) -> np.ndarray:
    """Per-axis bin index ``floor((p - min) / extent * R)`` clamped to ``[0, R-1]``."""
    ext = bounds.extent.copy()
    ext[ext == 0] = 1.0
    # scale after dividing so that grids at power-of-two ratios nest exactly
    t = (np.asarray(points) - bounds.min_corner) / ext
    idx = np.floor(t * resolution).astype(np.int64)
    return np.clip(idx, 0, resolution - 1)


def bin_points(pair: SurfacePair, resolution: int, bounds: Aabb) -> ActivationGrid:
    if resolution < 2:
        raise GeometryError(f"resolution must be >= 2, got {resolution}")
    r = int(resolution)
    has_a = np.zeros((r, r, r), dtype=bool)
    has_b = np.zeros((r, r, r), dtype=bool)
    ia = bin_indices(pair.side_a.points, r, bounds)
    ib = bin_indices(pair.side_b.points, r, bounds)
    has_a[ia[:, 0], ia[:, 1], ia[:, 2]] = True
    has_b[ib[:, 0], ib[:, 1], ib[:, 2]] = True
    states = has_a.astype(np.uint8) * SIDE_A + has_b.astype(np.uint8) * SIDE_B
    return ActivationGrid(r, states, bounds)


def build_multires(pair: SurfacePair, coarse_res: int = 8, fine_res: int = 16,
                   cubic: bool = True) -> MultiResInput:
    if not 2 <= coarse_res < fine_res:
        raise GeometryError(f"need 2 <= coarse_res < fine_res, got {coarse_res}, {fine_res}")
    bounds = padded_bounds(pair, cubic=cubic)
    return MultiResInput(bin_points(pair, coarse_res, bounds), bin_points(pair, fine_res, bounds))


def encode_one_hot(grid: ActivationGrid, dtype=np.float64) -> np.ndarray:
    """``(4, R, R, R)`` tensor; channel ``s`` is 1 where the cell state is ``s``."""
    return (np.arange(N_STATES, dtype=np.uint8)[:, None, None, None] == grid.states).astype(dtype)


def grid_stats(grid: ActivationGrid) -> dict[str, int]:
    counts = np.bincount(grid.states.ravel(), minlength=N_STATES)
    return {f"n{s}": int(counts[s]) for s in range(N_STATES)}


# --------------------------------------------------------------------------
# dumps


def write_grid_csv(grid: ActivationGrid, path) -> None:
    """Nonzero cells as ``i,j,k,state`` rows."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("i", "j", "k", "state"))
        for i, j, k in np.argwhere(grid.states > 0):
            w.writerow((int(i), int(j), int(k), int(grid.states[i, j, k])))


def grid_slice(grid: ActivationGrid, axis: int, index: int) -> np.ndarray:
    if not 0 <= index < grid.resolution:
        raise GeometryError(f"slice index {index} out of range for resolution {grid.resolution}")
    return np.take(grid.states, index, axis=axis)


def slice_through(grid: ActivationGrid, axis: int, coord: float) -> int:
    """Index of the cut plane that contains the physical coordinate ``coord``."""
    p = grid.bounds.min_corner.copy()
    p[axis] = coord
    return int(bin_indices(p[None], grid.resolution, grid.bounds)[0, axis])


def write_slice_csv(grid: ActivationGrid, axis: int, index: int, path) -> None:
    sl = grid_slice(grid, axis, index)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in sl:
            w.writerow([int(v) for v in row])
