"""Monte Carlo relative L2 errors and 2-D slice grids for heatmaps."""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass
class ErrorReport:
    mean: float
    std: float
    repeats: int
    points: int
    seeds: list[int] = field(default_factory=list)
    values: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "repeats": self.repeats,
                "points_per_repeat": self.points, "seeds": self.seeds, "values": self.values}


def relative_l2(u_ref, u_approx) -> float:
    u_ref = np.asarray(u_ref, dtype=float)
    denom = float(np.sum(u_ref * u_ref))
    if denom == 0.0:
        raise ZeroDivisionError("reference solution has zero norm on the sample")
    diff = u_ref - np.asarray(u_approx, dtype=float)
    return float(np.sqrt(np.sum(diff * diff) / denom))


def mc_relative_l2(problem, approx: Callable, n_points: int = 2000, repeats: int = 50, seed: int = 0,
                   reference: Callable | None = None) -> ErrorReport:
    """Repeated Monte Carlo estimates of ||u - u~|| / ||u|| over the domain.

    Each repeat draws its own uniform interior sample from a seed derived from
    ``seed``; the report holds the mean and the (n-1) standard deviation.
    """
    if repeats < 1 or n_points < 1:
        raise ValueError("repeats and n_points must be positive")
    ref = reference if reference is not None else problem.true_value
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(repeats)]
    vals = []
    for s in seeds:
        X = np.random.default_rng(s).uniform(problem.lo, problem.hi, size=(n_points, problem.dim))
        vals.append(relative_l2(ref(X), approx(X)))
    vals_arr = np.asarray(vals)
    std = float(vals_arr.std(ddof=1)) if repeats > 1 else 0.0
    return ErrorReport(float(vals_arr.mean()), std, repeats, n_points, seeds, vals)


@dataclass
class SliceGrid:
    dims: tuple[int, int]
    xi: np.ndarray  # (R*R,) with dim i varying fastest
    xj: np.ndarray
    reference: np.ndarray
    prediction: np.ndarray
    error: np.ndarray
    fixed_hash: str


def slice_grid(approx: Callable, problem, dims=(0, 1), fixed_values=None, resolution: int = 200,
               relative: bool = False) -> SliceGrid:
    """Evaluate reference and prediction on a uniform grid over one 2-D face.

    Remaining coordinates sit at ``fixed_values`` (default: domain midpoint).
    ``relative=True`` reports |u - u~| / |u| instead of |u - u~|.
    """
    i, j = (int(k) for k in dims)
    d = problem.dim
    if i == j or not (0 <= i < d and 0 <= j < d):
        raise ValueError(f"slice dims must be two distinct indices in [0, {d})")
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    if fixed_values is None:
        base = np.full(d, 0.5 * (problem.lo + problem.hi))
    else:
        base = np.asarray(fixed_values, dtype=float)
        if base.shape != (d,):
            raise ValueError(f"fixed_values must have length {d}, got {base.size}")
    axis = np.linspace(problem.lo, problem.hi, resolution)
    gj, gi = np.meshgrid(axis, axis, indexing="ij")  # i varies fastest after ravel
    X = np.tile(base, (resolution * resolution, 1))
    X[:, i] = gi.ravel()
    X[:, j] = gj.ravel()
    ref = problem.true_value(X)
    pred = np.asarray(approx(X), dtype=float)
    err = np.abs(ref - pred)
    if relative:
        err = err / np.abs(ref)
    digest = hashlib.sha256(base.tobytes()).hexdigest()[:12]
    return SliceGrid((i, j), X[:, i].copy(), X[:, j].copy(), ref, pred, err, digest)


def write_slice_csvs(grid: SliceGrid, out_dir: str, prefix: str = "") -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    i, j = grid.dims
    header = f"dim_i={i},dim_j={j},fixed_sha={grid.fixed_hash}"
    paths = []
    for name, vals in (("ref", grid.reference), ("pred", grid.prediction), ("err", grid.error)):
        path = os.path.join(out_dir, f"{prefix}{name}.csv")
        data = np.column_stack([grid.xi, grid.xj, vals])
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")
        paths.append(path)
    return paths
