"""Compiled inner loop for long Metropolis schedules on quadratic targets.

The Table-1 style transition (tens of thousands of common-offset Metropolis
updates followed by one random-grid update) is far too hot for per-update
Python.  This kernel consumes a pre-generated uniform block in one compiled
sweep, with the identical slot layout and variates as the equivalent
composite of RandomWalkKernel / RandomGridKernel steps, so the two paths
stay interchangeable (accept decisions can differ only when a log-ratio and
its uniform agree to within rounding, which the tests bound).
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .kernels import _Kernel, register_descriptor_kind
from .streams import UniformBlock, inv_normal_cdf

__all__ = ["MvnScheduleKernel"]

_inv_cdf = njit(cache=True)(inv_normal_cdf)


@njit(cache=True)
def _quad(prec: np.ndarray, x: np.ndarray) -> float:
    d = x.shape[0]
    total = 0.0
    for i in range(d):
        row = 0.0
        for j in range(d):
            row += prec[i, j] * x[j]
        total += x[i] * row
    return total


@njit(cache=True)
def _consume(x, prec, u, sigmas, counts, w, do_grid):
    d = x.shape[0]
    x = x.copy()
    y = np.empty(d)
    pos = 0
    energy = 0.5 * _quad(prec, x)
    accepts = 0
    for s in range(sigmas.shape[0]):
        sigma = sigmas[s]
        for _ in range(counts[s]):
            u0 = u[pos]
            pos += 1
            for j in range(d):
                y[j] = x[j] + sigma * _inv_cdf(u[pos])
                pos += 1
            new_energy = 0.5 * _quad(prec, y)
            if np.log(u0) < energy - new_energy:
                for j in range(d):
                    x[j] = y[j]
                energy = new_energy
                accepts += 1
    if do_grid:
        u0 = u[pos]
        pos += 1
        for j in range(d):
            off = u[pos] - 0.5
            pos += 1
            y[j] = 2.0 * w * (off + np.floor(x[j] / (2.0 * w) - off + 0.5))
        new_energy = 0.5 * _quad(prec, y)
        if np.log(u0) < energy - new_energy:
            for j in range(d):
                x[j] = y[j]
            accepts += 1
    return x, accepts


class MvnScheduleKernel(_Kernel):
    """Varying-sigma multi-dimensional Metropolis stages, then one
    multi-dimensional random-grid update, on a zero-mean Gaussian target."""

    def __init__(self, precision: np.ndarray, stages, w: float,
                 grid_update: bool = True, label: str = "mvn9"):
        self.precision = np.ascontiguousarray(precision, dtype=np.float64)
        self.stages = [(float(s), int(c)) for s, c in stages]
        if any(s <= 0 or c < 0 for s, c in self.stages):
            raise ValueError("stage sigmas must be positive, counts >= 0")
        if w <= 0:
            raise ValueError("w must be positive")
        self.w = float(w)
        self.grid_update = grid_update
        self.label = label
        d = self.precision.shape[0]
        n_updates = sum(c for _, c in self.stages)
        self.variate_budget = n_updates * (d + 1) + (
            (d + 1) if grid_update else 0)
        self._sigmas = np.array([s for s, _ in self.stages])
        self._counts = np.array([c for _, c in self.stages], dtype=np.int64)

    def step(self, state: np.ndarray, block: UniformBlock) -> np.ndarray:
        self._check(block)
        new, _ = _consume(np.asarray(state, dtype=np.float64),
                          self.precision, block.values, self._sigmas,
                          self._counts, self.w, self.grid_update)
        return new

    def descriptor(self) -> dict:
        return {"kind": "mvn_schedule", "label": self.label,
                "stages": [[s, c] for s, c in self.stages], "w": self.w,
                "grid_update": self.grid_update}


def _from_descriptor(desc: dict, targets: dict) -> MvnScheduleKernel:
    target = targets[desc["label"]]
    return MvnScheduleKernel(target.mvn9_spec.precision, desc["stages"],
                             desc["w"], grid_update=desc["grid_update"],
                             label=desc["label"])


register_descriptor_kind("mvn_schedule", _from_descriptor)
