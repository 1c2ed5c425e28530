"""Coupled transition kernels phi(x, u) with fixed variate budgets.

Every kernel consumes exactly ``variate_budget`` uniforms per step, no matter
what the state is; that is the precondition for coupled chains fed identical
blocks to stay synchronized and eventually coalesce.
"""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import gammainc

from .streams import UniformBlock, inv_normal_cdf
from .targets import TargetDistribution

__all__ = [
    "rg_grid_point",
    "gamma_standard_quantile",
    "RandomGridKernel",
    "RandomWalkKernel",
    "LangevinKernel",
    "GibbsInversionKernel",
    "MomentumRefreshKernel",
    "CompositeKernel",
    "rg_metropolis_kernel",
    "rw_metropolis_kernel",
    "langevin_kernel",
    "gibbs_sweep_kernel",
    "kernel_from_descriptor",
]


def rg_grid_point(x: float, u1: float, w: float) -> float:
    """Nearest point to x of a grid with spacing 2w offset by u1.

    Returns 2w[(u1 - 1/2) + Round(x/(2w) - (u1 - 1/2))], which lies in
    (x - w, x + w].  All states within one width-2w grid cell map to the
    same point, which is what makes exact coalescence possible.
    """
    off = u1 - 0.5
    return 2.0 * w * (off + math.floor(x / (2.0 * w) - off + 0.5))


def _grid_points(x: np.ndarray, u: np.ndarray, w: float) -> np.ndarray:
    off = u - 0.5
    return 2.0 * w * (off + np.floor(x / (2.0 * w) - off + 0.5))


def gamma_standard_quantile(shape: float, u: float) -> float:
    """Unit-rate Gamma(shape) quantile by 64 bisection steps on the CDF.

    The fixed iteration count keeps runtime independent of the state, so
    coupled chains stay in lockstep.
    """
    lo, hi = 0.0, 85.0 + 10.0 * shape
    for _ in range(64):
        mid = 0.5 * (lo + hi)
        if gammainc(shape, mid) < u:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class _Kernel:
    """Shared plumbing: budget validation and composite support.

    step() never mutates its input, but a rejected update may return the
    input array itself; callers that keep the result while mutating the
    buffer it came from must copy.
    """

    variate_budget: int = 0
    layout: Optional[tuple] = None

    def step(self, state: np.ndarray, block: UniformBlock) -> np.ndarray:
        raise NotImplementedError

    def descriptor(self) -> dict:
        raise NotImplementedError

    def _check(self, block: UniformBlock) -> None:
        if len(block) != self.variate_budget:
            raise ValueError(
                f"block length {len(block)} != budget {self.variate_budget}")


class RandomGridKernel(_Kernel):
    """Random-grid Metropolis: propose the nearest point of a random grid.

    Modes: "multi" updates every coordinate in ``coords`` with one shared
    acceptance decision; "single-random" picks one coordinate from a
    dedicated selector slot; "sweep" updates each coordinate in turn, each
    with its own acceptance slot.  ``transform="log"`` runs the grid in log
    space with the Jacobian folded into the acceptance ratio.
    """

    def __init__(self, log_density: Callable[[np.ndarray], float], w: float,
                 coords: Sequence[int], mode: str = "multi",
                 transform: Optional[str] = None, label: str = ""):
        if w <= 0:
            raise ValueError("w must be positive")
        if mode not in ("multi", "single-random", "sweep"):
            raise ValueError(f"unknown mode {mode!r}")
        if transform not in (None, "log"):
            raise ValueError(f"unknown transform {transform!r}")
        self.log_density = log_density
        self.w = w
        self.coords = np.asarray(coords, dtype=int)
        self.mode = mode
        self.transform = transform
        self.label = label
        m = len(self.coords)
        if mode == "multi":
            self.variate_budget = m + 1
            self.layout = ("accept",) + tuple(f"offset{i}" for i in range(m))
        elif mode == "single-random":
            self.variate_budget = 3
            self.layout = ("accept", "selector", "offset")
        else:
            self.variate_budget = 2 * m
            self.layout = tuple(
                s for i in range(m) for s in (f"accept{i}", f"offset{i}"))

    def _coord_value(self, state: np.ndarray, c: int) -> float:
        v = state[c]
        return math.log(v) if self.transform == "log" else v

    def _propose_one(self, state: np.ndarray, c: int, u_off: float,
                     u_acc: float) -> np.ndarray:
        cur = self._coord_value(state, c)
        prop = rg_grid_point(cur, u_off, self.w)
        new = state.copy()
        new[c] = math.exp(prop) if self.transform == "log" else prop
        logr = self.log_density(new) - self.log_density(state)
        if self.transform == "log":
            logr += prop - cur  # Jacobian of the log coordinate
        if math.log(u_acc) < logr:
            return new
        return state

    def step(self, state: np.ndarray, block: UniformBlock) -> np.ndarray:
        self._check(block)
        if self.mode == "single-random":
            sel = int(block[1] * len(self.coords))
            return self._propose_one(state, int(self.coords[sel]),
                                     block[2], block[0])
        if self.mode == "sweep":
            for i, c in enumerate(self.coords):
                state = self._propose_one(state, int(c), block[2 * i + 1],
                                          block[2 * i])
            return state
        # multi: one grid placement over all coords, one shared decision
        cur = state[self.coords]
        if self.transform == "log":
            cur = np.log(cur)
        prop = _grid_points(cur, np.asarray(block[1:]), self.w)
        new = state.copy()
        new[self.coords] = np.exp(prop) if self.transform == "log" else prop
        logr = self.log_density(new) - self.log_density(state)
        if self.transform == "log":
            logr += float(np.sum(prop - cur))
        if math.log(block[0]) < logr:
            return new
        return state

    def descriptor(self) -> dict:
        return {"kind": "random_grid", "label": self.label, "w": self.w,
                "mode": self.mode, "transform": self.transform,
                "coords": self.coords.tolist()}


class RandomWalkKernel(_Kernel):
    """Random-walk Metropolis coupled by a common offset and common u0."""

    def __init__(self, log_density: Callable[[np.ndarray], float],
                 scale: float, coords: Sequence[int],
                 proposal: str = "normal", mode: str = "multi",
                 label: str = ""):
        if scale <= 0:
            raise ValueError("proposal scale must be positive")
        if proposal not in ("normal", "uniform"):
            raise ValueError(f"unknown proposal {proposal!r}")
        if mode not in ("multi", "single-random"):
            raise ValueError(f"unknown mode {mode!r}")
        self.log_density = log_density
        self.scale = scale
        self.coords = np.asarray(coords, dtype=int)
        self.proposal = proposal
        self.mode = mode
        self.label = label
        m = len(self.coords)
        if mode == "multi":
            self.variate_budget = m + 1
            self.layout = ("accept",) + tuple(f"offset{i}" for i in range(m))
        else:
            self.variate_budget = 3
            self.layout = ("accept", "selector", "offset")

    def _offset(self, u: float) -> float:
        if self.proposal == "normal":
            return self.scale * inv_normal_cdf(u)
        return 2.0 * self.scale * (u - 0.5)

    def step(self, state: np.ndarray, block: UniformBlock) -> np.ndarray:
        self._check(block)
        new = state.copy()
        if self.mode == "single-random":
            sel = int(block[1] * len(self.coords))
            c = int(self.coords[sel])
            new[c] = state[c] + self._offset(block[2])
        else:
            for i, c in enumerate(self.coords):
                new[c] = state[c] + self._offset(block[1 + i])
        logr = self.log_density(new) - self.log_density(state)
        if math.log(block[0]) < logr:
            return new
        return state

    def descriptor(self) -> dict:
        return {"kind": "random_walk", "label": self.label,
                "scale": self.scale, "proposal": self.proposal,
                "mode": self.mode, "coords": self.coords.tolist()}


class LangevinKernel(_Kernel):
    """One-leapfrog-step Langevin update on a position/momentum pair.

    Momentum refresh p <- alpha p + sqrt(1 - alpha^2) n uses shared normals;
    the Metropolis correction uses a shared acceptance slot and negates the
    momentum on rejection.  ``corrected=False`` gives the plain discretized
    dynamics (no acceptance slot in the budget).
    """

    def __init__(self, energy: Callable[[np.ndarray], float],
                 energy_grad: Callable[[np.ndarray], np.ndarray],
                 epsilon: float, alpha: float,
                 position: Sequence[int], momentum: Sequence[int],
                 corrected: bool = True, label: str = ""):
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not 0.0 <= alpha < 1.0:
            raise ValueError("alpha must be in [0, 1)")
        if energy_grad is None:
            raise ValueError("target does not provide a gradient")
        self.energy = energy
        self.energy_grad = energy_grad
        self.epsilon = epsilon
        self.alpha = alpha
        self.position = np.asarray(position, dtype=int)
        self.momentum = np.asarray(momentum, dtype=int)
        if len(self.position) != len(self.momentum):
            raise ValueError("position/momentum dimensions differ")
        self.corrected = corrected
        self.label = label
        d = len(self.position)
        self.variate_budget = d + (1 if corrected else 0)
        self.layout = tuple(f"normal{i}" for i in range(d)) + (
            ("accept",) if corrected else ())

    def step(self, state: np.ndarray, block: UniformBlock) -> np.ndarray:
        self._check(block)
        d = len(self.position)
        n = np.array([inv_normal_cdf(block[i]) for i in range(d)])
        p = self.alpha * state[self.momentum] + math.sqrt(
            1.0 - self.alpha ** 2) * n
        cur = state.copy()
        cur[self.momentum] = p
        eps = self.epsilon
        p_half = p - 0.5 * eps * self.energy_grad(cur)
        prop = cur.copy()
        prop[self.position] = cur[self.position] + eps * p_half
        p_star = p_half - 0.5 * eps * self.energy_grad(prop)
        prop[self.momentum] = p_star
        if not self.corrected:
            return prop
        delta_h = (self.energy(prop) - self.energy(cur)
                   + 0.5 * float(p_star @ p_star) - 0.5 * float(p @ p))
        if math.log(block[d]) < -delta_h:
            return prop
        cur[self.momentum] = -p
        return cur

    def descriptor(self) -> dict:
        return {"kind": "langevin", "label": self.label,
                "epsilon": self.epsilon, "alpha": self.alpha,
                "corrected": self.corrected,
                "position": self.position.tolist(),
                "momentum": self.momentum.tolist()}


class GibbsInversionKernel(_Kernel):
    """Gibbs update of one component by CDF inversion of its conditional.

    Conditionals are location-scale descriptors, so both chains transform
    one shared standard variate: ("normal", loc, scale) or
    ("gamma", shape, rate) with state-independent shape.
    """

    variate_budget = 1
    layout = ("u",)

    def __init__(self, conditional_spec: Callable[[np.ndarray, int], tuple],
                 component: int, coord: Optional[int] = None,
                 label: str = ""):
        if conditional_spec is None:
            raise ValueError("target does not provide conditional specs")
        self.conditional_spec = conditional_spec
        self.component = component
        self.coord = component if coord is None else coord
        self.label = label

    def step(self, state: np.ndarray, block: UniformBlock) -> np.ndarray:
        self._check(block)
        spec = self.conditional_spec(state, self.component)
        u = block[0]
        new = state.copy()
        if spec[0] == "normal":
            _, loc, scale = spec
            new[self.coord] = loc + scale * inv_normal_cdf(u)
        elif spec[0] == "gamma":
            _, shape, rate = spec
            new[self.coord] = gamma_standard_quantile(shape, u) / rate
        else:
            raise ValueError(f"unknown conditional family {spec[0]!r}")
        return new

    def descriptor(self) -> dict:
        return {"kind": "gibbs", "label": self.label,
                "component": self.component, "coord": self.coord}


class MomentumRefreshKernel(_Kernel):
    """Replace momentum coordinates with fresh shared standard normals."""

    def __init__(self, momentum: Sequence[int], label: str = ""):
        self.momentum = np.asarray(momentum, dtype=int)
        self.variate_budget = len(self.momentum)
        self.layout = tuple(f"normal{i}" for i in range(self.variate_budget))
        self.label = label

    def step(self, state: np.ndarray, block: UniformBlock) -> np.ndarray:
        self._check(block)
        new = state.copy()
        new[self.momentum] = [inv_normal_cdf(block[i])
                              for i in range(self.variate_budget)]
        return new

    def descriptor(self) -> dict:
        return {"kind": "momentum_refresh", "label": self.label,
                "momentum": self.momentum.tolist()}


class CompositeKernel(_Kernel):
    """Apply sub-kernels in order within one time step; budgets add."""

    def __init__(self, kernels: Sequence[_Kernel], label: str = ""):
        if not kernels:
            raise ValueError("composite needs at least one sub-kernel")
        self.kernels = list(kernels)
        self.variate_budget = sum(k.variate_budget for k in self.kernels)
        self.layout = None
        self.label = label

    def step(self, state: np.ndarray, block: UniformBlock) -> np.ndarray:
        self._check(block)
        off = 0
        for k in self.kernels:
            sub = UniformBlock(block[off:off + k.variate_budget], k.layout)
            state = k.step(state, sub)
            off += k.variate_budget
        return state

    def descriptor(self) -> dict:
        return {"kind": "composite", "label": self.label,
                "kernels": [k.descriptor() for k in self.kernels]}


def _full_coords(target: TargetDistribution) -> np.ndarray:
    return np.arange(target.dimension)


def rg_metropolis_kernel(target: TargetDistribution, w: float,
                         mode: str = "multi") -> RandomGridKernel:
    """Random-grid Metropolis over all components of a plain target."""
    if mode == "one-dim":
        mode = "multi"
    return RandomGridKernel(target.log_density, w, _full_coords(target),
                            mode=mode, label=target.name)


def rw_metropolis_kernel(target: TargetDistribution, scale: float,
                         proposal: str = "normal",
                         mode: str = "multi") -> RandomWalkKernel:
    """Common-offset random-walk Metropolis over a plain target."""
    return RandomWalkKernel(target.log_density, scale, _full_coords(target),
                            proposal=proposal, mode=mode, label=target.name)


def langevin_kernel(target: TargetDistribution, epsilon: float,
                    alpha: float = 0.0,
                    corrected: bool = True) -> LangevinKernel:
    """Langevin kernel on the phase state [x, p] of a plain target."""
    d = target.dimension

    def energy(state: np.ndarray) -> float:
        return -target.log_density(state[:d])

    def grad(state: np.ndarray) -> np.ndarray:
        return target.grad_neg_log_density(state[:d])

    if target.grad_neg_log_density is None:
        raise ValueError("target does not provide a gradient")
    return LangevinKernel(energy, grad, epsilon, alpha,
                          position=np.arange(d),
                          momentum=np.arange(d, 2 * d),
                          corrected=corrected, label=target.name)


def gibbs_sweep_kernel(target: TargetDistribution) -> CompositeKernel:
    """One Gibbs inversion update of each component in turn."""
    subs = [GibbsInversionKernel(target.conditional_spec, i,
                                 label=f"{target.name}[{i}]")
            for i in range(target.dimension)]
    return CompositeKernel(subs, label=f"gibbs-sweep:{target.name}")


def kernel_from_descriptor(desc: dict, targets: dict) -> _Kernel:
    """Rebuild a kernel from its descriptor.

    ``targets`` maps target names to the objects needed to reconstruct the
    callables (TargetDistribution for the plain kinds, a logistic posterior
    for the composite §-schedule kind registered by the logistic module).
    """
    kind = desc["kind"]
    if kind == "composite":
        return CompositeKernel(
            [kernel_from_descriptor(d, targets) for d in desc["kernels"]],
            label=desc.get("label", ""))
    if kind == "random_grid":
        target = targets[desc["label"]]
        return RandomGridKernel(target.log_density, desc["w"], desc["coords"],
                                mode=desc["mode"],
                                transform=desc.get("transform"),
                                label=desc["label"])
    if kind == "random_walk":
        target = targets[desc["label"]]
        return RandomWalkKernel(target.log_density, desc["scale"],
                                desc["coords"], proposal=desc["proposal"],
                                mode=desc["mode"], label=desc["label"])
    if kind == "langevin":
        target = targets[desc["label"]]
        return langevin_kernel(target, desc["epsilon"], desc["alpha"],
                               corrected=desc["corrected"])
    if kind == "gibbs":
        target = targets[desc["label"].split("[")[0]]
        return GibbsInversionKernel(target.conditional_spec,
                                    desc["component"], desc["coord"],
                                    label=desc["label"])
    if kind == "momentum_refresh":
        return MomentumRefreshKernel(desc["momentum"],
                                     label=desc.get("label", ""))
    if kind in _EXTRA_DESCRIPTOR_BUILDERS:
        return _EXTRA_DESCRIPTOR_BUILDERS[kind](desc, targets)
    raise ValueError(f"unknown kernel kind {kind!r}")


# other modules (logistic schedule, fast Metropolis schedule) register here
_EXTRA_DESCRIPTOR_BUILDERS: dict = {}


def register_descriptor_kind(kind: str, builder) -> None:
    _EXTRA_DESCRIPTOR_BUILDERS[kind] = builder
