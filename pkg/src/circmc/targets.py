"""Target distributions: densities, gradients, conditionals, exact samplers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .streams import StreamKey, inv_normal_cdf, uniform, uniform_fill

__all__ = [
    "TargetDistribution",
    "Mvn9Spec",
    "normal1d",
    "bimodal",
    "mvn9",
    "metric_sq_distance",
    "phase_extend",
]

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class TargetDistribution:
    """A target density with whatever structure its samplers need.

    ``log_density`` is the log of the (normalized where convenient) density;
    ``grad_neg_log_density`` is the gradient of the energy E(x) = -log pi(x).
    ``exact_sampler`` maps a stream key to one exact draw, consuming counters
    key.counter, key.counter+1, ... so batch draws can advance the key.
    ``conditional_spec`` maps (state, i) to a location-scale descriptor
    ("normal", loc, scale) or ("gamma", shape, rate) for Gibbs coupling.
    """

    name: str
    dimension: int
    log_density: Callable[[np.ndarray], float]
    grad_neg_log_density: Optional[Callable[[np.ndarray], np.ndarray]] = None
    exact_sampler: Optional[Callable[[StreamKey], np.ndarray]] = None
    conditional_spec: Optional[Callable[[np.ndarray, int], tuple]] = None
    sampler_budget: int = 0
    mvn9_spec: Optional["Mvn9Spec"] = None


@dataclass(frozen=True)
class Mvn9Spec:
    """Covariance structure of the nine-dimensional normal example."""

    covariance: np.ndarray
    precision: np.ndarray
    eigenvalues: np.ndarray  # of the precision matrix, descending
    cholesky: np.ndarray = field(repr=False, default=None)


def normal1d() -> TargetDistribution:
    """One-dimensional standard normal, with exact sampler and gradient."""

    def log_density(x: np.ndarray) -> float:
        return -0.5 * float(x[0]) ** 2 - 0.5 * _LOG_2PI

    def grad(x: np.ndarray) -> np.ndarray:
        return np.array([float(x[0])])

    def sampler(key: StreamKey) -> np.ndarray:
        return np.array([inv_normal_cdf(uniform(key))])

    def conditional(state: np.ndarray, i: int) -> tuple:
        return ("normal", 0.0, 1.0)

    return TargetDistribution(
        name="normal1d",
        dimension=1,
        log_density=log_density,
        grad_neg_log_density=grad,
        exact_sampler=sampler,
        conditional_spec=conditional,
        sampler_budget=1,
    )


_BIMODAL_W1, _BIMODAL_W2 = 0.75, 0.25
_BIMODAL_M1, _BIMODAL_S1 = -1.0, 1.0
_BIMODAL_M2, _BIMODAL_S2 = 1.5, 0.1


def bimodal() -> TargetDistribution:
    """Mixture (3/4) N(-1, 1) + (1/4) N(1.5, 0.1^2)."""

    def _log_components(x: float) -> tuple[float, float]:
        l1 = (math.log(_BIMODAL_W1) - 0.5 * _LOG_2PI
              - math.log(_BIMODAL_S1)
              - 0.5 * ((x - _BIMODAL_M1) / _BIMODAL_S1) ** 2)
        l2 = (math.log(_BIMODAL_W2) - 0.5 * _LOG_2PI
              - math.log(_BIMODAL_S2)
              - 0.5 * ((x - _BIMODAL_M2) / _BIMODAL_S2) ** 2)
        return l1, l2

    def log_density(x: np.ndarray) -> float:
        l1, l2 = _log_components(float(x[0]))
        return float(np.logaddexp(l1, l2))

    def grad(x: np.ndarray) -> np.ndarray:
        xv = float(x[0])
        l1, l2 = _log_components(xv)
        # component responsibilities, stable in the far tails
        w1 = 1.0 / (1.0 + math.exp(min(l2 - l1, 700.0)))
        w2 = 1.0 - w1
        dlog = (w1 * (-(xv - _BIMODAL_M1) / _BIMODAL_S1 ** 2)
                + w2 * (-(xv - _BIMODAL_M2) / _BIMODAL_S2 ** 2))
        return np.array([-dlog])

    def sampler(key: StreamKey) -> np.ndarray:
        pick = uniform(key)
        z = inv_normal_cdf(uniform(key.offset(1)))
        if pick < _BIMODAL_W1:
            return np.array([_BIMODAL_M1 + _BIMODAL_S1 * z])
        return np.array([_BIMODAL_M2 + _BIMODAL_S2 * z])

    return TargetDistribution(
        name="bimodal",
        dimension=1,
        log_density=log_density,
        grad_neg_log_density=grad,
        exact_sampler=sampler,
        sampler_budget=2,
    )


def _build_mvn9_spec() -> Mvn9Spec:
    # components 1-6: sd 1, pairwise correlation -0.199; components 7-9:
    # sd 0.1, independent of everything
    cov = np.zeros((9, 9))
    cov[:6, :6] = -0.199
    np.fill_diagonal(cov[:6, :6], 1.0)
    cov[6:, 6:] = np.eye(3) * 0.01
    prec = np.linalg.inv(cov)
    prec = 0.5 * (prec + prec.T)
    eigs = np.sort(np.linalg.eigvalsh(prec))[::-1]
    chol = np.linalg.cholesky(cov)
    return Mvn9Spec(covariance=cov, precision=prec, eigenvalues=eigs,
                    cholesky=chol)


_MVN9_SPEC: Optional[Mvn9Spec] = None


def mvn9() -> TargetDistribution:
    """The nine-dimensional zero-mean normal example, with spec attached."""
    global _MVN9_SPEC
    if _MVN9_SPEC is None:
        _MVN9_SPEC = _build_mvn9_spec()
    spec = _MVN9_SPEC
    prec = spec.precision
    chol = spec.cholesky
    _, logdet = np.linalg.slogdet(spec.covariance)
    const = -0.5 * (9 * _LOG_2PI + logdet)

    def log_density(x: np.ndarray) -> float:
        return const - 0.5 * float(x @ (prec @ x))

    def grad(x: np.ndarray) -> np.ndarray:
        return prec @ x

    def sampler(key: StreamKey) -> np.ndarray:
        u = uniform_fill(key.seed, key.time_step, key.counter, 9)
        z = np.array([inv_normal_cdf(v) for v in u])
        return chol @ z

    def conditional(state: np.ndarray, i: int) -> tuple:
        var = 1.0 / prec[i, i]
        loc = -(prec[i] @ state - prec[i, i] * state[i]) * var
        return ("normal", loc, math.sqrt(var))

    return TargetDistribution(
        name="mvn9",
        dimension=9,
        log_density=log_density,
        grad_neg_log_density=grad,
        exact_sampler=sampler,
        conditional_spec=conditional,
        sampler_budget=9,
        mvn9_spec=spec,
    )


def metric_sq_distance(x: np.ndarray, x_other: np.ndarray,
                       precision: np.ndarray) -> float:
    """Squared distance (x - x')ᵀ P (x - x') in the metric given by P."""
    x = np.asarray(x, dtype=float)
    x_other = np.asarray(x_other, dtype=float)
    if x.shape != x_other.shape or precision.shape != (x.size, x.size):
        raise ValueError(
            f"dimension mismatch: states {x.shape} vs {x_other.shape}, "
            f"precision {precision.shape}")
    d = x - x_other
    return float(d @ (precision @ d))


def phase_extend(target: TargetDistribution) -> TargetDistribution:
    """Joint (position, momentum) target: pi(x) * N(p; 0, I), packed [x, p].

    Used as the stationary distribution of Langevin kernels; the exact
    sampler draws position from the base sampler and momentum from N(0, I).
    """
    d = target.dimension
    base_ld = target.log_density
    base_sampler = target.exact_sampler

    def log_density(state: np.ndarray) -> float:
        p = state[d:]
        return base_ld(state[:d]) - 0.5 * float(p @ p) - 0.5 * d * _LOG_2PI

    sampler = None
    if base_sampler is not None:
        def sampler(key: StreamKey) -> np.ndarray:
            x = base_sampler(key)
            u = uniform_fill(key.seed, key.time_step,
                             key.counter + target.sampler_budget, d)
            p = np.array([inv_normal_cdf(v) for v in u])
            return np.concatenate([x, p])

    return TargetDistribution(
        name=f"{target.name}+momentum",
        dimension=2 * d,
        log_density=log_density,
        exact_sampler=sampler,
        sampler_budget=target.sampler_budget + d,
        mvn9_spec=target.mvn9_spec,
    )
