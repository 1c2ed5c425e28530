"""Analytic predictions and statistical summaries for coupled runs."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.special import gammainc

__all__ = [
    "CoalescenceRecord",
    "SeparationProfile",
    "proposal_coalescence_prob",
    "predict_mean_tries",
    "optimal_w",
    "expected_sq_distance_decrease",
    "relative_change_bounds",
    "schedule_cost",
    "halving_stage_count",
    "estimate_delta_geometric",
    "coalescence_posterior",
    "circular_autocovariance",
    "gamma_quantile",
    "estimate_log_acceptance_slope",
    "fit_slope",
]


@dataclass(frozen=True)
class CoalescenceRecord:
    """Coalescence times with right censoring at censor_cap."""

    times: tuple
    censor_cap: int
    censored_flags: tuple

    def __post_init__(self):
        if len(self.times) != len(self.censored_flags):
            raise ValueError("times and censored_flags lengths differ")
        for t, c in zip(self.times, self.censored_flags):
            if c and t != self.censor_cap:
                raise ValueError("censored entries must equal the cap")
            if not c and t > self.censor_cap:
                raise ValueError("uncensored time exceeds the cap")

    @classmethod
    def from_lists(cls, times: Sequence[int], cap: int,
                   censored: Sequence[bool]) -> "CoalescenceRecord":
        return cls(tuple(times), cap, tuple(censored))

    @property
    def n_events(self) -> int:
        return sum(not c for c in self.censored_flags)

    @property
    def total_time(self) -> float:
        return float(sum(self.times))


@dataclass(frozen=True)
class SeparationProfile:
    """Per-component absolute differences between two chain states."""

    differences: np.ndarray

    def __post_init__(self):
        if np.any(self.differences < 0):
            raise ValueError("differences must be non-negative")

    @classmethod
    def from_states(cls, x: np.ndarray, x_other: np.ndarray
                    ) -> "SeparationProfile":
        return cls(np.abs(np.asarray(x, float) - np.asarray(x_other, float)))

    @property
    def mean(self) -> float:
        return float(np.mean(self.differences))

    @property
    def max(self) -> float:
        return float(np.max(self.differences))


class CoalescentProposalProb(NamedTuple):
    probability: float
    log_approx: float


def proposal_coalescence_prob(profile: SeparationProfile,
                              w: float) -> CoalescentProposalProb:
    """Probability that one random grid placement proposes the same point
    in both chains for every component: prod_i (1 - d_i / 2w), zero once any
    separation reaches 2w.  Also returns the small-separation approximation
    log C ~ -n dbar / 2w.
    """
    if w <= 0:
        raise ValueError("w must be positive")
    d = profile.differences
    log_approx = -d.size * profile.mean / (2.0 * w)
    if profile.max >= 2.0 * w:
        return CoalescentProposalProb(0.0, log_approx)
    return CoalescentProposalProb(float(np.prod(1.0 - d / (2.0 * w))),
                                  log_approx)


def predict_mean_tries(coalescent_prob: float, acceptance_rate: float
                       ) -> float:
    """Expected number of grid updates before coalescence: the reciprocal of
    (coalescent-proposal probability x acceptance rate)."""
    if not 0 < coalescent_prob <= 1 or not 0 < acceptance_rate <= 1:
        raise ValueError("both probabilities must be in (0, 1]")
    return 1.0 / (coalescent_prob * acceptance_rate)


def optimal_w(d_bar: float, k_bar: float, n: int, mode: str = "single"
              ) -> tuple[float, float]:
    """Optimal grid half-width and the log coalescence probability there.

    single-component: w = sqrt(dbar / 2 kbar), log prob -n sqrt(2 dbar kbar).
    multi-dimensional: both gain a factor n^(1/4) / n^(3/4) respectively.
    """
    if d_bar <= 0 or k_bar <= 0 or n <= 0:
        raise ValueError("arguments must be positive")
    w_single = math.sqrt(d_bar / (2.0 * k_bar))
    if mode == "single":
        return w_single, -n * math.sqrt(2.0 * d_bar * k_bar)
    if mode == "multi":
        return (n ** 0.25 * w_single,
                -n ** 0.75 * math.sqrt(2.0 * d_bar * k_bar))
    raise ValueError(f"unknown mode {mode!r}")


def expected_sq_distance_decrease(x: np.ndarray, x_other: np.ndarray,
                                  precision: np.ndarray,
                                  omega: float) -> float:
    """Expected one-update decrease of the squared precision-metric distance
    between distant coupled chains: omega (x-x')^T P^2 (x-x')."""
    if omega <= 0:
        raise ValueError("omega must be positive")
    d = np.asarray(x, float) - np.asarray(x_other, float)
    if precision.shape != (d.size, d.size):
        raise ValueError("dimension mismatch")
    pd = precision @ d
    return omega * float(pd @ pd)


def relative_change_bounds(precision: np.ndarray, omega: float
                           ) -> tuple[float, float]:
    """Bounds on the expected relative squared-distance change per update:
    between omega * lambda_min and omega * lambda_max of the precision."""
    eigs = np.linalg.eigvalsh(precision)
    return omega * float(eigs[0]), omega * float(eigs[-1])


def schedule_cost(d0: float, d_star: float, r0: float,
                  mode: str = "varying") -> float:
    """Iterations needed to shrink squared distance from D0 to D*.

    varying sigma (continuously decreased): (1/R0)(D0/D* - 1).
    fixed sigma (the single best stepsize): (log(D0/D*)/R0)(D0/D*).
    """
    if not d0 >= d_star > 0 or r0 <= 0:
        raise ValueError("need D0 >= D* > 0 and R0 > 0")
    ratio = d0 / d_star
    if mode == "varying":
        return (ratio - 1.0) / r0
    if mode == "fixed":
        return math.log(ratio) / r0 * ratio
    raise ValueError(f"unknown mode {mode!r}")


def halving_stage_count(d0: float, d_star: float, a: float) -> float:
    """Number of stages s* = log(D0/D*) / (2a) for stepsize sigma_0 e^{-as}."""
    if not d0 >= d_star > 0 or a <= 0:
        raise ValueError("need D0 >= D* > 0 and a > 0")
    return math.log(d0 / d_star) / (2.0 * a)


@dataclass(frozen=True)
class GeometricEstimate:
    p_hat: float
    tail_beyond_horizon: Optional[float]
    all_censored: bool
    p_upper_bound: Optional[float] = None


def estimate_delta_geometric(record: CoalescenceRecord,
                             horizon: Optional[int] = None
                             ) -> GeometricEstimate:
    """Censored MLE of the geometric coalescence-time parameter.

    p_hat = (#uncensored) / (sum of all recorded times, censored counted at
    the cap).  With a horizon N, also reports the implied probability of
    needing more than N steps, (1 - p_hat)^N.  An all-censored record is
    flagged and only a rule-of-three upper bound on p is returned.
    """
    if not record.times:
        raise ValueError("empty record")
    total = record.total_time
    n_events = record.n_events
    if n_events == 0:
        upper = 3.0 / total if total > 0 else None
        return GeometricEstimate(0.0, None, True, upper)
    p_hat = n_events / total if total > 0 else 1.0
    tail = (1.0 - p_hat) ** horizon if horizon is not None else None
    return GeometricEstimate(p_hat, tail, False)


def gamma_quantile(shape: float, rate: float, q: float) -> float:
    """Gamma(shape, rate) quantile by bisection on the regularized
    incomplete gamma function, relative tolerance 1e-8."""
    if not 0 < q < 1 or shape <= 0 or rate <= 0:
        raise ValueError("invalid arguments")
    lo, hi = 0.0, max(shape, 1.0)
    while gammainc(shape, hi) < q:
        hi *= 2.0
    while hi - lo > 1e-8 * hi:
        mid = 0.5 * (lo + hi)
        if gammainc(shape, mid) < q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi) / rate


def coalescence_posterior(record: CoalescenceRecord
                          ) -> tuple[float, tuple[float, float]]:
    """Posterior mean and 90% interval of the mean coalescence time.

    Exponential model for the times, censoring at the cap, scale-invariant
    prior on the rate; the rate's posterior is Gamma(#uncensored, total
    time).  The reported mean is the reciprocal of the posterior mean rate,
    so it equals the sample mean when nothing is censored; the interval
    endpoints are reciprocals of the 0.95 and 0.05 rate quantiles.
    """
    n_events = record.n_events
    if n_events < 2:
        raise ValueError("need at least 2 uncensored observations")
    total = record.total_time
    mean_time = total / n_events
    lo = 1.0 / gamma_quantile(n_events, total, 0.95)
    hi = 1.0 / gamma_quantile(n_events, total, 0.05)
    return mean_time, (lo, hi)


def circular_autocovariance(y_trace: np.ndarray, lag: int) -> float:
    """Autocovariance of a circular scalar series at the given lag."""
    y = np.asarray(y_trace, float).ravel()
    n = y.size
    if not 0 <= lag < n:
        raise ValueError(f"lag must be in [0, {n})")
    centered = y - y.mean()
    return float(np.mean(centered * np.roll(centered, -lag)))


def estimate_log_acceptance_slope(ws: Sequence[float],
                                  acceptance_rates: Sequence[float]) -> float:
    """K-bar: minus the fitted slope of log acceptance rate against w."""
    ws = np.asarray(ws, float)
    rates = np.asarray(acceptance_rates, float)
    if ws.size < 2 or np.any(rates <= 0):
        raise ValueError("need >= 2 probe points with positive rates")
    slope = np.polyfit(ws, np.log(rates), 1)[0]
    return -float(slope)


def fit_slope(times: np.ndarray, values: np.ndarray,
              window: tuple[float, float]) -> float:
    """Least-squares slope of values against times inside a time window."""
    times = np.asarray(times, float)
    values = np.asarray(values, float)
    mask = (times >= window[0]) & (times <= window[1])
    if mask.sum() < 2:
        raise ValueError("window contains fewer than 2 points")
    return float(np.polyfit(times[mask], values[mask], 1)[0])
