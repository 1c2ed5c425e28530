"""Polytomous logistic regression with a hierarchical prior.

Three classes, four predictors, redundant parameterization b[j, k] for
j = 0..4 (intercept plus predictors) and k = 1..3 (classes):

    P(c = k | x) = exp(z_k) / sum_k' exp(z_k'),   z_k = b_0k + sum_j b_jk x_j

Priors: b_0k ~ N(0,1); b_jk | tau_j ~ N(0, 1/tau_j); tau_j | tau_* ~
Exp(tau_*); tau_* ~ Exp(1).

Chain state is a flat 35-vector: b (15, row-major), tau (4), tau_star (1),
momentum (15, aligned with b).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .kernels import (CompositeKernel, GibbsInversionKernel, LangevinKernel,
                      MomentumRefreshKernel, RandomGridKernel,
                      register_descriptor_kind)
from .streams import StreamKey, inv_normal_cdf, uniform_fill

__all__ = [
    "TRUE_B",
    "LogisticDataset",
    "LogisticModelState",
    "simulate_logistic_dataset",
    "LogisticPosterior",
    "build_sampling_schedule",
]

# true parameter values used to simulate the dataset
TRUE_B = np.array([
    [-2.0, 0.0, 1.0],
    [3.0, 1.0, 0.0],
    [0.0, -2.0, 2.0],
    [0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0],
])

N_CASES = 150
N_PRED = 4
N_CLASS = 3

# flat state layout
B_SLICE = slice(0, 15)
TAU_SLICE = slice(15, 19)
TAU_STAR_INDEX = 19
MOMENTUM_SLICE = slice(20, 35)
STATE_DIM = 35


@dataclass(frozen=True)
class LogisticDataset:
    """Simulated predictors (n x 4) and class labels in {1, 2, 3}."""

    predictors: np.ndarray
    classes: np.ndarray

    def __post_init__(self):
        if self.predictors.shape != (len(self.classes), N_PRED):
            raise ValueError("predictor matrix shape mismatch")
        if not np.all(np.isin(self.classes, [1, 2, 3])):
            raise ValueError("class labels must be in {1, 2, 3}")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"x{j + 1}" for j in range(N_PRED)] + ["class"])
            for row, c in zip(self.predictors, self.classes):
                writer.writerow([repr(float(v)) for v in row] + [int(c)])

    @classmethod
    def from_csv(cls, path) -> "LogisticDataset":
        xs, cs = [], []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for row in reader:
                xs.append([float(v) for v in row[:N_PRED]])
                cs.append(int(row[N_PRED]))
        return cls(np.array(xs), np.array(cs, dtype=int))


@dataclass
class LogisticModelState:
    """Structured view of the flat 35-dimensional chain state."""

    b: np.ndarray          # (5, 3)
    tau: np.ndarray        # (4,), positive
    tau_star: float        # positive
    momentum: np.ndarray   # (15,), aligned with b

    def __post_init__(self):
        if np.any(self.tau <= 0) or self.tau_star <= 0:
            raise ValueError("tau and tau_star must be positive")

    def pack(self) -> np.ndarray:
        out = np.empty(STATE_DIM)
        out[B_SLICE] = self.b.ravel()
        out[TAU_SLICE] = self.tau
        out[TAU_STAR_INDEX] = self.tau_star
        out[MOMENTUM_SLICE] = self.momentum
        return out

    @classmethod
    def unpack(cls, state: np.ndarray) -> "LogisticModelState":
        return cls(b=state[B_SLICE].reshape(5, 3).copy(),
                   tau=state[TAU_SLICE].copy(),
                   tau_star=float(state[TAU_STAR_INDEX]),
                   momentum=state[MOMENTUM_SLICE].copy())


def class_probabilities(b: np.ndarray, predictors: np.ndarray) -> np.ndarray:
    """Softmax class probabilities for each case; b is (5, 3)."""
    design = np.column_stack([np.ones(len(predictors)), predictors])
    z = design @ b
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def simulate_logistic_dataset(seed: int, n_cases: int = N_CASES
                              ) -> LogisticDataset:
    """Simulate the dataset: predictors MVN(0, var 2, corr 1/2), then labels.

    Uses its own seed, separate from any chain seed, so a run can pin the
    dataset it analysed.
    """
    cov = np.full((N_PRED, N_PRED), 1.0)
    np.fill_diagonal(cov, 2.0)
    chol = np.linalg.cholesky(cov)
    xs = np.empty((n_cases, N_PRED))
    cs = np.empty(n_cases, dtype=int)
    for i in range(n_cases):
        u = uniform_fill(seed, i, 0, N_PRED + 1)
        z = np.array([inv_normal_cdf(v) for v in u[:N_PRED]])
        xs[i] = chol @ z
        probs = class_probabilities(TRUE_B, xs[i:i + 1])[0]
        cdf = np.cumsum(probs)
        cs[i] = 1 + int(np.searchsorted(cdf, u[N_PRED]))
    return LogisticDataset(xs, cs)


class LogisticPosterior:
    """Posterior over (b, tau, tau_star) for a fixed dataset.

    Exposes the pieces the sampling schedule needs: the b-section energy and
    gradient (hyperparameters frozen), the tau_* conditional density, and
    the Gamma(5/2) conditionals for the tau_j.
    """

    name = "logistic"
    dimension = STATE_DIM

    def __init__(self, dataset: LogisticDataset):
        self.dataset = dataset
        n = len(dataset.classes)
        self.design = np.column_stack([np.ones(n), dataset.predictors])
        self.onehot = np.zeros((n, N_CLASS))
        self.onehot[np.arange(n), dataset.classes - 1] = 1.0

    def _check_tau(self, state: np.ndarray) -> None:
        if np.any(state[TAU_SLICE] <= 0) or state[TAU_STAR_INDEX] <= 0:
            raise ValueError("tau and tau_star must be positive")

    def log_likelihood(self, state: np.ndarray) -> float:
        b = state[B_SLICE].reshape(5, 3)
        z = self.design @ b
        zmax = z.max(axis=1)
        lse = zmax + np.log(np.exp(z - zmax[:, None]).sum(axis=1))
        picked = np.sum(z * self.onehot, axis=1)
        return float(np.sum(picked - lse))

    def log_density(self, state: np.ndarray) -> float:
        """Full log posterior (up to the likelihood's fixed normalization)."""
        self._check_tau(state)
        b = state[B_SLICE].reshape(5, 3)
        tau = state[TAU_SLICE]
        tau_star = state[TAU_STAR_INDEX]
        lp = self.log_likelihood(state)
        lp += -0.5 * float(b[0] @ b[0])
        lp += float(np.sum(0.5 * np.log(tau)[:, None] - 0.5 * tau[:, None]
                           * b[1:] ** 2))
        lp += float(np.sum(np.log(tau_star) - tau_star * tau))
        lp += -tau_star
        return lp

    def b_section_energy(self, state: np.ndarray) -> float:
        """-log posterior as a function of b alone (tau held fixed)."""
        b = state[B_SLICE].reshape(5, 3)
        tau = state[TAU_SLICE]
        prior = 0.5 * float(b[0] @ b[0]) + 0.5 * float(
            np.sum(tau[:, None] * b[1:] ** 2))
        return -self.log_likelihood(state) + prior

    def b_section_grad(self, state: np.ndarray) -> np.ndarray:
        """Gradient of the b-section energy, flattened to 15."""
        b = state[B_SLICE].reshape(5, 3)
        tau = state[TAU_SLICE]
        probs = class_probabilities(b, self.dataset.predictors)
        grad = self.design.T @ (probs - self.onehot)
        grad[0] += b[0]
        grad[1:] += tau[:, None] * b[1:]
        return grad.ravel()

    def tau_star_conditional_log_density(self, state: np.ndarray) -> float:
        """log p(tau_* | tau), natural scale, up to a constant."""
        tau_star = state[TAU_STAR_INDEX]
        if tau_star <= 0:
            return -math.inf
        return 4.0 * math.log(tau_star) - tau_star * (
            1.0 + float(np.sum(state[TAU_SLICE])))

    def tau_conditional(self, state: np.ndarray, j: int) -> tuple:
        """tau_j | b, tau_* is Gamma(5/2, tau_* + sum_k b_jk^2 / 2)."""
        b_row = state[B_SLICE].reshape(5, 3)[j + 1]
        rate = state[TAU_STAR_INDEX] + 0.5 * float(b_row @ b_row)
        return ("gamma", 2.5, rate)

    # prior draw doubles as the overdispersed initial distribution; the
    # momentum slots make the draw a complete chain state
    prior_budget = STATE_DIM

    def prior_sampler(self, key: StreamKey) -> np.ndarray:
        u = uniform_fill(key.seed, key.time_step, key.counter, STATE_DIM)
        tau_star = -math.log(1.0 - u[0])
        tau = -np.log(1.0 - u[1:5]) / tau_star
        b = np.empty((5, 3))
        b[0] = [inv_normal_cdf(v) for v in u[5:8]]
        scale = 1.0 / np.sqrt(tau)
        b[1:] = np.array([inv_normal_cdf(v)
                          for v in u[8:20]]).reshape(4, 3) * scale[:, None]
        mom = np.array([inv_normal_cdf(v) for v in u[20:35]])
        state = np.empty(STATE_DIM)
        state[B_SLICE] = b.ravel()
        state[TAU_SLICE] = tau
        state[TAU_STAR_INDEX] = tau_star
        state[MOMENTUM_SLICE] = mom
        return state


def build_sampling_schedule(posterior: LogisticPosterior,
                            langevin_epsilon: float = 0.05,
                            langevin_alpha: float = 0.97,
                            w_b: float = 0.01,
                            w_tau_star: float = 0.1,
                            outer_repeats: int = 10,
                            langevin_per_block: int = 10,
                            tau_star_per_block: int = 25) -> CompositeKernel:
    """The full hybrid update schedule as one composite kernel.

    Per time step: ``outer_repeats`` blocks of (Langevin-with-persistence on
    b, random-grid updates of log tau_*, Gibbs on each tau_j), then one
    multi-dimensional random-grid update of all b, one more random-grid
    update of log tau_*, Gibbs on each tau_j, and a full momentum refresh.
    """
    b_coords = np.arange(15)
    mom_coords = np.arange(20, 35)

    def langevin():
        return LangevinKernel(posterior.b_section_energy,
                              posterior.b_section_grad,
                              langevin_epsilon, langevin_alpha,
                              position=b_coords, momentum=mom_coords,
                              label="logistic-b")

    def rg_tau_star():
        return RandomGridKernel(posterior.tau_star_conditional_log_density,
                                w_tau_star, [TAU_STAR_INDEX], mode="multi",
                                transform="log", label="logistic-log-tau*")

    def gibbs_taus():
        return [GibbsInversionKernel(posterior.tau_conditional, j,
                                     coord=TAU_SLICE.start + j,
                                     label=f"logistic-tau[{j}]")
                for j in range(4)]

    subs = []
    for _ in range(outer_repeats):
        subs.extend(langevin() for _ in range(langevin_per_block))
        subs.extend(rg_tau_star() for _ in range(tau_star_per_block))
        subs.extend(gibbs_taus())
    subs.append(RandomGridKernel(
        lambda s: -posterior.b_section_energy(s), w_b, b_coords,
        mode="multi", label="logistic-b"))
    subs.append(rg_tau_star())
    subs.extend(gibbs_taus())
    subs.append(MomentumRefreshKernel(mom_coords, label="logistic"))
    kernel = CompositeKernel(subs, label="logistic-schedule")
    kernel.schedule_params = {
        "kind": "logistic_schedule",
        "langevin_epsilon": langevin_epsilon,
        "langevin_alpha": langevin_alpha,
        "w_b": w_b, "w_tau_star": w_tau_star,
        "outer_repeats": outer_repeats,
        "langevin_per_block": langevin_per_block,
        "tau_star_per_block": tau_star_per_block,
    }
    kernel.descriptor = lambda: dict(kernel.schedule_params)
    return kernel


def _schedule_from_descriptor(desc: dict, targets: dict) -> CompositeKernel:
    params = {k: v for k, v in desc.items() if k != "kind"}
    return build_sampling_schedule(targets["logistic"], **params)


register_descriptor_kind("logistic_schedule", _schedule_from_descriptor)
