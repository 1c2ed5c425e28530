"""Standard, circularly-coupled, and parallel simulation of coupled chains.

Times are indexed modulo N; all chains at time t consume the block addressed
by (seed, t), so re-simulating any stretch of any chain replays the identical
randomness.  Initial draws live in a reserved time-step space so adding
auxiliary chains never perturbs the main chain.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .streams import StreamKey, block_for, inv_normal_cdf, uniform_fill
from .targets import TargetDistribution

__all__ = [
    "INIT_TIME_BASE",
    "NormalInitial",
    "FixedInitial",
    "ExactInitial",
    "PriorInitial",
    "PhaseInitial",
    "CircularRunResult",
    "SegmentMessage",
    "OracleResult",
    "CoupledPairResult",
    "run_standard",
    "run_circular_basic",
    "run_with_diagnostics",
    "run_parallel",
    "theoretical_oracle",
    "estimate_expectations",
    "run_coupled_pair",
]

# initial draws use time steps from here up, one slot per chain identity, so
# they can never collide with transition blocks at times 0..N-1
INIT_TIME_BASE = 1 << 62
_ORACLE_V_ID = 1 << 20
_ORACLE_W_ID = (1 << 20) + 1


class NormalInitial:
    """Spherical normal initial distribution N(mean, sd^2 I)."""

    def __init__(self, mean: float, sd: float, dim: int):
        self.mean = mean
        self.sd = sd
        self.dim = dim

    def draw(self, seed: int, identity: int) -> np.ndarray:
        u = uniform_fill(seed, INIT_TIME_BASE + identity, 0, self.dim)
        return self.mean + self.sd * np.array(
            [inv_normal_cdf(v) for v in u])

    def describe(self) -> dict:
        return {"kind": "normal", "mean": self.mean, "sd": self.sd,
                "dim": self.dim}


class FixedInitial:
    """Point-mass initial distribution (consumes no randomness)."""

    def __init__(self, state: np.ndarray):
        self.state = np.asarray(state, dtype=float)

    def draw(self, seed: int, identity: int) -> np.ndarray:
        return self.state.copy()

    def describe(self) -> dict:
        return {"kind": "fixed", "state": self.state.tolist()}


class ExactInitial:
    """Draw the start state from the target itself (equilibrium start)."""

    def __init__(self, target: TargetDistribution):
        if target.exact_sampler is None:
            raise ValueError(f"target {target.name} has no exact sampler")
        self.target = target

    def draw(self, seed: int, identity: int) -> np.ndarray:
        return self.target.exact_sampler(
            StreamKey(seed, INIT_TIME_BASE + identity, 0))

    def describe(self) -> dict:
        return {"kind": "exact", "target": self.target.name}


class PriorInitial:
    """Draw the start state from a model prior (logistic posterior)."""

    def __init__(self, posterior):
        self.posterior = posterior

    def draw(self, seed: int, identity: int) -> np.ndarray:
        return self.posterior.prior_sampler(
            StreamKey(seed, INIT_TIME_BASE + identity, 0))

    def describe(self) -> dict:
        return {"kind": "prior", "target": self.posterior.name}


class PhaseInitial:
    """Extend an initial distribution with N(0, I) momentum slots."""

    def __init__(self, inner, dim: int, inner_budget: int):
        self.inner = inner
        self.dim = dim
        self.inner_budget = inner_budget

    def draw(self, seed: int, identity: int) -> np.ndarray:
        x = self.inner.draw(seed, identity)
        u = uniform_fill(seed, INIT_TIME_BASE + identity,
                         self.inner_budget, self.dim)
        p = np.array([inv_normal_cdf(v) for v in u])
        return np.concatenate([x, p])

    def describe(self) -> dict:
        return {"kind": "phase", "inner": self.inner.describe(),
                "dim": self.dim}


@dataclass(frozen=True)
class SegmentMessage:
    """Boundary-state handoff for the parallel procedure."""

    segment_index: int
    boundary_state: np.ndarray
    generation: int


@dataclass
class CircularRunResult:
    """Wrapped-around trace plus coalescence diagnostics."""

    y_trace: np.ndarray
    status: str
    x_trace: Optional[np.ndarray] = None
    coalescence_counts: Optional[list] = None
    censored: Optional[list] = None
    restart_counts: Optional[list] = None
    boundary_consistent: Optional[list] = None
    total_iterations: int = 0
    seed: int = 0
    n_steps: int = 0
    r: int = 1
    k: Optional[int] = None


@dataclass
class OracleResult:
    y_trace: np.ndarray
    y_final: np.ndarray
    events: dict
    x_trace: np.ndarray


@dataclass
class CoupledPairResult:
    times: np.ndarray
    trace_a: np.ndarray
    trace_b: np.ndarray
    coalesce_time: Optional[int]


def _states_equal(a: np.ndarray, b: np.ndarray) -> bool:
    return np.array_equal(a, b)


def _advance(kernel, state: np.ndarray, seed: int, t: int) -> np.ndarray:
    return kernel.step(state, block_for(seed, t, kernel.variate_budget))


def run_standard(kernel, p0, seed: int, n_steps: int) -> np.ndarray:
    """Ordinary simulation; returns the trace x_0..x_N as an (N+1, d) array."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    x = p0.draw(seed, 0)
    trace = np.empty((n_steps + 1, x.size))
    trace[0] = x
    for t in range(1, n_steps + 1):
        x = _advance(kernel, x, seed, t - 1)
        trace[t] = x
    return trace


def run_circular_basic(kernel, p0, seed: int, n_steps: int,
                       censor_cap: Optional[int] = None) -> CircularRunResult:
    """Simulate x_0..x_N, wrap around (y_0 = x_N), replay the same blocks.

    The y chain is advanced until it coalesces with the x chain, after which
    the remaining y_t are copies of x_t.  Estimation uses y_0..y_{N-1} only.
    """
    if n_steps < 2:
        raise ValueError("n_steps must be >= 2")
    x_trace = run_standard(kernel, p0, seed, n_steps)
    n_iter = n_steps
    cap = n_steps if censor_cap is None else censor_cap
    y_trace = np.empty_like(x_trace)
    y_trace[0] = x_trace[n_steps]
    coalesce_at: Optional[int] = None
    for t in range(1, n_steps + 1):
        if _states_equal(y_trace[t - 1], x_trace[t - 1]):
            coalesce_at = t - 1
            y_trace[t:] = x_trace[t:]
            break
        y_trace[t] = _advance(kernel, y_trace[t - 1], seed, t - 1)
        n_iter += 1
    if coalesce_at is None and _states_equal(y_trace[n_steps],
                                             x_trace[n_steps]):
        coalesce_at = n_steps
    status = "coalesced" if coalesce_at is not None else "wrap_failed"
    if coalesce_at is not None and coalesce_at <= cap:
        c0, censored = coalesce_at, False
    else:
        c0, censored = cap, True
    return CircularRunResult(
        y_trace=y_trace[:n_steps], status=status, x_trace=x_trace,
        coalescence_counts=[c0], censored=[censored],
        total_iterations=n_iter, seed=seed, n_steps=n_steps, k=cap)


def run_with_diagnostics(kernel, p0, seed: int, n_steps: int, r: int,
                         k: int) -> CircularRunResult:
    """Circular coupling plus r-1 auxiliary chains started around the cycle.

    Auxiliary chain i starts at time iN/r from a fresh p0 draw (identity i)
    and is advanced, times modulo N, until it coalesces with the wrapped
    chain or k steps elapse; c_i records the step count, censored at k.
    """
    if n_steps % r != 0:
        raise ValueError(f"r={r} does not divide N={n_steps}")
    if not 0 < k < n_steps // 2:
        raise ValueError(f"k={k} must be in (0, N/2)")
    base = run_circular_basic(kernel, p0, seed, n_steps, censor_cap=k)
    y = base.y_trace
    counts = list(base.coalescence_counts)
    censored = list(base.censored)
    n_iter = base.total_iterations
    for i in range(1, r):
        s = i * n_steps // r
        z = p0.draw(seed, i)
        c_i = 0
        for step in range(k):
            t_prev = (s + step) % n_steps
            if _states_equal(z, y[t_prev]):
                break
            z = _advance(kernel, z, seed, t_prev)
            c_i += 1
            n_iter += 1
        counts.append(c_i)
        censored.append(c_i == k and not _states_equal(
            z, y[(s + c_i) % n_steps]))
    return CircularRunResult(
        y_trace=y, status=base.status, x_trace=base.x_trace,
        coalescence_counts=counts, censored=censored,
        total_iterations=n_iter, seed=seed, n_steps=n_steps, r=r, k=k)


@dataclass
class _Worker:
    index: int
    start_time: int
    states: np.ndarray          # this segment's y values, seg_len rows
    boundary: np.ndarray = None     # phi applied to the last state
    generation_sent: int = 0
    generation_seen: int = 0
    restarts: int = 0


def run_parallel(kernel, p0, seed: int, n_steps: int, r: int,
                 max_restarts: Optional[int] = None,
                 lifo: bool = False) -> CircularRunResult:
    """Find the wrapped-around chain with r logical segment workers.

    Each worker owns times [iN/r, (i+1)N/r), starts from its own p0 draw
    (identity i), and hands its boundary state to the next worker (modulo
    r).  A worker receiving a new start re-simulates until its states match
    the previous pass, forwarding a new boundary only if it changed.
    Messages carry generations; stale ones are dropped, which makes the
    terminating result independent of delivery order (``lifo`` exists to
    let tests exercise that).
    """
    if n_steps % r != 0:
        raise ValueError(f"r={r} does not divide N={n_steps}")
    if max_restarts is None:
        max_restarts = r
    if max_restarts < 1:
        raise ValueError("max_restarts must be >= 1")
    seg_len = n_steps // r
    workers = []
    n_iter = 0
    queue: deque = deque()
    for i in range(r):
        s = i * seg_len
        state = p0.draw(seed, i)
        states = np.empty((seg_len, state.size))
        states[0] = state
        for j in range(1, seg_len):
            state = _advance(kernel, state, seed, s + j - 1)
            states[j] = state
            n_iter += 1
        w = _Worker(index=i, start_time=s, states=states)
        # copy: a rejected update returns its input, which here is a view
        # into the states buffer that later re-simulation mutates
        w.boundary = _advance(kernel, states[-1], seed,
                              s + seg_len - 1).copy()
        n_iter += 1
        w.generation_sent = 1
        queue.append(SegmentMessage((i + 1) % r, w.boundary, 1))
        workers.append(w)
    cap_hit = False
    while queue and not cap_hit:
        msg = queue.pop() if lifo else queue.popleft()
        w = workers[msg.segment_index]
        if msg.generation <= w.generation_seen:
            continue
        w.generation_seen = msg.generation
        if _states_equal(msg.boundary_state, w.states[0]):
            continue
        w.restarts += 1
        if w.restarts > max_restarts:
            cap_hit = True
            break
        w.states[0] = msg.boundary_state
        coalesced = False
        for j in range(1, seg_len):
            new = _advance(kernel, w.states[j - 1], seed,
                           w.start_time + j - 1)
            n_iter += 1
            if _states_equal(new, w.states[j]):
                coalesced = True
                break
            w.states[j] = new
        if not coalesced:
            new_boundary = _advance(kernel, w.states[-1], seed,
                                    w.start_time + seg_len - 1).copy()
            n_iter += 1
            if not _states_equal(new_boundary, w.boundary):
                w.boundary = new_boundary
                w.generation_sent += 1
                queue.append(SegmentMessage((w.index + 1) % r,
                                            new_boundary,
                                            w.generation_sent))
    consistent = [
        _states_equal(workers[i].boundary, workers[(i + 1) % r].states[0])
        for i in range(r)]
    breaks = consistent.count(False)
    if breaks == 0:
        status = "coalesced"
    elif breaks >= 2:
        status = "split_cycles"
    else:
        status = "cap_exceeded"
    y = np.vstack([w.states for w in workers])
    return CircularRunResult(
        y_trace=y, status=status,
        restart_counts=[w.restarts for w in workers],
        boundary_consistent=consistent,
        total_iterations=n_iter, seed=seed, n_steps=n_steps, r=r)


def theoretical_oracle(kernel, target: TargetDistribution, p0, seed: int,
                       n_steps: int) -> OracleResult:
    """The unrunnable-in-practice construction used to justify wrapping.

    Needs a target with an exact sampler.  Splices y from two chains
    started at times 0 and N/2 with exact equilibrium draws, and reports
    whether the three coalescence events occurred that make the spliced y
    identical to the practical procedure's y.
    """
    if n_steps % 2 != 0:
        raise ValueError("n_steps must be even")
    if target.exact_sampler is None:
        raise ValueError(f"target {target.name} has no exact sampler")
    half = n_steps // 2
    x_trace = run_standard(kernel, p0, seed, n_steps)
    v = np.empty((half + 1, x_trace.shape[1]))
    v[0] = target.exact_sampler(
        StreamKey(seed, INIT_TIME_BASE + _ORACLE_V_ID, 0))
    for t in range(1, half + 1):
        v[t] = _advance(kernel, v[t - 1], seed, t - 1)
    w = np.empty((half + 1, x_trace.shape[1]))  # w[j] holds w_{N/2+j}
    w[0] = target.exact_sampler(
        StreamKey(seed, INIT_TIME_BASE + _ORACLE_W_ID, 0))
    for j in range(1, half + 1):
        w[j] = _advance(kernel, w[j - 1], seed, half + j - 1)
    v_star = np.empty((half + 1, x_trace.shape[1]))  # v*[j] = v*_{N/2+j}
    v_star[0] = v[half]
    for j in range(1, half + 1):
        v_star[j] = _advance(kernel, v_star[j - 1], seed, half + j - 1)
    w_star = np.empty((half + 1, x_trace.shape[1]))  # w*[t] for t=0..N/2
    w_star[0] = w[half]
    for t in range(1, half + 1):
        w_star[t] = _advance(kernel, w_star[t - 1], seed, t - 1)
    y = np.vstack([w_star[:half], v_star])  # y_0..y_N
    events = {
        "a": _states_equal(v[half], w_star[half]),
        "b": _states_equal(w[half], v_star[half]),
        "c": _states_equal(x_trace[n_steps], v_star[half]),
    }
    return OracleResult(y_trace=y[:n_steps], y_final=y[n_steps],
                        events=events, x_trace=x_trace)


def estimate_expectations(result: CircularRunResult,
                          functions: dict) -> dict:
    """Average each named function over the wrapped chain y_0..y_{N-1}."""
    if result.status == "cap_exceeded":
        raise ValueError("cannot estimate from a cap_exceeded run")
    out = {}
    for name, fn in functions.items():
        out[name] = float(np.mean([fn(y) for y in result.y_trace]))
    return out


def run_coupled_pair(kernel, state_a: np.ndarray, state_b: np.ndarray,
                     seed: int, n_steps: int, record_every: int = 1,
                     stop_on_coalesce: bool = True) -> CoupledPairResult:
    """Advance two chains with shared blocks, recording both trajectories."""
    a = np.asarray(state_a, dtype=float).copy()
    b = np.asarray(state_b, dtype=float).copy()
    times, ta, tb = [0], [a.copy()], [b.copy()]
    coalesce_time = 0 if _states_equal(a, b) else None
    stopped = None
    for t in range(n_steps):
        block = block_for(seed, t, kernel.variate_budget)
        a = kernel.step(a, block)
        b = kernel.step(b, block)
        if (t + 1) % record_every == 0:
            times.append(t + 1)
            ta.append(a.copy())
            tb.append(b.copy())
        if coalesce_time is None and _states_equal(a, b):
            coalesce_time = t + 1
            if stop_on_coalesce:
                stopped = t + 1
                break
    if stopped is not None and times[-1] != stopped:
        times.append(stopped)
        ta.append(a.copy())
        tb.append(b.copy())
    return CoupledPairResult(times=np.array(times), trace_a=np.array(ta),
                             trace_b=np.array(tb),
                             coalesce_time=coalesce_time)
