"""The five experiment pipelines behind the command-line runner.

Each experiment returns a plain-dict report and, when an output directory is
configured, writes three artifacts: trace.csv, summary.json, and
manifest.json (enough to reproduce the outputs bit-exactly).
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import analysis, engine, kernels, logistic, streams, targets
from .fastpath import MvnScheduleKernel

__all__ = [
    "RunConfig",
    "experiment_normal1d",
    "experiment_bimodal",
    "experiment_mvn9",
    "experiment_table1",
    "experiment_logistic",
    "TABLE1_STAGES",
    "TABLE1_STAGES_SHORT",
    "TABLE1_PREDICTION_INPUTS",
    "table1_predictions",
]

# sigma stages for the varying-stepsize Metropolis schedule; each stage is
# four times longer than the last, and the first three stages total 42000
TABLE1_STAGES = ((0.04, 2000), (0.02, 8000), (0.01, 32000), (0.005, 128000))
TABLE1_STAGES_SHORT = TABLE1_STAGES[:3]

# coalescent-proposal probabilities C(w) for the separations reached by the
# long and short schedules, with the empirical acceptance rates; the same
# C(w) feeds both the multi-dimensional and the single-component-sweep
# predictions for a given schedule
TABLE1_PREDICTION_INPUTS = {
    "C_long": {0.1: 0.202, 0.2: 0.48, 0.4: 0.699},
    "C_short": {0.1: 0.044, 0.2: 0.245, 0.4: 0.51},
    "accept_multi": {0.1: 0.55, 0.2: 0.24, 0.4: 0.041},
    "accept_single_sweep": {0.1: 0.26, 0.2: 0.067, 0.4: 0.0025},
}

# the nine-dimensional example's coupled-chain start states
MVN9_START_A = np.array([1.1, 0.5, 0, 0, 0, 0, 0.5, 0.4, 0.3])
MVN9_START_B = np.array([-0.9, -0.5, 0, 0, 0, 0, -0.6, -0.4, -0.2])


@dataclass
class RunConfig:
    """Validated experiment configuration; mirrors the CLI flags."""

    experiment: str
    seed: int = 1
    n_steps: int = 1000
    r: int = 10
    k: Optional[int] = None
    max_restarts: Optional[int] = None
    w: Optional[float] = None
    sigma: Optional[float] = None
    epsilon: Optional[float] = None
    alpha: Optional[float] = None
    mode: str = "single-random"
    study: str = "approach"
    n_seeds: int = 200
    n_replicates: int = 9
    n_updates: int = 100_000
    record_every: int = 10
    dataset_seed: Optional[int] = None
    dataset_csv: Optional[str] = None
    schedule: str = "long"
    stages: Optional[list] = None  # [[sigma, count], ...] overrides schedule
    out_dir: Optional[str] = None

    def validate(self) -> None:
        if self.n_steps < 2:
            raise ValueError("N must be >= 2")
        if self.r < 1 or self.n_steps % self.r:
            raise ValueError(f"r={self.r} must divide N={self.n_steps}")
        if self.k is not None and not 0 < self.k < self.n_steps / 2:
            raise ValueError(f"k={self.k} must be in (0, N/2)")

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls(**json.load(fh))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def _write_outputs(config: RunConfig, report: dict, manifest: dict,
                   trace_columns: Optional[dict] = None) -> None:
    if config.out_dir is None:
        return
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "summary.json", "w") as fh:
        json.dump(_jsonable(report), fh, indent=2)
    with open(out / "manifest.json", "w") as fh:
        json.dump(_jsonable(manifest), fh, indent=2)
    if trace_columns:
        names = list(trace_columns)
        cols = [np.asarray(trace_columns[n]).ravel() for n in names]
        with open(out / "trace.csv", "w") as fh:
            fh.write(",".join(names) + "\n")
            for row in zip(*cols):
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _manifest(config: RunConfig, kernel, status: str, extras: dict,
              wall_time: float) -> dict:
    return {
        "config": asdict(config),
        "kernel": kernel.descriptor() if kernel is not None else None,
        "status": status,
        "wall_time_s": wall_time,
        **extras,
    }


def _trace_columns(y: np.ndarray) -> dict:
    cols = {"t": np.arange(len(y))}
    for i in range(y.shape[1]):
        cols[f"y{i}"] = y[:, i]
    return cols


def experiment_normal1d(config: RunConfig) -> dict:
    """Fig-1 style run: wrapped chain plus auxiliary diagnostic chains."""
    config.validate()
    w = 0.5 if config.w is None else config.w
    k = 300 if config.k is None else config.k
    target = targets.normal1d()
    kernel = kernels.rg_metropolis_kernel(target, w, mode="multi")
    p0 = engine.NormalInitial(0.0, 5.0, 1)
    t0 = time.perf_counter()
    res = engine.run_with_diagnostics(kernel, p0, config.seed,
                                      config.n_steps, config.r, k)
    wall = time.perf_counter() - t0
    y = res.y_trace[:, 0]
    report = {
        "status": res.status,
        "coalescence_counts": res.coalescence_counts,
        "censored": res.censored,
        "y_mean": float(y.mean()),
        "y_var": float(y.var()),
        "total_iterations": res.total_iterations,
    }
    _write_outputs(config, report,
                   _manifest(config, kernel, res.status,
                             {"c_i": res.coalescence_counts}, wall),
                   _trace_columns(res.y_trace))
    return report


def _classify_bimodal(y: np.ndarray, threshold: float = 0.5) -> str:
    if y.max() < threshold:
        return "single-mode-lower"
    if y.min() > threshold:
        return "single-mode-upper"
    return "both-modes"


def experiment_bimodal(config: RunConfig) -> dict:
    """Batch of parallel runs on the mixture target, classified per run."""
    config.validate()
    w = 0.5 if config.w is None else config.w
    target = targets.bimodal()
    kernel = kernels.rg_metropolis_kernel(target, w, mode="multi")
    p0 = engine.NormalInitial(0.0, 5.0, 1)
    t0 = time.perf_counter()
    classes, runs = [], []
    pooled_sum, pooled_n = 0.0, 0
    for i in range(config.n_seeds):
        seed = config.seed + i
        res = engine.run_parallel(kernel, p0, seed, config.n_steps,
                                  config.r, config.max_restarts)
        if res.status == "split_cycles":
            label = "split_cycles"
        elif res.status == "cap_exceeded":
            label = "cap_exceeded"
        else:
            label = _classify_bimodal(res.y_trace[:, 0])
            pooled_sum += float(res.y_trace[:, 0].sum())
            pooled_n += res.y_trace.shape[0]
        classes.append(label)
        runs.append({"seed": seed, "status": res.status, "class": label,
                     "restarts": res.restart_counts})
    wall = time.perf_counter() - t0
    n = len(classes)
    single = sum(c.startswith("single-mode") for c in classes)
    split = classes.count("split_cycles")
    report = {
        "n_runs": n,
        "single_mode_fraction": single / n,
        "split_cycles_fraction": split / n,
        "cap_exceeded_fraction": classes.count("cap_exceeded") / n,
        "pooled_y_mean": pooled_sum / pooled_n if pooled_n else math.nan,
        "classes": {c: classes.count(c) for c in sorted(set(classes))},
    }
    _write_outputs(config, report,
                   _manifest(config, kernel, "batch", {"runs": runs}, wall))
    return report


def _phase_start(position: np.ndarray, seed: int, identity: int
                 ) -> np.ndarray:
    """Pack a fixed position with momentum drawn from the identity stream."""
    d = position.size
    u = streams.uniform_fill(seed, engine.INIT_TIME_BASE + identity, 0, d)
    p = np.array([streams.inv_normal_cdf(v) for v in u])
    return np.concatenate([position, p])


def measure_acceptance_rate(kernel, state0: np.ndarray, seed: int,
                            n_updates: int, position_dims: int) -> float:
    """Fraction of updates that move the position coordinates."""
    state = state0.copy()
    accepted = 0
    for t in range(n_updates):
        new = engine._advance(kernel, state, seed, t)
        if not np.array_equal(new[:position_dims], state[:position_dims]):
            accepted += 1
        state = new
    return accepted / n_updates


def _mvn9_kernel_for_study(config: RunConfig, target) -> tuple:
    study = config.study
    if study in ("approach", "coalesce"):
        single = config.mode in ("single-random", "single")
        if study == "approach":
            w = (0.03 if single else 0.01) if config.w is None else config.w
        else:
            w = (0.12 if single else 0.04) if config.w is None else config.w
        mode = "single-random" if single else "multi"
        kern = kernels.rg_metropolis_kernel(target, w, mode=mode)
        omega = w ** 2 / (3 * 9) if single else w ** 2 / 3
        return kern, omega, False
    if study == "metropolis":
        single = config.mode in ("single-random", "single")
        sigma = ((0.017 if single else 0.0058) if config.sigma is None
                 else config.sigma)
        mode = "single-random" if single else "multi"
        kern = kernels.rw_metropolis_kernel(target, sigma, mode=mode)
        omega = sigma ** 2 / 9 if single else sigma ** 2
        return kern, omega, False
    if study == "langevin":
        eps = 0.08 if config.epsilon is None else config.epsilon
        alpha = 0.0 if config.alpha is None else config.alpha
        kern = kernels.langevin_kernel(target, eps, alpha)
        return kern, None, True
    if study == "gibbs":
        return kernels.gibbs_sweep_kernel(target), None, False
    raise ValueError(f"unknown mvn9 study {config.study!r}")


def experiment_mvn9(config: RunConfig) -> dict:
    """Coupled-pair studies on the nine-dimensional normal example."""
    target = targets.mvn9()
    spec = target.mvn9_spec
    kern, omega, phase = _mvn9_kernel_for_study(config, target)
    n_steps = {"approach": 40_000, "coalesce": 60_000, "metropolis": 40_000,
               "langevin": 6000, "gibbs": 2000}[config.study] \
        if config.n_steps == 1000 else config.n_steps
    a0, b0 = MVN9_START_A.copy(), MVN9_START_B.copy()
    if phase:
        a0 = _phase_start(a0, config.seed, 0)
        b0 = _phase_start(b0, config.seed, 1)
    t0 = time.perf_counter()
    pair = engine.run_coupled_pair(kern, a0, b0, config.seed, n_steps,
                                   record_every=config.record_every,
                                   stop_on_coalesce=True)
    pos_a, pos_b = pair.trace_a[:, :9], pair.trace_b[:, :9]
    diffs = pos_a - pos_b
    sq_prec = np.einsum("ti,ij,tj->t", diffs, spec.precision, diffs)
    sq_eucl = np.einsum("ti,ti->t", diffs, diffs)
    with np.errstate(divide="ignore"):
        log_sq_prec = np.log(sq_prec)
        log_sq_eucl = np.log(sq_eucl)
    report = {
        "study": config.study,
        "n_steps": int(pair.times[-1]),
        "coalesce_time": pair.coalesce_time,
    }
    if omega is not None:
        lam = spec.eigenvalues
        early = analysis.fit_slope(pair.times, log_sq_prec, (0, 1500))
        late_window = (4000, n_steps)
        finite = np.isfinite(log_sq_prec)
        late = analysis.fit_slope(pair.times[finite], log_sq_prec[finite],
                                  late_window)
        report.update({
            "omega": omega,
            "early_slope": early,
            "late_slope": late,
            "predicted_early_slope": -omega * float(lam[1]),
            "predicted_late_slope": -omega * float(lam[8]),
        })
    if config.study in ("langevin", "metropolis"):
        eq = engine.ExactInitial(targets.phase_extend(target) if phase
                                 else target)
        start = eq.draw(config.seed, 7)
        rate = measure_acceptance_rate(kern, start, config.seed + 1,
                                       config.n_updates, 9)
        report["rejection_rate"] = 1.0 - rate
    wall = time.perf_counter() - t0
    trace = {"t": pair.times, "log_sq_dist_prec": log_sq_prec,
             "log_sq_dist_euclid": log_sq_eucl,
             "a0": pair.trace_a[:, 0], "b0": pair.trace_b[:, 0]}
    _write_outputs(config, report,
                   _manifest(config, kern, "pair", {}, wall), trace)
    return report


def table1_predictions() -> dict:
    """The predicted mean coalescence tries for all nine table cells."""
    inputs = TABLE1_PREDICTION_INPUTS
    out = {}
    for label, c_key, a_key in (
            ("multi_170000", "C_long", "accept_multi"),
            ("multi_42000", "C_short", "accept_multi"),
            ("single_170000", "C_long", "accept_single_sweep")):
        out[label] = {
            w: round(analysis.predict_mean_tries(inputs[c_key][w],
                                                 inputs[a_key][w]))
            for w in (0.1, 0.2, 0.4)}
    return out


def experiment_table1(config: RunConfig) -> dict:
    """Observed vs predicted coalescence times for the schedule pipeline."""
    target = targets.mvn9()
    if config.stages is not None:
        stages = [(float(s), int(c)) for s, c in config.stages]
    else:
        stages = TABLE1_STAGES if config.schedule == "long" \
            else TABLE1_STAGES_SHORT
    n_steps = 100 if config.n_steps == 1000 else config.n_steps
    p0 = engine.FixedInitial(np.zeros(9))
    t0 = time.perf_counter()
    cells = {}
    ws = (0.1, 0.2, 0.4) if config.w is None else (config.w,)
    for w in ws:
        kern = MvnScheduleKernel(target.mvn9_spec.precision, stages, w=w)
        times, censored = [], []
        for i in range(config.n_replicates):
            res = engine.run_circular_basic(kern, p0, config.seed + i,
                                            n_steps)
            c0 = res.coalescence_counts[0]
            flag = res.censored[0]
            # a wrap that only closes at t=0 coalesced after 0 tries; count
            # the first grid update as try 1 for the exponential model
            times.append(max(c0, 1) if not flag else c0)
            censored.append(flag)
        record = analysis.CoalescenceRecord.from_lists(times, n_steps,
                                                       censored)
        cell = {"times": times, "censored_count": sum(censored)}
        if record.n_events >= 2:
            mean, interval = analysis.coalescence_posterior(record)
            cell.update({"posterior_mean": mean, "interval_90": interval})
        cells[w] = cell
    wall = time.perf_counter() - t0
    report = {
        "schedule": config.schedule,
        "observed": cells,
        "predictions": table1_predictions(),
        "prediction_inputs": TABLE1_PREDICTION_INPUTS,
    }
    _write_outputs(config, report,
                   _manifest(config, None, "table", {}, wall))
    return report


def experiment_logistic(config: RunConfig) -> dict:
    """The full hierarchical-logistic pipeline on the parallel engine."""
    n_steps = 100 if config.n_steps == 1000 else config.n_steps
    if config.dataset_csv:
        dataset = logistic.LogisticDataset.from_csv(config.dataset_csv)
        dataset_seed = None
    else:
        dataset_seed = (config.seed + 9000 if config.dataset_seed is None
                        else config.dataset_seed)
        dataset = logistic.simulate_logistic_dataset(dataset_seed)
    posterior = logistic.LogisticPosterior(dataset)
    kernel = logistic.build_sampling_schedule(posterior)
    p0 = engine.PriorInitial(posterior)
    t0 = time.perf_counter()
    res = engine.run_parallel(kernel, p0, config.seed, n_steps, config.r,
                              config.max_restarts)
    wall = time.perf_counter() - t0
    y = res.y_trace
    b = y[:, logistic.B_SLICE].reshape(-1, 5, 3)
    tau = y[:, logistic.TAU_SLICE]
    tau_star = y[:, logistic.TAU_STAR_INDEX]
    sigma_tau = 1.0 / np.sqrt(tau)
    report = {
        "status": res.status,
        "restart_counts": res.restart_counts,
        "max_restarts_seen": max(res.restart_counts),
        "total_iterations": res.total_iterations,
        "mean_inv_sqrt_tau": sigma_tau.mean(axis=0).tolist(),
        "shrinkage_ordering": bool(
            sigma_tau[:, 2:].mean(axis=0).max()
            < sigma_tau[:, :2].mean(axis=0).min()),
        "dataset_seed": dataset_seed,
        "class_counts": np.bincount(dataset.classes, minlength=4)[1:]
        .tolist(),
    }
    trace = {"t": np.arange(len(y))}
    for j in range(5):
        trace[f"b{j}1_minus_b{j}2"] = b[:, j, 0] - b[:, j, 1]
        trace[f"b{j}2_minus_b{j}3"] = b[:, j, 1] - b[:, j, 2]
    for j in range(4):
        trace[f"log10_inv_sqrt_tau{j + 1}"] = np.log10(sigma_tau[:, j])
    trace["log10_inv_sqrt_tau_star"] = np.log10(1.0 / np.sqrt(tau_star))
    if config.out_dir is not None:
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        dataset.to_csv(out / "dataset.csv")
    _write_outputs(config, report,
                   _manifest(config, kernel, res.status,
                             {"dataset_seed": dataset_seed}, wall), trace)
    return report
