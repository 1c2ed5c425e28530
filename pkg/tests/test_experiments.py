import math

import numpy as np
import pytest

from circmc import analysis, engine, kernels, targets
from circmc.experiments import (MVN9_START_A, MVN9_START_B, RunConfig,
                                experiment_mvn9)
from circmc.streams import block_for, inv_normal_cdf

RNG = np.random.default_rng(99)


def test_langevin_h_error_reproduces_acceptance():
    # |dH| stays finite and mean(min(1, exp(-dH))) matches the empirical
    # acceptance within binomial error
    target = targets.mvn9()
    eps = 0.08
    kern = kernels.langevin_kernel(target, eps)
    state = engine.ExactInitial(targets.phase_extend(target)).draw(3, 0)
    n = 20_000
    accepts = 0
    probs = np.empty(n)
    for t in range(n):
        blk = block_for(41, t, kern.variate_budget)
        # replicate the leapfrog arithmetic to extract dH for this block
        p = np.array([inv_normal_cdf(blk[i]) for i in range(9)])
        x = state[:9]
        p_half = p - 0.5 * eps * target.grad_neg_log_density(x)
        x_star = x + eps * p_half
        p_star = p_half - 0.5 * eps * target.grad_neg_log_density(x_star)
        delta_h = (-target.log_density(x_star) + target.log_density(x)
                   + 0.5 * (p_star @ p_star) - 0.5 * (p @ p))
        assert math.isfinite(delta_h)
        probs[t] = min(1.0, math.exp(-delta_h))
        new = kern.step(state, blk)
        accepts += not np.array_equal(new[:9], state[:9])
        state = new
    predicted = probs.mean()
    se = math.sqrt(predicted * (1 - predicted) / n)
    assert abs(accepts / n - predicted) < 4 * se


def test_langevin_1d_log_concave_approach():
    # on the 1-D standard normal the coupled distance shrinks whenever the
    # update does not overshoot, and shrinks overall across 1000 steps
    target = targets.normal1d()
    kern = kernels.langevin_kernel(target, 0.1, corrected=False)
    a = np.array([2.0, 0.0])
    b = np.array([-1.5, 0.0])
    gap0 = abs(a[0] - b[0])
    for t in range(1000):
        blk = block_for(8, t, kern.variate_budget)
        na, nb = kern.step(a, blk), kern.step(b, blk)
        old_gap, new_gap = abs(a[0] - b[0]), abs(na[0] - nb[0])
        same_order = (a[0] - b[0]) * (na[0] - nb[0]) > 0
        if same_order and old_gap > 1e-12:
            assert new_gap < old_gap
        a, b = na, nb
    assert abs(a[0] - b[0]) < gap0


def test_quasi_stable_distance_grows_with_w():
    # after the approach phase, the residual squared distance scales with
    # the step size: larger w leaves a higher floor (qualitative check)
    target = targets.mvn9()
    prec = target.mvn9_spec.precision
    floors = {}
    for w in (0.01, 0.04):
        kern = kernels.rg_metropolis_kernel(target, w, mode="multi")
        pair = engine.run_coupled_pair(kern, MVN9_START_A, MVN9_START_B,
                                       5, 30_000, record_every=10)
        d = pair.trace_a - pair.trace_b
        sq = np.einsum("ti,ij,tj->t", d, prec, d)
        tail = sq[int(0.8 * len(sq)):]
        floors[w] = np.median(tail)
    assert floors[0.04] > floors[0.01]


def test_approach_slope_transition_near_2000():
    kern = kernels.rg_metropolis_kernel(targets.mvn9(), 0.03,
                                        mode="single-random")
    pair = engine.run_coupled_pair(kern, MVN9_START_A, MVN9_START_B, 2,
                                   12_000, record_every=10)
    d = pair.trace_a - pair.trace_b
    sq = np.einsum("ti,ij,tj->t", d, targets.mvn9().mvn9_spec.precision, d)
    log_sq = np.log(sq)
    before = analysis.fit_slope(pair.times, log_sq, (200, 1600))
    after = analysis.fit_slope(pair.times, log_sq, (4000, 12_000))
    # early decline is governed by the 100-eigenvalues, late by 0.834
    assert before < 20 * after < 0


def test_langevin_distance_declines_in_windows():
    rep = experiment_mvn9(RunConfig(experiment="mvn9", study="langevin",
                                    seed=1, n_steps=6000, n_updates=100))
    kern = kernels.langevin_kernel(targets.mvn9(), 0.08)
    from circmc.experiments import _phase_start
    a = _phase_start(MVN9_START_A, 1, 0)
    b = _phase_start(MVN9_START_B, 1, 1)
    pair = engine.run_coupled_pair(kern, a, b, 1, 6000, record_every=1,
                                   stop_on_coalesce=False)
    d = pair.trace_a[:, :9] - pair.trace_b[:, :9]
    log_sq = np.log(np.einsum("ti,ti->t", d, d))
    window_means = [log_sq[i:i + 100].mean()
                    for i in range(0, 6000, 100)]
    for prev, cur in zip(window_means, window_means[1:]):
        if prev < -60:  # float resolution floor reached
            break
        assert cur < prev


def test_bimodal_diagnostics_show_slow_chains():
    # the mixture run occasionally needs hundreds of iterations to couple
    target = targets.bimodal()
    kern = kernels.rg_metropolis_kernel(target, 0.5)
    p0 = engine.NormalInitial(0.0, 5.0, 1)
    biggest = 0
    for seed in range(1, 31):
        res = engine.run_with_diagnostics(kern, p0, seed, 1000, 10, 450)
        biggest = max(biggest, max(res.coalescence_counts))
    assert biggest >= 250


def test_mvn9_coalesce_study_reaches_exact_coalescence():
    # single-component updates with the larger stepsize coalesce exactly in
    # a desk-scale run
    kern = kernels.rg_metropolis_kernel(targets.mvn9(), 0.12,
                                        mode="single-random")
    done = None
    for seed in (1, 2, 3):
        pair = engine.run_coupled_pair(kern, MVN9_START_A, MVN9_START_B,
                                       seed, 120_000, record_every=100)
        if pair.coalesce_time is not None:
            done = pair.coalesce_time
            break
    assert done is not None
    assert np.array_equal(pair.trace_a[-1], pair.trace_b[-1])


def test_mvn9_study_defaults():
    rep = experiment_mvn9(RunConfig(experiment="mvn9", study="approach",
                                    seed=3))
    assert rep["omega"] == pytest.approx(0.03 ** 2 / 27)
    rep = experiment_mvn9(RunConfig(experiment="mvn9", study="approach",
                                    seed=3, mode="multi",
                                    n_steps=4000))
    assert rep["omega"] == pytest.approx(0.01 ** 2 / 3)
