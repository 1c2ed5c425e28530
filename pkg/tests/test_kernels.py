import math

import numpy as np
import pytest
from scipy.stats import gamma as gamma_dist
from scipy.stats import kstest, norm

from circmc import engine, kernels, targets
from circmc.kernels import (CompositeKernel, GibbsInversionKernel,
                            LangevinKernel, MomentumRefreshKernel,
                            RandomGridKernel, RandomWalkKernel,
                            gamma_standard_quantile, kernel_from_descriptor,
                            rg_grid_point)
from circmc.streams import UniformBlock, block_for, inv_normal_cdf

RNG = np.random.default_rng(777)


def _block(values, layout=None):
    return UniformBlock(np.asarray(values, dtype=float), layout)


class TestGridPoint:
    def test_worked_examples(self):
        assert rg_grid_point(0.3, 0.5, 0.5) == pytest.approx(0.0)
        assert rg_grid_point(0.3, 0.75, 0.5) == pytest.approx(0.25)

    def test_within_half_open_window(self):
        for _ in range(500):
            x = RNG.normal() * 5
            u1 = RNG.random()
            w = RNG.uniform(0.05, 2.0)
            g = rg_grid_point(x, u1, w)
            assert x - w < g <= x + w

    def test_cell_of_width_2w_maps_to_one_point(self):
        u1, w = 0.37, 0.5
        xs = np.linspace(-3, 3, 1201)
        points = np.array([rg_grid_point(x, u1, w) for x in xs])
        uniq = np.unique(points)
        assert np.allclose(np.diff(uniq), 2 * w)
        # each grid point is hit by a contiguous run of x values
        for p in uniq[1:-1]:
            sel = xs[points == p]
            assert sel.max() - sel.min() <= 2 * w + 1e-9

    def test_marginal_proposal_uniform(self):
        x, w = 0.83, 0.5
        us = RNG.random(100_000)
        props = np.array([rg_grid_point(x, u, w) for u in us])
        assert kstest((props - (x - w)) / (2 * w), "uniform").pvalue > 0.001

    def test_martingale_mean_preservation(self):
        # with both chains forced to accept, the separation is a martingale
        x, x_other, w = 0.13, 0.47 + 1.0, 0.25  # d = 2w*2 + h form
        us = RNG.random(100_000)
        d_new = np.array([abs(rg_grid_point(x, u, w)
                              - rg_grid_point(x_other, u, w)) for u in us])
        d_prev = abs(x_other - x)
        se = d_new.std() / math.sqrt(d_new.size)
        assert abs(d_new.mean() - d_prev) < 3 * se


class TestRandomGridKernel:
    target = targets.normal1d()

    def test_budgets_and_layouts(self):
        m = targets.mvn9()
        assert kernels.rg_metropolis_kernel(self.target, 0.5).variate_budget == 2
        assert kernels.rg_metropolis_kernel(m, 0.1).variate_budget == 10
        assert kernels.rg_metropolis_kernel(
            m, 0.1, mode="single-random").variate_budget == 3
        assert kernels.rg_metropolis_kernel(
            m, 0.1, mode="sweep").variate_budget == 18

    def test_higher_density_proposal_always_accepted(self):
        kern = kernels.rg_metropolis_kernel(self.target, 0.5)
        # x=3.0, u1=0.25 proposes 2.75 (closer to the mode)
        out = kern.step(np.array([3.0]), _block([0.999999, 0.25]))
        assert out[0] == pytest.approx(2.75)

    def test_same_cell_coalescence(self):
        kern = kernels.rg_metropolis_kernel(self.target, 0.5)
        blk = _block([1e-12, 0.37])  # u0 tiny: both accept
        a = kern.step(np.array([0.11]), blk)
        b = kern.step(np.array([0.23]), blk)
        assert np.array_equal(a, b)

    def test_rejection_keeps_state(self):
        kern = kernels.rg_metropolis_kernel(self.target, 0.5)
        # proposal moves from mode to 1.0: ratio exp(-0.5); u0 above it
        out = kern.step(np.array([0.9]), _block([0.99, 0.6]))
        assert out[0] == 0.9

    def test_invalid_args(self):
        with pytest.raises(ValueError):
            kernels.rg_metropolis_kernel(self.target, -1.0)
        with pytest.raises(ValueError):
            RandomGridKernel(self.target.log_density, 0.5, [0], mode="bogus")

    def test_single_random_component_selection(self):
        m = targets.mvn9()
        kern = kernels.rg_metropolis_kernel(m, 0.2, mode="single-random")
        x = RNG.normal(size=9) * 0.1
        # selector u in [i/9, (i+1)/9) touches only component i
        for i in range(9):
            blk = _block([1e-9, (i + 0.5) / 9, 0.9])
            out = kern.step(x, blk)
            changed = np.nonzero(out != x)[0]
            assert set(changed) <= {i}

    def test_log_transform_matches_manual_jacobian(self):
        # grid on log tau with the Jacobian folded into acceptance
        def ld(state):  # Exp(1) density for the coordinate
            return -state[0]

        kern = RandomGridKernel(ld, 0.1, [0], transform="log")
        state = np.array([0.7])
        blk = _block([0.43, 0.81])
        out = kern.step(state, blk)
        ell = math.log(0.7)
        prop = rg_grid_point(ell, 0.81, 0.1)
        logr = (-math.exp(prop) - (-0.7)) + (prop - ell)
        expected = math.exp(prop) if math.log(0.43) < logr else 0.7
        assert out[0] == expected


class TestRandomWalkKernel:
    def test_median_offset_is_identity(self):
        kern = kernels.rw_metropolis_kernel(targets.normal1d(), 0.3)
        out = kern.step(np.array([1.234]), _block([0.5, 0.5]))
        assert out[0] == 1.234

    def test_common_offset_across_chains(self):
        kern = RandomWalkKernel(lambda s: 0.0, 0.5, range(3))  # flat: accept
        blk = _block([0.9, 0.3, 0.7, 0.05])
        a0, b0 = RNG.normal(size=3), RNG.normal(size=3)
        da = kern.step(a0, blk) - a0
        db = kern.step(b0, blk) - b0
        # identical offset vector; reconstruction via (x+off)-x costs 1 ulp
        assert np.allclose(da, db, rtol=0, atol=1e-14)

    def test_uniform_proposal_width(self):
        kern = RandomWalkKernel(lambda s: 0.0, 0.5, [0], proposal="uniform")
        out = kern.step(np.zeros(1), _block([0.9, 0.99]))
        assert 0 < out[0] <= 0.5
        out = kern.step(np.zeros(1), _block([0.9, 0.01]))
        assert -0.5 < out[0] < 0

    def test_mvn9_multi_dim_rejection_rate(self):
        target = targets.mvn9()
        kern = kernels.rw_metropolis_kernel(target, 0.0058, mode="multi")
        start = engine.ExactInitial(target).draw(3, 0)
        rate = 0
        state = start
        n = 30_000
        for t in range(n):
            new = engine._advance(kern, state, 5, t)
            rate += np.array_equal(new, state)
            state = new
        assert rate / n == pytest.approx(0.045, abs=0.015)


class TestLangevinKernel:
    def test_free_flight_on_flat_density(self):
        kern = LangevinKernel(lambda s: 0.0, lambda s: np.zeros(2),
                              epsilon=0.3, alpha=0.0,
                              position=[0, 1], momentum=[2, 3])
        state = np.array([1.0, -2.0, 9.9, 9.9])
        blk = block_for(4, 0, 3)
        out = kern.step(state, blk)
        n = np.array([inv_normal_cdf(blk[0]), inv_normal_cdf(blk[1])])
        assert np.array_equal(out[:2], state[:2] + 0.3 * n)
        assert np.array_equal(out[2:], n)

    def test_alpha_zero_is_memoryless(self):
        kern = kernels.langevin_kernel(targets.mvn9(), 0.08, 0.0)
        blk = block_for(9, 3, kern.variate_budget)
        x = RNG.normal(size=9) * 0.5
        s1 = np.concatenate([x, RNG.normal(size=9)])
        s2 = np.concatenate([x, RNG.normal(size=9)])
        assert np.array_equal(kern.step(s1, blk), kern.step(s2, blk))

    def test_rejection_negates_momentum(self):
        target = targets.mvn9()
        kern = kernels.langevin_kernel(target, 0.5)  # big step: rejections
        found = False
        state = engine.ExactInitial(targets.phase_extend(target)).draw(1, 0)
        for t in range(200):
            blk = block_for(17, t, kern.variate_budget)
            out = kern.step(state, blk)
            if np.array_equal(out[:9], state[:9]):
                # refreshed momentum, then negated on rejection
                alpha = 0.0
                n = np.array([inv_normal_cdf(blk[i]) for i in range(9)])
                assert np.array_equal(out[9:], -n)
                found = True
                break
            state = out
        assert found

    def test_uncorrected_eigendirection_contraction(self):
        target = targets.mvn9()
        spec = target.mvn9_spec
        eps = 0.08
        kern = kernels.langevin_kernel(target, eps, 0.0, corrected=False)
        eigvals, eigvecs = np.linalg.eigh(spec.precision)
        blk = block_for(31, 0, kern.variate_budget)
        for idx in range(9):
            v = eigvecs[:, idx]
            a = np.concatenate([v, np.zeros(9)])
            b = np.zeros(18)
            out_a = kern.step(a, blk)
            out_b = kern.step(b, blk)
            factor = 1 - 0.5 * eps ** 2 * eigvals[idx]
            diff = out_a[:9] - out_b[:9]
            assert np.max(np.abs(diff - factor * v)) < 1e-10

    def test_contraction_threshold(self):
        lam_max = 200.0
        assert abs(1 - 0.5 * 0.1414 ** 2 * lam_max) < 1.0
        assert abs(1 - 0.5 * 0.1415 ** 2 * lam_max) > 1.0
        assert 2 / math.sqrt(lam_max) == pytest.approx(0.1414, abs=1e-4)

    def test_requires_gradient(self):
        no_grad = targets.TargetDistribution(
            name="x", dimension=1, log_density=lambda s: 0.0)
        with pytest.raises(ValueError):
            kernels.langevin_kernel(no_grad, 0.1)


class TestGibbsInversion:
    def test_median_of_symmetric_conditional(self):
        target = targets.normal1d()
        kern = GibbsInversionKernel(target.conditional_spec, 0)
        out = kern.step(np.array([5.0]), _block([0.5]))
        assert out[0] == 0.0

    def test_gamma_scale_coupling(self):
        def spec_a(state, i):
            return ("gamma", 2.5, 2.0)

        def spec_b(state, i):
            return ("gamma", 2.5, 7.0)

        blk = _block([0.42])
        out_a = GibbsInversionKernel(spec_a, 0).step(np.zeros(1), blk)
        out_b = GibbsInversionKernel(spec_b, 0).step(np.zeros(1), blk)
        assert out_a[0] * 2.0 == pytest.approx(out_b[0] * 7.0, rel=1e-12)

    def test_normal_inversion_ks(self):
        target = targets.normal1d()
        kern = GibbsInversionKernel(target.conditional_spec, 0)
        draws = np.empty(100_000)
        state = np.zeros(1)
        for t in range(draws.size):
            state = engine._advance(kern, state, 13, t)
            draws[t] = state[0]
        assert kstest(draws, "norm").pvalue > 0.001

    def test_missing_conditional(self):
        with pytest.raises(ValueError):
            GibbsInversionKernel(None, 0)

    def test_unknown_family(self):
        kern = GibbsInversionKernel(lambda s, i: ("cauchy", 0, 1), 0)
        with pytest.raises(ValueError):
            kern.step(np.zeros(1), _block([0.5]))


class TestGammaQuantile:
    def test_against_reference(self):
        for shape in (0.7, 1.0, 2.5, 9.0):
            us = np.linspace(1e-6, 1 - 1e-6, 41)
            ours = np.array([gamma_standard_quantile(shape, u) for u in us])
            ref = gamma_dist.ppf(us, shape)
            assert np.max(np.abs(ours - ref) / np.maximum(ref, 1e-12)) < 1e-9

    def test_monotone(self):
        qs = [gamma_standard_quantile(2.5, u)
              for u in np.linspace(0.01, 0.99, 25)]
        assert np.all(np.diff(qs) > 0)


class TestComposite:
    def test_single_kernel_identity(self):
        target = targets.normal1d()
        inner = kernels.rg_metropolis_kernel(target, 0.5)
        comp = CompositeKernel([inner])
        blk = block_for(1, 0, inner.variate_budget)
        x = np.array([0.3])
        assert np.array_equal(comp.step(x, blk), inner.step(x, blk))

    def test_budget_additivity(self):
        m = targets.mvn9()
        subs = [kernels.rw_metropolis_kernel(m, 0.1),
                kernels.rg_metropolis_kernel(m, 0.1),
                kernels.gibbs_sweep_kernel(m)]
        comp = CompositeKernel(subs)
        assert comp.variate_budget == sum(k.variate_budget for k in subs)

    def test_coalescence_permanence(self):
        m = targets.mvn9()
        comp = CompositeKernel([kernels.rw_metropolis_kernel(m, 0.1),
                                kernels.rg_metropolis_kernel(m, 0.1)])
        x = RNG.normal(size=9)
        blk = block_for(5, 2, comp.variate_budget)
        assert np.array_equal(comp.step(x.copy(), blk),
                              comp.step(x.copy(), blk))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            CompositeKernel([])


class _RecordingBlock(UniformBlock):
    """Counts which slots a kernel reads."""

    def __init__(self, values, layout=None):
        super().__init__(values, layout)
        self.reads = set()

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            self.reads.update(range(*idx.indices(len(self.values))))
        else:
            self.reads.add(idx if idx >= 0 else len(self.values) + idx)
        return self.values[idx]


def _all_kernels():
    n1, m9 = targets.normal1d(), targets.mvn9()
    yield kernels.rg_metropolis_kernel(n1, 0.5), 1
    yield kernels.rg_metropolis_kernel(m9, 0.1), 9
    yield kernels.rg_metropolis_kernel(m9, 0.1, mode="single-random"), 9
    yield kernels.rg_metropolis_kernel(m9, 0.1, mode="sweep"), 9
    yield kernels.rw_metropolis_kernel(m9, 0.05), 9
    yield kernels.rw_metropolis_kernel(m9, 0.05, mode="single-random"), 9
    yield kernels.rw_metropolis_kernel(m9, 0.05, proposal="uniform"), 9
    yield kernels.langevin_kernel(m9, 0.08), 18
    yield kernels.langevin_kernel(m9, 0.05, 0.9, corrected=False), 18
    yield kernels.gibbs_sweep_kernel(m9), 9
    yield MomentumRefreshKernel(range(9, 18)), 18


@pytest.mark.parametrize("kern,dim", list(_all_kernels()),
                         ids=lambda v: getattr(v, "label", str(v)))
def test_budget_consumption_state_independent(kern, dim):
    # every kernel reads exactly the slots [0, budget) for any state
    vals = block_for(3, 0, kern.variate_budget).values
    for probe in range(4):
        state = RNG.normal(size=dim) * (0.1 + probe)
        blk = _RecordingBlock(vals)
        kern.step(state, blk)
        assert blk.reads == set(range(kern.variate_budget))


@pytest.mark.parametrize("kern,dim", list(_all_kernels()),
                         ids=lambda v: getattr(v, "label", str(v)))
def test_coalescence_permanence_all_kernels(kern, dim):
    blk = block_for(11, 7, kern.variate_budget)
    x = RNG.normal(size=dim) * 0.3
    a = kern.step(x.copy(), blk)
    b = kern.step(x.copy(), blk)
    assert np.array_equal(a, b)


def _one_step_draws(kern, target, n, seed, phase=False):
    src = targets.phase_extend(target) if phase else target
    init = engine.ExactInitial(src)
    out = np.empty(n)
    for i in range(n):
        x = init.draw(seed + i, 0)
        y = engine._advance(kern, x, seed + i, 0)
        out[i] = y[0]
    return out


@pytest.mark.parametrize("make_kernel,phase", [
    (lambda t: kernels.rg_metropolis_kernel(t, 0.5), False),
    (lambda t: kernels.rw_metropolis_kernel(t, 0.5), False),
    (lambda t: kernels.rw_metropolis_kernel(t, 0.5, proposal="uniform"),
     False),
    (lambda t: kernels.langevin_kernel(t, 0.3), True),
    (lambda t: kernels.gibbs_sweep_kernel(t), False),
], ids=["rg", "rw-normal", "rw-uniform", "langevin", "gibbs"])
def test_stationarity_normal1d(make_kernel, phase):
    target = targets.normal1d()
    draws = _one_step_draws(make_kernel(target), target, 100_000, 10_000,
                            phase)
    assert kstest(draws, "norm").pvalue > 0.001


@pytest.mark.parametrize("make_kernel", [
    lambda t: kernels.rg_metropolis_kernel(t, 0.5),
    lambda t: kernels.rw_metropolis_kernel(t, 0.5),
], ids=["rg", "rw"])
def test_stationarity_bimodal(make_kernel):
    target = targets.bimodal()
    draws = _one_step_draws(make_kernel(target), target, 100_000, 50_000)

    def cdf(v):
        return 0.75 * norm.cdf(v, -1, 1) + 0.25 * norm.cdf(v, 1.5, 0.1)

    assert kstest(draws, cdf).pvalue > 0.001


def test_grid_alignment_after_both_accept():
    # type-1 behaviour: a both-accept update leaves component differences at
    # multiples of 2w, after which both chains see identical offsets
    target = targets.mvn9()
    w = 0.2
    kern = kernels.rg_metropolis_kernel(target, w)
    a = RNG.normal(size=9) * 0.3
    b = a + RNG.normal(size=9) * 0.05
    both_accepted = None
    for t in range(500):
        blk = block_for(23, t, kern.variate_budget)
        na, nb = kern.step(a, blk), kern.step(b, blk)
        if not np.array_equal(na, a) and not np.array_equal(nb, b):
            a, b = na, nb
            both_accepted = t
            break
        a, b = na, nb
    assert both_accepted is not None
    mult = (a - b) / (2 * w)
    assert np.max(np.abs(mult - np.round(mult))) < 1e-12
    # identical next-proposal offsets in both chains
    u = RNG.random(9)
    fa = np.array([rg_grid_point(a[i], u[i], w) for i in range(9)])
    fb = np.array([rg_grid_point(b[i], u[i], w) for i in range(9)])
    assert np.max(np.abs((fa - a) - (fb - b))) < 1e-12


def test_descriptor_round_trip():
    m = targets.mvn9()
    registry = {"mvn9": m}
    originals = [
        kernels.rg_metropolis_kernel(m, 0.1, mode="single-random"),
        kernels.rw_metropolis_kernel(m, 0.05),
        kernels.langevin_kernel(m, 0.08, 0.5),
        CompositeKernel([kernels.rw_metropolis_kernel(m, 0.1),
                         kernels.rg_metropolis_kernel(m, 0.2)]),
    ]
    x = RNG.normal(size={True: 18}.get(False, 9))
    for kern in originals:
        rebuilt = kernel_from_descriptor(kern.descriptor(), registry)
        assert rebuilt.variate_budget == kern.variate_budget
        dim = 18 if isinstance(kern, LangevinKernel) else 9
        state = RNG.normal(size=dim) * 0.2
        blk = block_for(2, 1, kern.variate_budget)
        assert np.array_equal(kern.step(state, blk),
                              rebuilt.step(state, blk))
