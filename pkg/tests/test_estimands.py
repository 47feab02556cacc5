import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import digamma

from cmbvs.composition import sbp
from cmbvs.errors import DomainError, UsageError
from cmbvs.estimands import (EffectSummary, StrategyConfig, contrast_samples, credible_interval,
                             direct_effect, dm_profiles, expected_balance, expected_log_psi,
                             expected_log_psi_from_gamma, mediate, overall_indirect,
                             overall_samples, relative_indirect, relative_samples,
                             select_cmbvs1, select_cmbvs2, select_cmbvs3)
from cmbvs.model import Dataset, DmParams, Hyperparameters
from cmbvs.sampler import PosteriorTrace, SamplerConfig, mppi, run_chain
from cmbvs.simulation import ScenarioSpec, generate


def fake_trace(S=30, J=5, Pd=0, seed=0, order=None, p_incl=0.6, n_subjects=6):
    rng = np.random.default_rng(seed)
    xi = (rng.random((S, J - 1)) < p_incl).astype(np.int8)
    varphi = (rng.random((S, J)) < p_incl).astype(np.int8)
    zeta = (rng.random((S, J, Pd)) < p_incl).astype(np.int8)
    X = rng.integers(0, 2, size=(n_subjects, Pd)).astype(float)
    return PosteriorTrace(
        c0=rng.normal(size=S), c1=rng.normal(1.0, 0.3, size=S),
        beta=rng.normal(size=(S, J - 1)) * 2 * xi, xi=xi,
        kappa=np.zeros((S, 0)), nu=np.zeros((S, 0), dtype=np.int8), sigma2=np.ones(S),
        alpha=rng.uniform(-2, 1, size=(S, J)), phi=rng.normal(size=(S, J)) * varphi, varphi=varphi,
        theta=rng.normal(size=(S, J, Pd)) * zeta, zeta=zeta,
        taxon_order=np.arange(J) if order is None else np.asarray(order),
        taxa=[f"t{j}" for j in range(J)], covariates_dm=X)


def telescoped(beta_s, theta_ordered):
    """delta at ordered position j from the explicit coefficient telescoping."""
    J = theta_ordered.size
    out = np.zeros(J)
    for j in range(1, J + 1):
        own = beta_s[j - 1] * math.sqrt((J - j) / (J - j + 1)) if j < J else 0.0
        prev = sum(beta_s[k - 1] * math.sqrt((J - k) / (J - k + 1)) / (J - k) for k in range(1, j))
        out[j - 1] = (own - prev) * theta_ordered[j - 1]
    return out


def test_expected_log_psi_examples():
    np.testing.assert_allclose(expected_log_psi_from_gamma([1.0, 1.0, 1.0]), [-1.5] * 3, atol=1e-14)
    v = expected_log_psi_from_gamma(np.full(7, 2.3))
    assert np.ptp(v) == 0.0
    np.testing.assert_allclose(expected_log_psi_from_gamma([2.0, 1.0]),
                               [digamma(2) - digamma(3), digamma(1) - digamma(3)])
    with pytest.raises(DomainError):
        expected_log_psi_from_gamma([1.0, 0.0])


def test_expected_log_psi_from_params():
    dm = DmParams.zeros(3, 0)
    dm.alpha[:] = [0.0, math.log(2.0), 0.0]
    dm.phi[:] = [math.log(3.0), 0.0, 0.0]
    np.testing.assert_allclose(expected_log_psi(dm, 1.0), expected_log_psi_from_gamma([3.0, 2.0, 1.0]))
    np.testing.assert_allclose(expected_log_psi(dm, 0.0), expected_log_psi_from_gamma([1.0, 2.0, 1.0]))


def test_expected_balance_examples():
    scheme = sbp(4)
    assert np.all(expected_balance(DmParams.zeros(4, 0), scheme, 1.0) == pytest.approx(0.0, abs=1e-14))
    dm = DmParams.zeros(2, 0)
    dm.alpha[:] = [0.4, -0.3]
    e = expected_log_psi(dm, 0.0)
    assert expected_balance(dm, sbp(2), 0.0)[0] == pytest.approx(math.sqrt(0.5) * (e[0] - e[1]))
    rng = np.random.default_rng(3)
    dm = DmParams.zeros(9, 0)
    dm.alpha[:] = rng.normal(size=9)
    order = rng.permutation(9)
    A = sbp(9, order).basis
    np.testing.assert_allclose(expected_balance(dm, sbp(9, order), 0.0), A @ expected_log_psi(dm, 0.0),
                               atol=1e-12)


@settings(max_examples=120, deadline=None)
@given(st.integers(2, 12), st.integers(0, 2), st.integers(0, 10_000))
def test_decomposition_identity_random_traces(J, Pd, seed):
    rng = np.random.default_rng(seed)
    tr = fake_trace(S=20, J=J, Pd=Pd, seed=seed, order=rng.permutation(J))
    profiles = [None] + list(range(dm_profiles(tr)[0].shape[0]))
    for prof in profiles:
        rel = relative_samples(tr, prof)
        tot = overall_samples(tr, prof)
        assert np.max(np.abs(rel.sum(axis=1) - tot)) < 1e-10


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 9), st.integers(0, 10_000))
def test_relative_matches_telescoped_formula(J, seed):
    rng = np.random.default_rng(seed)
    order = rng.permutation(J)
    tr = fake_trace(S=5, J=J, seed=seed, order=order)
    rel = relative_samples(tr)
    theta = contrast_samples(tr)
    for s in range(5):
        expect = telescoped(tr.beta[s], theta[s, order])
        np.testing.assert_allclose(rel[s, order], expect, atol=1e-12)


def test_overall_invariant_to_order_under_linear_form():
    rng = np.random.default_rng(4)
    J = 7
    w = rng.normal(size=J)
    w -= w.mean()  # zero-sum log-contrast weights
    vals = []
    for order in (np.arange(J), rng.permutation(J), rng.permutation(J)):
        tr = fake_trace(S=10, J=J, seed=1, order=order)
        tr.beta = np.tile(sbp(J, order).basis @ w, (10, 1))
        tr.xi[:] = 1
        vals.append(overall_samples(tr))
    np.testing.assert_allclose(vals[1], vals[0], atol=1e-12)
    np.testing.assert_allclose(vals[2], vals[0], atol=1e-12)


def test_population_collapse_without_covariates():
    tr = fake_trace(S=15, J=5, Pd=0)
    rows, counts = dm_profiles(tr)
    assert rows.shape == (1, 0) and counts.tolist() == [6]
    np.testing.assert_array_equal(overall_samples(tr, None), overall_samples(tr, 0))
    np.testing.assert_array_equal(relative_samples(tr, None), relative_samples(tr, 0))


def test_profile_average_weights_subjects():
    tr = fake_trace(S=10, J=4, Pd=1, n_subjects=6)
    tr.covariates_dm = np.array([[0.0], [0.0], [1.0], [0.0], [1.0], [0.0]])
    rows, counts = dm_profiles(tr)
    assert counts.tolist() == [4, 2]
    mix = (4 * overall_samples(tr, 0) + 2 * overall_samples(tr, 1)) / 6
    np.testing.assert_allclose(overall_samples(tr, None), mix, atol=1e-12)


def test_credible_interval_quantiles():
    x = np.arange(101.0)
    assert credible_interval(x, 0.9) == pytest.approx((5.0, 95.0))
    lo, hi = credible_interval([0.0, 1.0], 0.5)
    assert (lo, hi) == pytest.approx((0.25, 0.75))
    with pytest.raises(UsageError):
        credible_interval([], 0.9)
    with pytest.raises(UsageError):
        credible_interval([1.0], 1.0)


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=60), st.floats(0.05, 0.9),
       st.floats(0.01, 0.09))
def test_credible_interval_ordering_and_widening(xs, level, extra):
    lo, hi = credible_interval(xs, level)
    lo2, hi2 = credible_interval(xs, level + extra)
    assert lo <= hi
    assert lo2 <= lo and hi2 >= hi
    s = EffectSummary.from_samples("x", xs, level)
    assert s.lower <= s.mean <= s.upper


def test_direct_effect_constant_trace():
    tr = fake_trace()
    tr.c1 = np.ones(len(tr))
    d = direct_effect(tr)
    assert (d.mean, d.lower, d.upper) == (1.0, 1.0, 1.0)


def test_null_paths_give_zero_overall():
    tr = fake_trace()
    tr.beta[:] = 0.0
    tr.xi[:] = 0
    o = overall_indirect(tr)
    assert (o.mean, o.lower, o.upper) == (0.0, 0.0, 0.0)
    tr = fake_trace()
    tr.phi[:] = 0.0
    tr.varphi[:] = 0
    assert np.all(overall_samples(tr) == 0.0)


def test_cmbvs2_constant_zero_not_selected():
    tr = fake_trace()
    tr.phi[:] = 0.0
    tr.varphi[:] = 0
    res = select_cmbvs2(tr)
    assert not res.selected.any()
    assert all(e.lower == 0.0 and e.upper == 0.0 for e in res.relative[0])


@pytest.fixture(scope="module")
def fitted():
    sim = generate(ScenarioSpec.preset("scenario1", n=120, J=8, seed=12))
    cfg = SamplerConfig(iterations=2500, burn_in=500, thin=5, seed=4)
    return sim, cfg, run_chain(sim.data, cfg=cfg)


def test_zero_inflation_matches_mppi(fitted):
    _, _, tr = fitted
    m = mppi(tr, "xi")
    zero_frac = (tr.beta == 0.0).mean(axis=0)
    np.testing.assert_allclose(zero_frac, 1.0 - m, atol=0)
    assert np.any((m > 0) & (m < 1))
    np.testing.assert_allclose((tr.phi == 0.0).mean(axis=0), 1.0 - mppi(tr, "varphi"), atol=0)


def test_relative_summaries_report_mppi(fitted):
    _, _, tr = fitted
    eff = relative_indirect(tr)
    assert [e.taxon for e in eff] == tr.taxa
    assert eff[-1].mppi_beta is None
    assert eff[0].mppi_beta == pytest.approx(mppi(tr, "xi")[0])


def test_cmbvs3_prunes_everything_selects_nothing(fitted):
    sim, cfg, tr = fitted
    base = fake_trace(S=len(tr), J=8)
    base.varphi[:] = 0
    res = select_cmbvs3(sim.data, Hyperparameters(), cfg, StrategyConfig("cmbvs3"), base_trace=base)
    assert not res.selected.any()
    assert np.all(res.refit_trace.phi == 0.0)


def test_cmbvs1_shortcut_matches_exhaustive(fitted):
    sim, cfg, base = fitted
    hp = Hyperparameters()
    short = select_cmbvs1(sim.data, hp, cfg, StrategyConfig("cmbvs1"), base_trace=base)
    full = select_cmbvs1(sim.data, hp, cfg, StrategyConfig("cmbvs1", exhaustive=True), base_trace=base)
    assert set(short.fitted_first) < set(full.fitted_first)
    np.testing.assert_array_equal(short.selected, full.selected)
    for j in short.fitted_first:
        assert short.relative[0][j].mean == full.relative[0][j].mean
    assert short.selected[:3].sum() >= 2 and not short.selected[3:].any()


def test_cmbvs1_workers_do_not_change_results(fitted):
    sim, cfg, base = fitted
    hp = Hyperparameters()
    one = select_cmbvs1(sim.data, hp, cfg, StrategyConfig("cmbvs1"), base_trace=base)
    two = select_cmbvs1(sim.data, hp, cfg, StrategyConfig("cmbvs1", workers=2), base_trace=base)
    np.testing.assert_array_equal(one.selected, two.selected)
    assert [e.mean for e in one.relative[0]] == [e.mean for e in two.relative[0]]


def test_cmbvs1_null_data_selects_nothing():
    spec = ScenarioSpec.preset("scenario1", n=100, J=10, phi=(0.0,), beta_log=(0.0,), seed=3)
    res = mediate(generate(spec).data, cfg=SamplerConfig(iterations=2000, burn_in=400, thin=4, seed=2),
                  strategy_cfg=StrategyConfig("cmbvs1"))
    assert res.selected.sum() <= 1


def test_profile_selection_is_union():
    tr = fake_trace(S=200, J=4, Pd=1, n_subjects=6, p_incl=1.0, seed=3)
    tr.covariates_dm = np.array([[0.0], [1.0]] * 3)
    # strong effect through taxon 0 only for the second profile
    tr.phi[:] = 0.0
    tr.theta[:] = 0.0
    tr.theta[:, 0, 0] = 2.0
    tr.phi[:, 0] = -1.0
    tr.beta[:] = np.array([1.5, 0.0, 0.0])
    res = select_cmbvs2(tr, StrategyConfig("cmbvs2"))
    assert res.selected_by_profile.shape == (2, 4)
    np.testing.assert_array_equal(res.selected, res.selected_by_profile.any(axis=0))
    assert res.selected[0]
