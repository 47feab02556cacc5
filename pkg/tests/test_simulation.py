import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cmbvs.errors import ConfigurationError, DimensionError, UsageError
from cmbvs.estimands import StrategyConfig
from cmbvs.model import Hyperparameters
from cmbvs.sampler import SamplerConfig, run_chain
from cmbvs.simulation import (PRESETS, ScenarioSpec, ScoreReport, default_sensitivity_grid,
                              generate, replicate_seeds, run_study, score_estimation,
                              score_selection, sensitivity_sweep, true_overall_indirect)


def test_score_selection_examples():
    truth = np.zeros(50, dtype=bool)
    truth[:3] = True
    assert score_selection(truth, truth) == (1.0, 1.0, 1.0)
    sel = truth.copy()
    sel[2] = False
    sens, spec, mcc = score_selection(sel, truth)
    assert sens == pytest.approx(2 / 3) and spec == 1.0
    # tp=2 fn=1 tn=47 fp=0
    assert mcc == pytest.approx((2 * 47) / math.sqrt(2 * 3 * 47 * 48))
    assert score_selection(np.zeros(50, bool), truth) == (0.0, 1.0, 0.0)
    with pytest.raises(DimensionError):
        score_selection([True], [True, False])


@given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=40), st.randoms())
def test_score_selection_permutation_equivariant(pairs, rnd):
    sel, tru = map(list, zip(*pairs))
    idx = list(range(len(sel)))
    rnd.shuffle(idx)
    a = score_selection(sel, tru)
    b = score_selection([sel[i] for i in idx], [tru[i] for i in idx])
    assert a == pytest.approx(b, abs=1e-12)
    assert -1.0 <= a[2] <= 1.0


def test_score_estimation_examples():
    assert score_estimation([1.0, 2.0], [0.5, 1.5], [1.5, 2.5], [1.0, 2.0]) == (0.0, 0.0, 1.0)
    assert score_estimation([3.0], [2.0], [4.0], [1.0]) == (2.0, 4.0, 0.0)
    with pytest.raises(UsageError):
        score_estimation([], [], [], [])


def test_presets_match_documented_settings():
    s1 = ScenarioSpec.preset("scenario1")
    assert (s1.n, s1.J, s1.p_treat) == (200, 50, 0.5)
    np.testing.assert_array_equal(s1.phi_vec[:4], [1.0, 1.2, 1.5, 0.0])
    s4 = ScenarioSpec.preset("scenario4")
    assert s4.dm_confounded and s4.outcome_confounded
    np.testing.assert_array_equal(s4.nu1_vec[:6], [0.8, 0, 0, 0, 1.2, 0])
    np.testing.assert_array_equal(s4.nu2_vec[:5], [0, 1.2, 0, 0.8, 0])
    assert s4.kappa1 == s4.kappa2 == 1.2
    app = ScenarioSpec.preset("application")
    assert (app.n, app.J, app.allocation) == (36, 36, "ratio")
    np.testing.assert_array_equal(app.beta_log_vec[:4], [1.8, -1.0, -0.8, 0.0])
    assert set(PRESETS) >= {"scenario1", "scenario2", "scenario3", "scenario4", "application"}
    with pytest.raises(ConfigurationError):
        ScenarioSpec.preset("nope")
    with pytest.raises(ConfigurationError):
        ScenarioSpec(scenario=5)


def test_spec_text_roundtrip():
    spec = ScenarioSpec.preset("scenario4", n=30, J=12, seed=9)
    assert ScenarioSpec.from_text(spec.to_text()) == spec
    assert ScenarioSpec.from_text("preset = application\nseed = 4\n") == \
        ScenarioSpec.preset("application", seed=4)


def test_generate_composition_invariants():
    sim = generate(ScenarioSpec.preset("scenario2", n=40, J=10, seed=1))
    d, tr = sim.data, sim.truth
    np.testing.assert_allclose(tr.psi.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(tr.psi > 0)
    assert np.all((d.reads >= 5000) & (d.reads <= 10000))
    assert np.all((tr.alpha >= -2.0) & (tr.alpha <= 0.5))
    np.testing.assert_array_equal(tr.selected, [True] * 3 + [False] * 7)
    assert tr.direct == 1.0


def test_ratio_allocation_exact():
    sim = generate(ScenarioSpec.preset("application", seed=3))
    assert sim.data.treatment.sum() == 24


def test_generate_deterministic():
    spec = ScenarioSpec.preset("scenario3", n=25, J=6, seed=11)
    a, b = generate(spec), generate(spec)
    np.testing.assert_array_equal(a.data.counts, b.data.counts)
    np.testing.assert_array_equal(a.data.outcome, b.data.outcome)
    c = generate(spec, seed=12)
    assert not np.array_equal(a.data.counts, c.data.counts)


def test_zero_effects_give_zero_truth():
    sim = generate(ScenarioSpec.preset("scenario4", n=20, J=8, phi=(0.0,), beta_log=(0.0,), seed=2))
    assert sim.truth.overall == 0.0


def test_overall_truth_monte_carlo_oracle():
    rng = np.random.default_rng(5)
    J = 6
    alpha = rng.uniform(-2, 0.5, size=J)
    phi = np.array([1.0, 1.2, 1.5, 0, 0, 0])
    beta_log = np.array([3.0, -1.5, -1.5, 0, 0, 0])
    nu1 = np.array([0.8, 0, 0, 0, 1.2, 0])
    nu2 = np.array([0, 1.2, 0, 0.8, 0, 0])
    truth = true_overall_indirect(alpha, phi, beta_log, nu1, nu2)
    # simulate the outcome paths directly: E[y | t=1] - E[y | t=0] minus the direct part
    m = 400_000
    u1 = (rng.random(m) < 0.5)[:, None]
    u2 = rng.standard_normal(m)[:, None]
    diffs = []
    for t in (1.0, 0.0):
        conc = np.exp(alpha + phi * t + u1 * nu1 + u2 * nu2)
        # log Gamma(a) = log Gamma(a + 1) + log(U) / a avoids underflow at small a
        lg = np.log(rng.standard_gamma(conc + 1.0)) + np.log(rng.random(conc.shape)) / conc
        top = lg.max(axis=1, keepdims=True)
        logpsi = lg - top - np.log(np.exp(lg - top).sum(axis=1, keepdims=True))
        diffs.append(logpsi @ beta_log)
    est = diffs[0].mean() - diffs[1].mean()
    se = math.sqrt(diffs[0].var() / m + diffs[1].var() / m)
    assert abs(est - truth) < 4 * se
    plain = true_overall_indirect(alpha, phi, beta_log)
    assert abs(plain - truth) > 4 * se


def test_replicate_seeds_stable_and_distinct():
    a = replicate_seeds(7, 20)
    assert a == replicate_seeds(7, 20) and len(set(a)) == 20
    assert replicate_seeds(7, 5) == a[:5]
    with pytest.raises(UsageError):
        replicate_seeds(7, 0)


def test_run_study_zero_replicates():
    with pytest.raises(UsageError):
        run_study(ScenarioSpec.preset("scenario1"), 0)


def test_run_study_small_and_order_independent():
    spec = ScenarioSpec.preset("scenario1", n=60, J=6, seed=2)
    cfg = SamplerConfig(iterations=600, burn_in=100, thin=5)
    rep = run_study(spec, 2, methods=("cmbvs2", "cmbvs3"), cfg=cfg)
    assert set(rep) == {"cmbvs2", "cmbvs3"}
    r2 = rep["cmbvs2"]
    assert r2.n_ok == 2 and r2.n_failed == 0 and len(r2.rows) == 2
    assert 0 <= r2.sens <= 1 and 0 <= r2.overall_coverage <= 1
    again = run_study(spec, 2, methods=("cmbvs2",), cfg=cfg, workers=2)["cmbvs2"]
    assert again.summary() == r2.summary()


def test_score_report_skips_failures():
    rows = [{"sens": 1.0, "spec": 1.0, "mcc": 1.0, "error": ""}, {"error": "ChainAborted: x"}]
    rep = ScoreReport.from_rows("cmbvs1", rows)
    assert (rep.n_ok, rep.n_failed, rep.sens) == (1, 1, 1.0)
    assert math.isnan(rep.direct_bias)


def test_sensitivity_grid_and_baseline_cell():
    base = Hyperparameters()
    grid = default_sensitivity_grid(base)
    names = [g[0] for g in grid]
    assert names[0] == "baseline" and grid[0][1] == base
    assert {"prpi_1pct", "prpi_10pct", "r2_5", "r2_20", "h_5", "h_20", "a0b0_0.1", "a0b0_10"} <= set(names)
    hp10 = dict(grid)["prpi_10pct"]
    assert hp10.a_xi / (hp10.a_xi + hp10.b_xi) == pytest.approx(0.1)
    sim = generate(ScenarioSpec.preset("scenario1", n=50, J=5, seed=3))
    cfg = SamplerConfig(iterations=400, burn_in=100, thin=5, seed=1)
    out = sensitivity_sweep(sim, base, grid[:2], methods=("cmbvs2",), cfg=cfg)
    assert [c[0] for c in out] == ["baseline", "prpi_1pct"]
    from cmbvs.estimands import mediate
    direct = mediate(sim.data, base, cfg, StrategyConfig("cmbvs2"))
    sens, spec, mcc = score_selection(direct.selected, sim.truth.selected)
    assert out[0][1]["cmbvs2"].mcc == mcc
