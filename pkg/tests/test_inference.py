import math

import numpy as np
import pytest
import statsmodels.api as sm
from hypothesis import given, strategies as st
from scipy import stats

from dceaudit.design import DesignSpec, generate_design
from dceaudit.inference import (FitError, MnlFit, attribute_importance, build_design_matrix,
                                encode_profiles, fit_mnl, format_p, head_to_head_margin,
                                load_fit, log_likelihood, marginal_effects, save_fit,
                                wald_p_value, wald_table)
from dceaudit.schema import ChoiceSet, Profile

from conftest import make_schema, random_instance


# ----------------------------------------------------------------- design matrix

def test_design_matrix_shape(schema):
    dm, _ = random_instance(schema, 100, seed=1)
    assert dm.X.shape == (100, 2, 41)
    assert dm.chosen.shape == (100,)
    for attr, sl in dm.blocks.items():
        assert np.all(dm.X[:, :, sl].sum(axis=2) <= 1), attr


def test_all_reference_profile_is_zero_row(schema):
    ref = Profile(tuple(a.n_levels - 1 for a in schema.attributes))
    assert not encode_profiles([ref], schema).any()


def test_toy_three_levels():
    sc = make_schema(3)
    np.testing.assert_array_equal(encode_profiles([Profile((0,))], sc), [[1.0, 0.0]])
    np.testing.assert_array_equal(encode_profiles([Profile((2,))], sc), [[0.0, 0.0]])


def test_build_drops_ineffective_and_rejects_unknown():
    sc = make_schema(3)
    design = [ChoiceSet(0, (Profile((0,)), Profile((1,)))), ChoiceSet(1, (Profile((2,)), Profile((1,))))]
    dm = build_design_matrix([{"set_id": 0, "chosen_index": 1}, {"set_id": 1, "chosen_index": None}],
                             design, sc)
    assert dm.n_sets == 1 and dm.n_dropped == 1
    np.testing.assert_array_equal(dm.X[0], [[1, 0], [0, 1]])
    with pytest.raises(ValueError, match="unknown"):
        build_design_matrix([{"set_id": 9, "chosen_index": 0}], design, sc)
    with pytest.raises(ValueError, match="duplicate"):
        build_design_matrix([{"set_id": 0, "chosen_index": 0}] * 2, design, sc)


def test_without_block(schema):
    dm, _ = random_instance(schema, 50, seed=2)
    sub = dm.without_block("Education Level")
    assert sub.n_params == 35
    assert "Education Level" not in sub.blocks
    assert sub.blocks["Gender"] == slice(0, 1)
    assert sub.blocks["Language"] == slice(1, 4)
    assert sub.columns[1] == dm.columns[7]


# ----------------------------------------------------------------- derivatives

def test_gradient_and_hessian_finite_differences(schema):
    dm, _ = random_instance(schema, 200, seed=5)
    rng = np.random.default_rng(6)
    beta = rng.normal(scale=0.5, size=dm.n_params)
    _, g, H = log_likelihood(dm, beta)
    h = 1e-5
    eye = np.eye(dm.n_params)
    g_fd = np.array([(log_likelihood(dm, beta + h * e, False, False)[0]
                      - log_likelihood(dm, beta - h * e, False, False)[0]) / (2 * h) for e in eye])
    H_fd = np.array([(log_likelihood(dm, beta + h * e, True, False)[1]
                      - log_likelihood(dm, beta - h * e, True, False)[1]) / (2 * h) for e in eye])
    assert np.linalg.norm(g - g_fd) / np.linalg.norm(g_fd) < 1e-6
    assert np.linalg.norm(H - H_fd) / np.linalg.norm(H_fd) < 1e-5


# ----------------------------------------------------------------- fitting

def test_binary_logit_reduction(schema):
    dm, _ = random_instance(schema, 1000, seed=8)
    fit = fit_mnl(dm)
    D = dm.X[:, 0, :] - dm.X[:, 1, :]
    y = (dm.chosen == 0).astype(float)
    ref = sm.Logit(y, D).fit(method="newton", tol=1e-12, maxiter=100, disp=False)
    np.testing.assert_allclose(fit.beta, ref.params, atol=1e-6)
    np.testing.assert_allclose(fit.se, ref.bse, rtol=1e-6)


def test_fit_properties(schema):
    dm, _ = random_instance(schema, 1500, seed=9)
    fit = fit_mnl(dm)
    assert fit.converged and not fit.warnings
    assert fit.grad_norm < 1e-8
    assert np.allclose(fit.covariance, fit.covariance.T)
    assert np.all(np.linalg.eigvalsh(fit.covariance) > 0)
    assert np.all(np.diff(fit.ll_trace) >= -1e-9 * abs(fit.ll_trace[-1]))
    assert fit.log_likelihood == pytest.approx(fit.ll_trace[-1])


def test_fit_requires_data():
    sc = make_schema(2)
    dm = build_design_matrix([], [], sc)
    with pytest.raises(FitError, match="no effective responses"):
        fit_mnl(dm)


def test_separation_is_flagged():
    # the chooser always takes position 1, and position 1 always carries level 0
    sc = make_schema(2, 3)
    design = generate_design(sc, DesignSpec(n_sets=400, seed=2))
    fixed = []
    for cs in design:
        a, b = cs.profiles
        if a.assignment[0] != 0:
            a = Profile((0,) + a.assignment[1:])
        b = Profile((1,) + b.assignment[1:])
        fixed.append(ChoiceSet(cs.id, (a, b)))
    recs = [{"set_id": cs.id, "chosen_index": 0} for cs in fixed]
    dm = build_design_matrix(recs, fixed, sc)
    fit = fit_mnl(dm)
    assert fit.ridge > 0
    assert any("separation" in w for w in fit.warnings)
    assert fit.beta[0] > 10
    assert fit.converged


def test_non_convergence_is_flagged(schema):
    dm, _ = random_instance(schema, 300, seed=3)
    fit = fit_mnl(dm, max_iter=1)
    assert not fit.converged and fit.flagged
    with pytest.raises(FitError):
        wald_table(fit)
    with pytest.raises(FitError):
        marginal_effects(fit)
    with pytest.raises(FitError):
        attribute_importance(dm, fit)
    assert len(wald_table(fit, force=True)) == 41


def test_fit_json_round_trip(schema, tmp_path):
    dm, _ = random_instance(schema, 400, seed=4)
    fit = fit_mnl(dm)
    path = tmp_path / "fit.json"
    save_fit(fit, path)
    back = load_fit(path)
    np.testing.assert_array_equal(back.beta, fit.beta)
    np.testing.assert_allclose(back.se, fit.se)
    assert back.columns == fit.columns
    assert back.blocks == fit.blocks
    assert back.log_likelihood == fit.log_likelihood


# ----------------------------------------------------------------- Wald

@pytest.mark.parametrize("est, se, p, shown", [
    (0.10, 0.09, 0.2665, "0.27"),
    (-0.13, 0.04, 0.001154, "0.00"),
    (0.0, 0.5, 1.0, "1.00"),
])
def test_wald_examples(est, se, p, shown):
    assert wald_p_value(est, se) == pytest.approx(p, abs=5e-4)
    assert format_p(wald_p_value(est, se)) == shown


def test_wald_zero_se_warns():
    with pytest.warns(RuntimeWarning):
        assert wald_p_value(0.3, 0.0) == 0.0


# ----------------------------------------------------------------- effects

@pytest.mark.parametrize("beta, expected, tol", [
    (0.31, 0.154, 1e-3),
    (-0.52, -0.255, 1e-3),
    (2.37, 0.829, 1e-3),
    (1.95, 0.751, 1e-3),
    (2.68, 0.872, 1e-3),
    (0.74, 0.354, 1e-3),
    (4.39, 2 * (math.exp(4.39) / (math.exp(4.39) + 1)) - 1, 1e-12),
    (0.0, 0.0, 0.0),
])
def test_margin_values(beta, expected, tol):
    assert float(head_to_head_margin(beta)) == pytest.approx(expected, abs=tol)


@given(st.floats(-30, 30), st.floats(-30, 30))
def test_margin_odd_monotone_bounded(a, b):
    ma, mb = float(head_to_head_margin(a)), float(head_to_head_margin(b))
    assert float(head_to_head_margin(-a)) == -ma
    assert -1 <= ma <= 1
    if a < b:
        assert ma <= mb


def _fit_with(beta, se, j=2):
    beta = np.asarray(beta, float)
    cols = [("A", f"l{k}") for k in range(len(beta))]
    return MnlFit(beta=beta, covariance=np.diag(np.asarray(se, float) ** 2), log_likelihood=0.0,
                  iterations=1, grad_norm=0.0, converged=True, columns=cols,
                  blocks={"A": slice(0, len(beta))}, n_sets=1, j_profiles=j)


def test_effect_ci_transform_and_delta():
    fit = _fit_with([0.31, -0.52, 0.0], [0.06, 0.05, 0.2])
    rows = marginal_effects(fit)
    assert rows[0].effect == pytest.approx(0.154, abs=1e-3)
    assert rows[0].ci_low == pytest.approx(0.096, abs=1e-3)
    assert rows[0].ci_high == pytest.approx(0.211, abs=1e-3)
    for r in rows:
        assert -1 < r.ci_low <= r.effect <= r.ci_high < 1
    delta = marginal_effects(fit, ci="delta")
    d0 = delta[0]
    half = 1.959964 * 0.06 * (1 - d0.effect**2) / 2
    assert d0.ci_low == pytest.approx(d0.effect - half, abs=1e-6)
    with pytest.raises(ValueError):
        marginal_effects(fit, ci="bootstrap")
    with pytest.raises(ValueError):
        marginal_effects(_fit_with([0.1], [0.1], j=3))


# ----------------------------------------------------------------- importance

def test_importance_normalization_and_nesting(schema):
    dm, _ = random_instance(schema, 2000, seed=12)
    fit = fit_mnl(dm)
    rows = attribute_importance(dm, fit)
    assert [r.attribute for r in rows] == schema.names
    top = max(r.lr_statistic for r in rows)
    for r in rows:
        assert r.lr_statistic >= 0
        assert r.df == schema[r.attribute].n_levels - 1
        assert 0 <= r.normalized_importance <= 100
        assert (r.normalized_importance == 100) == (r.lr_statistic == top)
        # dropping columns never raises the maximized log-likelihood
        restricted = fit_mnl(dm.without_block(r.attribute))
        assert restricted.log_likelihood <= fit.log_likelihood + 1e-9


def test_null_attribute_lr_is_chi_square():
    sc = make_schema(2, 3, 3)
    beta = np.array([0.6, -0.5, 0.4, 0.0, 0.0])  # last attribute has no effect
    pvals = []
    for rep in range(120):
        dm, _ = random_instance(sc, 800, seed=1000 + rep, beta=beta)
        fit = fit_mnl(dm)
        row = [r for r in attribute_importance(dm, fit) if r.attribute == "A2"][0]
        pvals.append(row.p_value)
    assert stats.kstest(pvals, "uniform").pvalue > 1e-3


@pytest.mark.slow
def test_wald_intervals_are_calibrated():
    from dceaudit.agents import simulate_choices
    from dceaudit.inference import encode_design

    sc = make_schema(2, 2, 3)
    beta_true = np.array([0.5, -0.4, 0.8, 0.3])
    z = stats.norm.ppf(0.975)
    hits, errs, ses = [], [], []
    for child in np.random.SeedSequence(31337).spawn(600):
        design = generate_design(sc, DesignSpec(n_sets=2000, seed=int(child.generate_state(1)[0])))
        chosen = simulate_choices(encode_design(design, sc), beta_true, rng=np.random.default_rng(child))
        recs = [{"set_id": cs.id, "chosen_index": int(c)} for cs, c in zip(design, chosen)]
        fit = fit_mnl(build_design_matrix(recs, design, sc))
        hits.append(np.abs(fit.beta - beta_true) <= z * fit.se)
        errs.append(fit.beta - beta_true)
        ses.append(fit.se)
    pooled = np.mean(hits)
    assert abs(pooled - 0.95) < 0.015  # 2,400 pooled trials, sd ~0.0044
    ratio = np.mean(ses, axis=0) / np.std(errs, axis=0)
    assert np.all(np.abs(ratio - 1) < 0.1)
