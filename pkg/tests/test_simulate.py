from fractions import Fraction

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from shiftdecomp.dataset import alpha_hat
from shiftdecomp.decomposition import TERMS, plain_means
from shiftdecomp.exceptions import EstimationError, SchemaError
from shiftdecomp.simulate import (
    DiscreteTable,
    GaussianShift,
    SelectionBias,
    coverage_study,
    exact_decomposition,
    generate,
    make_scenario,
    true_pi,
)

from oracles import discrete_decomposition


def test_discrete_exact_values_in_rationals():
    truth = DiscreteTable().exact_decomposition(exact=True)
    assert truth["anchors"] == {"ep_rp": Fraction(3, 10), "es_rp": Fraction(2, 5),
                                "es_rq": Fraction(7, 10), "eq_rq": Fraction(13, 20)}
    assert truth["terms"] == {"x_shift_p_to_s": Fraction(1, 10), "cond_shift": Fraction(3, 10),
                              "x_shift_s_to_q": Fraction(-1, 20)}
    s = DiscreteTable().shared_masses()
    assert s == [0, 1, 0]


@pytest.mark.parametrize("scheme", ["harmonic", "min"])
def test_discrete_matches_independent_oracle(scheme):
    spec = DiscreteTable(p_masses=(0.2, 0.3, 0.5), q_masses=(0.6, 0.3, 0.1),
                         r_p=(0.1, 0.5, 0.3), r_q=(0.2, 0.4, 0.9))
    ours = spec.exact_decomposition(scheme, exact=True)
    anchors, terms = discrete_decomposition(
        ["0.2", "0.3", "0.5"], ["0.6", "0.3", "0.1"], ["0.1", "0.5", "0.3"], ["0.2", "0.4", "0.9"], scheme)
    assert tuple(ours["anchors"].values()) == anchors
    assert tuple(ours["terms"].values()) == terms


def test_discrete_telescopes_exactly():
    spec = DiscreteTable(p_masses=(0.1, 0.2, 0.7), q_masses=(0.3, 0.3, 0.4),
                         r_p=(0.3, 0.6, 0.2), r_q=(0.5, 0.1, 0.8))
    for scheme in ("harmonic", "min", "truncated"):
        t = spec.exact_decomposition(scheme, exact=True)
        assert sum(t["terms"].values()) == t["anchors"]["eq_rq"] - t["anchors"]["ep_rp"]


def test_equal_tables_have_zero_shift_terms():
    spec = DiscreteTable(p_masses=(0.3, 0.7), q_masses=(0.3, 0.7), r_p=(0.1, 0.2), r_q=(0.4, 0.2))
    t = spec.exact_decomposition(exact=True)["terms"]
    assert t["x_shift_p_to_s"] == 0 and t["x_shift_s_to_q"] == 0


def test_equal_risks_have_zero_conditional_term():
    spec = DiscreteTable(p_masses=(0.6, 0.4), q_masses=(0.1, 0.9), r_p=(0.1, 0.5), r_q=(0.1, 0.5))
    assert spec.exact_decomposition(exact=True)["terms"]["cond_shift"] == 0


def test_table_validation():
    with pytest.raises(SchemaError, match="sum to 1"):
        DiscreteTable(p_masses=(0.5, 0.4, 0.0))
    with pytest.raises(SchemaError, match="shared"):
        DiscreteTable(p_masses=(1.0, 0.0, 0.0), q_masses=(0.0, 0.0, 1.0),
                      r_p=(0.1, None, None), r_q=(None, None, 0.2))


def test_truncated_empty_shared_support_raises():
    spec = DiscreteTable(p_masses=(0.95, 0.05), q_masses=(0.05, 0.95), r_p=(0.1, 0.2), r_q=(0.3, 0.4))
    with pytest.raises(EstimationError):
        spec.exact_decomposition("truncated")


def test_true_pi_examples():
    spec = DiscreteTable(p_masses=(0.5, 0.5), q_masses=(0.5, 0.5), r_p=(0, 0), r_q=(0, 0))
    assert true_pi(spec, 0, 0.5) == 0.5
    assert true_pi(DiscreteTable(), 0, 0.5) == 0.0
    assert true_pi(GaussianShift(a=1.0), 0.0, 0.5) == pytest.approx(0.5)
    with pytest.raises(SchemaError):
        true_pi(DiscreteTable(), 7, 0.5)


def test_gaussian_true_pi_matches_density_formula():
    spec = GaussianShift(a=0.7)
    for z in (-1.3, 0.2, 2.0):
        p, q = norm.pdf(z, 0.7, 1), norm.pdf(z, -0.7, 1)
        assert true_pi(spec, z, 0.3) == pytest.approx(0.3 * q / (0.3 * q + 0.7 * p), rel=1e-12)


def test_gaussian_shared_density_symmetric_and_peaked():
    spec = GaussianShift(a=0.8)
    grid = np.linspace(-4, 4, 41)
    vals = np.array([spec.shared_density(z) for z in grid])
    np.testing.assert_allclose(vals, vals[::-1], rtol=1e-12)
    assert vals.argmax() == 20


def test_gaussian_quadrature_against_direct_integration():
    spec = GaussianShift(a=0.5)
    truth = exact_decomposition(spec)
    ep = quad(lambda z: norm.pdf(z, 0.5, 1) * float(spec.risk(np.array([z]), 0)[0]), -15, 15)[0]
    assert truth["anchors"]["ep_rp"] == pytest.approx(ep, abs=1e-9)


def test_generate_is_deterministic_and_noise_bounded():
    spec = make_scenario("discrete", n_p=500, n_q=400, seed=3)
    a, b = generate(spec), generate(spec)
    np.testing.assert_array_equal(a[0].loss, b[0].loss)
    np.testing.assert_array_equal(a[1].features, b[1].features)
    risk = spec.risk(a[0].features, 0)
    assert np.max(np.abs(a[0].loss - risk)) <= 0.2
    assert len(a[0]) == 500 and len(a[1]) == 400


def test_pi_true_column_matches_pool_fraction():
    spec = make_scenario("gaussian", n_p=300, n_q=100, seed=0)
    pooled = spec.pooled()
    alpha = alpha_hat(pooled)
    z = pooled.features[:5, 0]
    np.testing.assert_allclose(pooled.extra["pi_true"][:5], [true_pi(spec, v, alpha) for v in z])


def test_extreme_selection_truncates_train():
    train, target = generate(make_scenario("selection-extreme", seed=1))
    assert train.features.max() <= 25.0
    assert target.features.max() > 25.0


def test_oversample_keeps_full_support():
    train, _ = generate(make_scenario("selection-oversample", seed=1))
    assert train.features.max() > 25.0
    young = np.mean(train.features[:, 0] <= 25.0)
    spec = SelectionBias(extreme=False)
    assert young == pytest.approx(spec._train_young_mass(), abs=0.03)


def test_missing_covariate_views_share_draws():
    obs = make_scenario("missing-covariate", seed=5)
    full = make_scenario("missing-covariate-full", seed=5)
    a, b = generate(obs), generate(full)
    np.testing.assert_array_equal(a[0].loss, b[0].loss)
    np.testing.assert_array_equal(a[0].features[:, 0], b[0].features[:, 0])


def test_scenario_truths():
    yx = exact_decomposition(make_scenario("pure-yx"))["terms"]
    assert yx["x_shift_p_to_s"] == pytest.approx(0, abs=1e-12)
    assert yx["cond_shift"] == pytest.approx(0.08, abs=1e-9)
    x = exact_decomposition(make_scenario("pure-x"))["terms"]
    assert x["cond_shift"] == pytest.approx(0, abs=1e-12)
    full = exact_decomposition(make_scenario("missing-covariate-full"))["terms"]
    assert full["cond_shift"] == pytest.approx(0, abs=1e-12)
    ext = exact_decomposition(make_scenario("selection-extreme"))["terms"]
    assert ext["x_shift_p_to_s"] == pytest.approx(0, abs=1e-9)


def test_empirical_means_near_truth():
    spec = make_scenario("discrete", n_p=20000, n_q=20000, seed=8)
    ep, eq = plain_means(spec.pooled())
    assert ep == pytest.approx(0.3, abs=4 * np.sqrt((0.01 + 0.2**2 / 3) / 20000))
    assert eq == pytest.approx(0.65, abs=4 * np.sqrt((0.0025 + 0.2**2 / 3) / 20000))


def test_coverage_requires_enough_reps():
    with pytest.raises(ValueError):
        coverage_study(make_scenario("gaussian"), n_reps=10)


def test_constant_loss_coverage_is_one():
    spec = DiscreteTable(p_masses=(0.5, 0.5), q_masses=(0.25, 0.75), r_p=(0.3, 0.3),
                         r_q=(0.3, 0.3), n_p=100, n_q=100)
    res = coverage_study(spec, methods=("if",), n_reps=100, reuse_nuisance=True)
    for t in TERMS:
        assert res.coverage("if", t) == 1.0
    assert res.to_dict()["coverage"]["if"]["cond_shift"] == 1.0


def test_coverage_at_half_level():
    spec = make_scenario("gaussian", n_p=500, n_q=500)
    res = coverage_study(spec, methods=("if",), n_reps=200, level=0.5, seed=3)
    for t in TERMS:
        assert abs(res.coverage("if", t) - 0.5) <= 0.07 + 2 * res.binomial_se("if", t)


def test_missing_covariate_attribution_depends_on_hidden_feature():
    from shiftdecomp import ShiftDecomposition

    observed = make_scenario("missing-covariate", n_p=20000, n_q=20000, seed=11).pooled()
    r = ShiftDecomposition(se="none").fit_pooled(observed).report_
    assert r.terms["cond_shift"] >= 0.7 * r.gap
    full = make_scenario("missing-covariate-full", n_p=20000, n_q=20000, seed=11).pooled()
    r = ShiftDecomposition(se="if").fit_pooled(full).report_
    assert abs(r.terms["cond_shift"]) <= 3 * r.se["if"]["cond_shift"].se
