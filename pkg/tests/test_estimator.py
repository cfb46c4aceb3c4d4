import numpy as np
import pytest
from sklearn.base import clone
from sklearn.ensemble import RandomForestClassifier

from shiftdecomp import ShiftDecomposition
from shiftdecomp.decomposition import TERMS
from shiftdecomp.exceptions import SchemaError, UnsupportedMethodError
from shiftdecomp.simulate import make_scenario


@pytest.fixture(scope="module")
def gaussian():
    spec = make_scenario("gaussian", n_p=600, n_q=600, seed=4)
    pooled = spec.pooled()
    return spec, pooled


def arrays(pooled):
    return pooled.features, pooled.loss, pooled.domain


def test_get_params_and_clone():
    est = ShiftDecomposition(scheme="min", n_folds=5)
    params = est.get_params()
    assert params["scheme"] == "min" and params["n_folds"] == 5
    assert clone(est).get_params() == params


def test_fit_exposes_fitted_attributes(gaussian):
    _, pooled = gaussian
    est = ShiftDecomposition(se="if").fit(*arrays(pooled))
    assert set(est.terms_) == set(TERMS)
    assert est.pi_hat_.shape == (pooled.n,)
    assert np.all(est.weights_ > 0)
    assert 0 < est.alpha_ < 1
    assert "if" in est.report_.se


def test_unfitted_access_raises():
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        ShiftDecomposition().terms_


def test_precomputed_requires_values(gaussian):
    _, pooled = gaussian
    with pytest.raises(SchemaError):
        ShiftDecomposition(classifier="precomputed", se="none").fit(*arrays(pooled))
    est = ShiftDecomposition(classifier="precomputed", se="none").fit(
        *arrays(pooled), propensity=pooled.extra["pi_true"])
    assert est.report_.diagnostics["mean_gap"] < 0.05


def test_non_harmonic_if_request(gaussian):
    _, pooled = gaussian
    with pytest.raises(UnsupportedMethodError):
        ShiftDecomposition(scheme="min", se="if").fit_pooled(pooled)
    est = ShiftDecomposition(scheme="min", se="all", n_replicates=50).fit_pooled(pooled)
    assert "if" not in est.report_.se and "np" in est.report_.se
    assert any("skipped" in n for n in est.report_.notes)


def test_kernel_classifier(gaussian):
    _, pooled = gaussian
    est = ShiftDecomposition(classifier="kernel", se="none").fit_pooled(pooled)
    assert all(np.isfinite(v) for v in est.terms_.values())


def test_any_sklearn_classifier(gaussian):
    _, pooled = gaussian
    rf = RandomForestClassifier(n_estimators=20, min_samples_leaf=20, random_state=0)
    est = ShiftDecomposition(classifier=rf, se="none").fit_pooled(pooled)
    assert all(np.isfinite(v) for v in est.terms_.values())


def test_unknown_se_method():
    with pytest.raises(ValueError):
        ShiftDecomposition(se="jackknife").fit(np.zeros((6, 1)), np.zeros(6), [0, 1] * 3)


def test_reuse_nuisance_adds_note(gaussian):
    _, pooled = gaussian
    est = ShiftDecomposition(se="np", n_replicates=50, reuse_nuisance=True).fit_pooled(pooled)
    assert any("reused" in n for n in est.report_.notes)


def test_thread_count_does_not_change_report(gaussian):
    _, pooled = gaussian
    a = ShiftDecomposition(se=("half", "np"), n_replicates=60, n_jobs=1).fit_pooled(pooled).report_
    b = ShiftDecomposition(se=("half", "np"), n_replicates=60, n_jobs=8).fit_pooled(pooled).report_
    assert a.se == b.se and a.terms == b.terms


def test_identical_samples_terms_near_zero():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(800, 1))
    loss = 0.3 + 0.1 * np.tanh(z[:, 0]) + rng.uniform(-0.1, 0.1, 800)
    X = np.r_[z, z]
    est = ShiftDecomposition(se="if").fit(X, np.r_[loss, loss], np.r_[np.zeros(800), np.ones(800)])
    for t in TERMS:
        assert abs(est.terms_[t]) <= 2 * est.report_.se["if"][t].se + 1e-12
