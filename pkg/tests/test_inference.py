import os

import numpy as np
import pytest

from shiftdecomp.dataset import PooledDataset, alpha_hat
from shiftdecomp.decomposition import QUANTITIES, TERMS, anchor_vector, theta_hats
from shiftdecomp.estimator import ShiftDecomposition
from shiftdecomp.exceptions import EstimationError, UnsupportedMethodError
from shiftdecomp.inference import (
    MIN_REPLICATES,
    half_sample_bootstrap,
    if_se,
    influence_functions,
    np_bootstrap,
    replicate_rng,
)
from shiftdecomp.propensity import clamp
from shiftdecomp.simulate import make_scenario
from shiftdecomp.weights import WeightScheme

FULL = os.environ.get("SHIFTDECOMP_FULL_COVERAGE") == "1"

# the discrete table: z in {0, 1, 2}
P_MASS = np.array([0.5, 0.5, 0.0])
Q_MASS = np.array([0.0, 0.5, 0.5])
R_P = np.array([0.2, 0.4, 0.0])
R_Q = np.array([0.0, 0.7, 0.6])
THETA_Q = 0.7


def discrete_pool(n, rng, noise=0.2, k=2):
    """Draw the discrete table directly, with exact class probabilities."""
    zp = rng.choice(3, size=n, p=P_MASS)
    zq = rng.choice(3, size=n, p=Q_MASS)
    z = np.r_[zp, zq].astype(float)
    domain = np.r_[np.zeros(n, int), np.ones(n, int)]
    risk = np.where(domain == 0, R_P[z.astype(int)], R_Q[z.astype(int)])
    loss = risk + rng.uniform(-noise, noise, 2 * n)
    pi = np.array([0.0, 0.5, 1.0])[z.astype(int)]
    pooled = PooledDataset.from_arrays(z, loss, domain, k, int(rng.integers(2**31)),
                                       extra={"pi": pi})
    mu_p = R_P[z.astype(int)]
    mu_q = R_Q[z.astype(int)]
    return pooled, clamp(pi, 1e-3), mu_p, mu_q


def precomputed_pipeline(sub):
    pi = clamp(sub.extra["pi"], 1e-3)
    return anchor_vector(sub, pi, alpha_hat(sub), WeightScheme())


def constant_pool(n=60):
    rng = np.random.default_rng(0)
    z = rng.normal(size=2 * n)
    domain = np.r_[np.zeros(n, int), np.ones(n, int)]
    return PooledDataset.from_arrays(z, np.full(2 * n, 0.4), domain, 2, 0)


def test_constant_loss_gives_zero_influence_se():
    pooled = constant_pool()
    pi = np.random.default_rng(1).uniform(0.2, 0.8, pooled.n)
    out = if_se(pooled, pi, alpha_hat(pooled))
    assert all(out[q].se == pytest.approx(0.0, abs=1e-14) for q in QUANTITIES)


@pytest.mark.parametrize("boot", [half_sample_bootstrap, np_bootstrap])
def test_constant_loss_gives_zero_bootstrap_se(boot):
    pooled = constant_pool()
    est = ShiftDecomposition(se="none")
    out = boot(pooled, est._pipeline(WeightScheme()), 50, 0)
    assert all(out[q].se == pytest.approx(0.0, abs=1e-14) for q in TERMS)


def test_influence_values_are_centered():
    rng = np.random.default_rng(5)
    pooled, pi, mu_p, mu_q = discrete_pool(2000, rng)
    pieces = influence_functions(pooled, pi, alpha_hat(pooled), mu_q, mu_p)
    tp, tq = theta_hats(pooled, pi, alpha_hat(pooled))
    assert abs(pieces.psi[:, 2].mean()) <= 1e-8 * (1 + abs(tq))
    assert abs(pieces.psi[:, 1].mean()) <= 1e-8 * (1 + abs(tp))
    assert np.abs(pieces.psi.mean(axis=0)).max() <= 1e-8
    # term columns are differences of anchor columns
    np.testing.assert_allclose(pieces.psi[:, 5], pieces.psi[:, 2] - pieces.psi[:, 1])


def test_if_unsupported_for_other_schemes():
    pooled = constant_pool()
    with pytest.raises(UnsupportedMethodError, match="bootstrap"):
        if_se(pooled, np.full(pooled.n, 0.5), 0.5, scheme="min")


def _mc_theta_q(n, reps, seed):
    rng = np.random.default_rng(seed)
    est, se = [], []
    for _ in range(reps):
        pooled, pi, mu_p, mu_q = discrete_pool(n, rng)
        alpha = alpha_hat(pooled)
        out = if_se(pooled, pi, alpha, mu_q, mu_p)
        est.append(out["es_rq"].point)
        se.append(out["es_rq"].se)
    return np.array(est), np.array(se)


def test_if_se_matches_monte_carlo_and_root_n_scaling():
    reps = 2000
    est_1, se_1 = _mc_theta_q(1000, reps, 11)
    est_2, se_2 = _mc_theta_q(2000, reps, 12)
    assert abs(est_1.mean() - THETA_Q) < 4 * est_1.std() / np.sqrt(reps)
    assert se_1.mean() == pytest.approx(est_1.std(ddof=1), rel=0.10)
    assert se_2.mean() == pytest.approx(est_2.std(ddof=1), rel=0.10)
    assert se_2.mean() / se_1.mean() == pytest.approx(1 / np.sqrt(2), rel=0.10)


def test_bootstrap_determinism_and_thread_independence():
    pooled = make_scenario("gaussian", n_p=300, n_q=300, seed=3).pooled()
    pipeline = ShiftDecomposition(se="none")._pipeline(WeightScheme())
    a = np_bootstrap(pooled, pipeline, 60, seed=9)
    b = np_bootstrap(pooled, pipeline, 60, seed=9)
    c = np_bootstrap(pooled, pipeline, 60, seed=9, n_jobs=4)
    assert a == b == c
    h1 = half_sample_bootstrap(pooled, pipeline, 60, seed=9)
    h2 = half_sample_bootstrap(pooled, pipeline, 60, seed=9, n_jobs=3)
    assert h1 == h2


def test_replicate_streams_depend_only_on_seed_and_index():
    assert replicate_rng(4, 17).integers(2**62) == replicate_rng(4, 17).integers(2**62)
    assert replicate_rng(4, 17).integers(2**62) != replicate_rng(4, 18).integers(2**62)


def test_too_few_replicates_rejected():
    pooled = constant_pool()
    with pytest.raises(ValueError):
        np_bootstrap(pooled, precomputed_pipeline, MIN_REPLICATES - 1)


def test_failed_replicates_are_counted_and_limited():
    pooled = constant_pool()
    calls = {"n": 0}

    def flaky(sub):
        calls["n"] += 1
        if calls["n"] % 20 == 0:
            raise EstimationError("empty shared support")
        return np.zeros(7)

    out = np_bootstrap(pooled, flaky, 100, point=np.zeros(7))
    assert out["cond_shift"].discarded == 5 and out["cond_shift"].replicates == 95

    def broken(sub):
        raise EstimationError("empty shared support")

    with pytest.raises(EstimationError, match="unusable"):
        np_bootstrap(pooled, broken, 100, point=np.zeros(7))


def test_stratified_bootstrap_keeps_domain_sizes():
    pooled = make_scenario("gaussian", n_p=200, n_q=100, seed=0).pooled()
    seen = []

    def record(sub):
        seen.append((sub.n_p, sub.n_q))
        return np.zeros(7)

    np_bootstrap(pooled, record, 50, stratified=True, point=np.zeros(7))
    assert set(seen) == {(200, 100)}


def test_percentile_and_normal_intervals_reported():
    pooled = make_scenario("gaussian", n_p=400, n_q=400, seed=1).pooled()
    pipeline = ShiftDecomposition(se="none")._pipeline(WeightScheme())
    out = np_bootstrap(pooled, pipeline, 100, seed=0)
    iv = out["cond_shift"]
    assert iv.pct_low < iv.point < iv.pct_high
    assert iv.ci_low < iv.point < iv.ci_high
    assert iv.replicates == 100 and iv.method == "np"


def test_np_and_half_sample_se_agree():
    pooled = make_scenario("gaussian", n_p=2000, n_q=2000, seed=2).pooled()
    est = ShiftDecomposition(se=("half", "np"), n_replicates=200, random_state=2).fit_pooled(pooled)
    for q in TERMS:
        a, b = est.report_.se["np"][q].se, est.report_.se["half"][q].se
        assert abs(a - b) / max(a, b) < 0.30, q


def test_half_sample_coverage_on_discrete_oracle():
    """Coverage of the conditional-shift term, class probabilities held at the truth."""
    outer, reps, lo, hi = (500, 500, 0.90, 0.98) if FULL else (100, 100, 0.88, 1.0)
    rng = np.random.default_rng(2024)
    hits = 0
    for i in range(outer):
        pooled, _, _, _ = discrete_pool(2000, rng)
        iv = half_sample_bootstrap(pooled, precomputed_pipeline, reps, seed=i)["cond_shift"]
        hits += iv.covers(0.3)
    assert lo <= hits / outer <= hi
