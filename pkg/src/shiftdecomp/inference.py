"""Standard errors and intervals: plug-in influence functions, half-sample
bootstrap and the nonparametric bootstrap.

Every quantity is indexed by :data:`~shiftdecomp.decomposition.QUANTITIES`
(four anchors, then three terms).
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
from scipy.stats import norm
from sklearn.base import clone

from .dataset import TARGET_Q, TRAIN_P, PooledDataset
from .decomposition import QUANTITIES
from .exceptions import EstimationError, SchemaError, UnsupportedMethodError
from .propensity import NadarayaWatsonRegressor
from .weights import WeightScheme, lambda_derivs

logger = logging.getLogger(__name__)

MAX_DISCARD_FRACTION = 0.10
MIN_REPLICATES = 50

IF_PLUGIN = "if"
HALF_SAMPLE = "half"
NONPARAMETRIC = "np"
METHODS = (IF_PLUGIN, HALF_SAMPLE, NONPARAMETRIC)


@dataclass(frozen=True)
class IntervalEstimate:
    point: float
    se: float
    ci_low: float
    ci_high: float
    method: str
    replicates: int = 0
    level: float = 0.95
    pct_low: float | None = None
    pct_high: float | None = None
    discarded: int = 0

    def covers(self, value: float, tol: float = 1e-12) -> bool:
        """Whether ``value`` lies in the interval, allowing ``tol`` of rounding
        slack so degenerate zero-width intervals can cover."""
        slack = tol * (1.0 + abs(self.point))
        return self.ci_low - slack <= value <= self.ci_high + slack

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, data: dict) -> "IntervalEstimate":
        return cls(**data)


def _normal(point, se, level, method, **extra) -> IntervalEstimate:
    z = float(norm.ppf(0.5 + level / 2.0))
    return IntervalEstimate(float(point), float(se), float(point - z * se),
                            float(point + z * se), method, level=level, **extra)


# --------------------------------------------------------------------------
# influence functions


@dataclass
class InfluencePieces:
    psi: np.ndarray          # (n, 7), columns follow QUANTITIES
    mu_q: np.ndarray
    mu_p: np.ndarray
    denom_q: float
    denom_p: float


def _theta_influence(s, pi, alpha, loss, mu):
    """Influence function of the self-normalized shared-risk estimate on the
    side tagged by ``s`` (``s=T`` with ``(pi, alpha)``; the train side uses
    ``1-T``, ``1-pi``, ``1-alpha``, under which the harmonic weights swap)."""
    mix = (1.0 - alpha) * pi + alpha * (1.0 - pi)
    w = (1.0 - pi) / mix  # lambda / pi
    denom = float(np.mean(s * w))
    theta = float(np.sum(s * w * loss) / np.sum(s * w))
    d_alpha, d_pi_ratio = lambda_derivs(pi, alpha)
    direct = (loss - theta) * s * w
    base_rate = np.mean((loss - theta) * s / pi * d_alpha) * (s - alpha)
    nuisance = (mu - theta) * pi * (s - pi) * d_pi_ratio
    # population mean of the nuisance term is 0; remove its sampling mean
    nuisance = nuisance - nuisance.mean()
    return (direct + base_rate + nuisance) / denom, denom


def influence_functions(pooled: PooledDataset, pi_hat, alpha_hat: float, mu_q_hat, mu_p_hat) -> InfluencePieces:
    """Per-example influence values for every anchor and term (harmonic scheme)."""
    t = pooled.domain.astype(float)
    loss = pooled.loss
    pi = np.asarray(pi_hat, dtype=float)
    mu_q = np.asarray(mu_q_hat, dtype=float)
    mu_p = np.asarray(mu_p_hat, dtype=float)
    psi_q, d_q = _theta_influence(t, pi, alpha_hat, loss, mu_q)
    psi_p, d_p = _theta_influence(1.0 - t, 1.0 - pi, 1.0 - alpha_hat, loss, mu_p)
    ep = loss[t == 0].mean()
    eq = loss[t == 1].mean()
    psi_ep = (1.0 - t) * (loss - ep) / (1.0 - alpha_hat)
    psi_eq = t * (loss - eq) / alpha_hat
    anchors = np.column_stack([psi_ep, psi_p, psi_q, psi_eq])
    psi = np.column_stack([anchors, np.diff(anchors, axis=1)])
    return InfluencePieces(psi, mu_q, mu_p, d_q, d_p)


def fit_mu(pooled: PooledDataset, domain: int, exclude_fold: int | None = None, regressor=None):
    """Kernel regression of loss on features within one domain, optionally
    leaving one fold out."""
    rows = pooled.domain == domain
    if exclude_fold is not None and pooled.n_folds > 1:
        rows &= pooled.fold_id != exclude_fold
    if not rows.any():
        raise SchemaError("no examples available to fit the conditional-loss regression")
    model = clone(regressor) if regressor is not None else NadarayaWatsonRegressor()
    return model.fit(pooled.features[rows], pooled.loss[rows])


def cross_fit_mu(pooled: PooledDataset, domain: int, regressor=None) -> np.ndarray:
    """Out-of-fold conditional-loss predictions at every pooled example."""
    out = np.empty(pooled.n)
    for k in range(pooled.n_folds):
        rows = pooled.fold_id == k
        out[rows] = fit_mu(pooled, domain, k, regressor).predict(pooled.features[rows])
    return out


def if_se(pooled: PooledDataset, pi_hat, alpha_hat: float, mu_q_hat=None, mu_p_hat=None,
          scheme: WeightScheme | str = "harmonic", level: float = 0.95,
          point: np.ndarray | None = None, regressor=None) -> dict[str, IntervalEstimate]:
    """Plug-in influence-function standard errors, ``sd(psi) / sqrt(n)``.

    Only the harmonic scheme has a derived influence function; use a
    bootstrap for the others. Missing regressions are cross-fitted here.
    """
    scheme = WeightScheme.coerce(scheme)
    if scheme.kind != "harmonic":
        raise UnsupportedMethodError(
            f"influence-function standard errors are only available for the harmonic scheme, "
            f"not {scheme.kind!r}; use the half-sample or nonparametric bootstrap")
    if mu_q_hat is None:
        mu_q_hat = cross_fit_mu(pooled, TARGET_Q, regressor)
    if mu_p_hat is None:
        mu_p_hat = cross_fit_mu(pooled, TRAIN_P, regressor)
    pieces = influence_functions(pooled, pi_hat, alpha_hat, mu_q_hat, mu_p_hat)
    se = pieces.psi.std(axis=0) / np.sqrt(pooled.n)
    if point is None:
        from .decomposition import anchor_vector

        point = anchor_vector(pooled, pi_hat, alpha_hat, scheme)
    return {q: _normal(point[j], se[j], level, IF_PLUGIN) for j, q in enumerate(QUANTITIES)}


# --------------------------------------------------------------------------
# resampling


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    """Replicate streams depend only on ``(seed, index)``, never on scheduling."""
    return np.random.default_rng([int(seed), int(index)])


def _run_replicates(pooled, fit_pipeline, draw, n_reps, seed, n_jobs):
    def one(b):
        rng = replicate_rng(seed, b)
        idx = draw(rng)
        try:
            sub = pooled.subset(idx, seed=int(rng.integers(2**32)))
            return np.asarray(fit_pipeline(sub), dtype=float)
        except (SchemaError, EstimationError) as exc:
            logger.debug("replicate %d discarded: %s", b, exc)
            return None

    if n_jobs and n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            results = list(ex.map(one, range(n_reps)))
    else:
        results = [one(b) for b in range(n_reps)]
    kept = [r for r in results if r is not None]
    discarded = n_reps - len(kept)
    if discarded > MAX_DISCARD_FRACTION * n_reps:
        raise EstimationError(
            f"{discarded} of {n_reps} bootstrap replicates were unusable "
            "(a domain or fold emptied, or an empty shared support)")
    return np.vstack(kept), discarded


def _check_reps(n_reps):
    if n_reps < MIN_REPLICATES:
        raise ValueError(f"need at least {MIN_REPLICATES} bootstrap replicates, got {n_reps}")


def half_sample_bootstrap(pooled: PooledDataset, fit_pipeline: Callable[[PooledDataset], np.ndarray],
                          n_reps: int = 500, seed: int = 0, level: float = 0.95,
                          point: np.ndarray | None = None, n_jobs: int = 1) -> dict[str, IntervalEstimate]:
    """Refit on ``n // 2`` examples drawn without replacement.

    The sd of the replicate statistics is reported as the standard error with
    no rescaling: a half sample drawn without replacement has conditional
    variance ``sigma^2 (1/m - 1/n)`` with ``m = n/2``, which is ``sigma^2/n``.
    The percentile columns hold the basic interval built from the replicate
    errors ``theta* - theta``.
    """
    _check_reps(n_reps)
    n = pooled.n
    point = np.asarray(fit_pipeline(pooled) if point is None else point, dtype=float)
    reps, discarded = _run_replicates(
        pooled, fit_pipeline, lambda rng: rng.choice(n, size=n // 2, replace=False),
        n_reps, seed, n_jobs)
    se = reps.std(axis=0, ddof=1)
    err = reps - point
    a = (1.0 - level) / 2.0
    lo_q, hi_q = np.quantile(err, [a, 1.0 - a], axis=0)
    return {q: _normal(point[j], se[j], level, HALF_SAMPLE, replicates=len(reps),
                       pct_low=float(point[j] - hi_q[j]), pct_high=float(point[j] - lo_q[j]),
                       discarded=discarded)
            for j, q in enumerate(QUANTITIES)}


def np_bootstrap(pooled: PooledDataset, fit_pipeline: Callable[[PooledDataset], np.ndarray],
                 n_reps: int = 500, seed: int = 0, stratified: bool = False, level: float = 0.95,
                 point: np.ndarray | None = None, n_jobs: int = 1) -> dict[str, IntervalEstimate]:
    """Resample ``n`` examples with replacement and refit.

    Resampling is pooled by default, so the train/target split varies across
    replicates as it would under repeated sampling; ``stratified=True`` keeps
    both sample sizes fixed.
    """
    _check_reps(n_reps)
    n = pooled.n
    point = np.asarray(fit_pipeline(pooled) if point is None else point, dtype=float)
    if stratified:
        groups = [np.flatnonzero(pooled.domain == d) for d in (TRAIN_P, TARGET_Q)]

        def draw(rng):
            return np.concatenate([g[rng.integers(0, g.size, g.size)] for g in groups])
    else:
        def draw(rng):
            return rng.integers(0, n, n)

    reps, discarded = _run_replicates(pooled, fit_pipeline, draw, n_reps, seed, n_jobs)
    se = reps.std(axis=0, ddof=1)
    a = (1.0 - level) / 2.0
    lo, hi = np.quantile(reps, [a, 1.0 - a], axis=0)
    return {q: _normal(point[j], se[j], level, NONPARAMETRIC, replicates=len(reps),
                       pct_low=float(lo[j]), pct_high=float(hi[j]), discarded=discarded)
            for j, q in enumerate(QUANTITIES)}
