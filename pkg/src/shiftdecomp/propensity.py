"""Domain classifiers for ``pi(z) = P(T=1 | Z=z)`` and kernel regression.

Estimators follow the scikit-learn API, so any classifier exposing
``predict_proba`` can stand in for the built-in ones inside :func:`cross_fit`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin, clone
from sklearn.exceptions import ConvergenceWarning
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .dataset import TARGET_Q, TRAIN_P, PooledDataset, alpha_hat
from .exceptions import InvariantError, SchemaError
from .weights import WeightScheme, weight_p, weight_q

DEFAULT_CLIP = 1e-3

# Cap on query-by-train-by-dim kernel evaluations held in memory at once.
_CHUNK_ELEMENTS = 4_000_000


def clamp(pi, clip: float = DEFAULT_CLIP):
    return np.clip(pi, clip, 1.0 - clip)


def _check_clip(clip):
    if not (0.0 < clip < 0.5):
        raise ValueError(f"clip must lie in (0, 0.5), got {clip}")


# --------------------------------------------------------------------------
# kernels


def _epanechnikov_moment(power: int) -> float:
    # integral over [-1, 1] of u**power * 0.75 * (1 - u**2), even power only
    return 0.75 * (2.0 / (power + 1) - 2.0 / (power + 3))


def kernel_coefficients(order: int) -> np.ndarray:
    """Even-power polynomial correction making Epanechnikov a kernel of ``order``.

    The kernel is ``0.75 (1-u^2) sum_m c[m] u^(2m)`` on ``[-1, 1]``; the
    coefficients solve ``int K = 1`` and ``int u^j K = 0`` for ``0 < j < order``
    (odd moments vanish by symmetry).
    """
    if order < 2 or order % 2:
        raise ValueError(f"kernel order must be an even integer >= 2, got {order}")
    m = order // 2
    gram = np.array([[_epanechnikov_moment(2 * (i + j)) for j in range(m)] for i in range(m)])
    rhs = np.zeros(m)
    rhs[0] = 1.0
    return np.linalg.solve(gram, rhs)


def kernel_eval(u, coefs: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    u2 = u * u
    poly = np.polynomial.polynomial.polyval(u2, coefs)
    return np.where(u2 <= 1.0, 0.75 * (1.0 - u2) * poly, 0.0)


def _kernel_sums(queries, train, sigma, coefs, values):
    """Per query: ``sum_i K_sigma(q - x_i)`` and ``sum_i K_sigma(q - x_i) values_i``.

    ``values`` has shape ``(n, m)``; the product kernel normalizing constant
    ``prod(sigma)`` is dropped because only ratios are ever used. Queries are
    processed in blocks sorted on the first coordinate so each block only
    touches training rows inside its first-coordinate support window.
    """
    uq, q_inv = np.unique(queries, axis=0, return_inverse=True)
    if uq.shape[0] < queries.shape[0]:
        den, num = _kernel_sums(uq, train, sigma, coefs, values)
        q_inv = q_inv.reshape(-1)
        return den[q_inv], num[q_inv]
    ut, t_inv = np.unique(train, axis=0, return_inverse=True)
    if ut.shape[0] < train.shape[0]:
        # tied rows share kernel weights, so sum their values (and a count) first
        t_inv = t_inv.reshape(-1)
        grouped = np.zeros((ut.shape[0], values.shape[1] + 1))
        np.add.at(grouped, t_inv, np.column_stack([np.ones(train.shape[0]), values]))
        counts, values, train = grouped[:, 0], grouped[:, 1:], ut
    else:
        counts = None
    n, d = train.shape
    t_order = np.argsort(train[:, 0], kind="stable")
    train = train[t_order]
    values = values[t_order]
    counts = None if counts is None else counts[t_order]
    first = train[:, 0]
    q_order = np.argsort(queries[:, 0], kind="stable")
    den = np.zeros(queries.shape[0])
    num = np.zeros((queries.shape[0], values.shape[1]))
    block = 256
    for start in range(0, queries.shape[0], block):
        rows = q_order[start:start + block]
        q = queries[rows]
        lo = np.searchsorted(first, q[0, 0] - sigma[0], side="left")
        hi = np.searchsorted(first, q[-1, 0] + sigma[0], side="right")
        if hi <= lo:
            continue
        for sub in range(lo, hi, max(1, _CHUNK_ELEMENTS // max(1, q.shape[0] * d))):
            end = min(hi, sub + max(1, _CHUNK_ELEMENTS // max(1, q.shape[0] * d)))
            x = train[sub:end]
            w = kernel_eval((q[:, 0, None] - x[None, :, 0]) / sigma[0], coefs)
            for j in range(1, d):
                w *= kernel_eval((q[:, j, None] - x[None, :, j]) / sigma[j], coefs)
            den[rows] += w.sum(axis=1) if counts is None else w @ counts[sub:end]
            num[rows] += w @ values[sub:end]
    return den, num


def _bandwidth(X, scale, exponent):
    std = X.std(axis=0)
    flat = ~(std > 0)
    if flat.any():
        warnings.warn(f"zero-variance feature dimension(s) {np.flatnonzero(flat).tolist()}: "
                      "bandwidth scale falls back to 1.0", RuntimeWarning, stacklevel=3)
        std = np.where(flat, 1.0, std)
    return scale * X.shape[0] ** exponent * std


@dataclass(frozen=True)
class KernelConfig:
    """Kernel order, smoothness and bandwidth rule ``sigma = scale * n**exponent * std``.

    With ``order`` or ``exponent`` left as ``None`` the undersmoothing default
    is used: the smallest even order for which the admissible exponent
    interval ``(-1/(2d+4p), -1/(2k))`` is nonempty, and its midpoint. Passing
    ``dim`` validates at construction; otherwise :meth:`resolve` validates
    once the feature dimension is known. ``admissible=False`` skips the
    interval check (for example to run an order-2 kernel); the exponent then
    defaults to ``-1/(d+4)`` when the interval is empty.
    """

    order: int | None = None
    smoothness: int = 2
    exponent: float | None = None
    scale: float = 1.0
    dim: int | None = None
    admissible: bool = True

    def __post_init__(self):
        if self.smoothness < 1:
            raise ValueError("smoothness must be >= 1")
        if self.scale <= 0:
            raise ValueError("kernel scale must be > 0")
        if self.order is not None and (self.order < 2 or self.order % 2):
            raise ValueError(f"kernel order must be an even integer >= 2, got {self.order}")
        if self.exponent is not None and self.exponent >= 0:
            raise ValueError("kernel exponent must be < 0")
        if self.dim is not None:
            self.resolve(self.dim)

    @staticmethod
    def interval(dim: int, smoothness: int, order: int) -> tuple[float, float]:
        return -1.0 / (2 * dim + 4 * smoothness), -1.0 / (2 * order)

    def resolve(self, dim: int) -> tuple[int, float]:
        """Return ``(order, exponent)`` for feature dimension ``dim``."""
        p = self.smoothness
        order = self.order
        if order is None:
            order = 2 * (math.floor((dim + 2 * p) / 2) + 1)
        lo, hi = self.interval(dim, p, order)
        if not self.admissible:
            if self.exponent is not None:
                return order, self.exponent
            return order, (0.5 * (lo + hi) if lo < hi else -1.0 / (dim + 4))
        if not lo < hi:
            raise ValueError(
                f"kernel order {order} admits no bandwidth exponent for d={dim}, p={p}: "
                f"need order > d + 2p = {dim + 2 * p}")
        exponent = self.exponent if self.exponent is not None else 0.5 * (lo + hi)
        if not lo < exponent < hi:
            raise ValueError(
                f"kernel exponent {exponent} outside the admissible interval ({lo:.6g}, {hi:.6g})")
        return order, exponent

    def to_dict(self) -> dict:
        return {"order": self.order, "smoothness": self.smoothness,
                "exponent": self.exponent, "scale": self.scale, "admissible": self.admissible}


# --------------------------------------------------------------------------
# classifiers


class LogisticPropensity(ClassifierMixin, BaseEstimator):
    """Unpenalized logistic regression fit by iteratively reweighted least squares.

    Falls back to a damped gradient step when the weighted normal equations
    are singular. Perfectly separated data is not an error: iterations stop
    once the log-likelihood plateaus and ``separated_`` is set.

    Parameters
    ----------
    max_iter : int, default=100
    tol : float, default=1e-10
        Relative log-likelihood change treated as convergence.
    clip : float, default=1e-3
        ``predict_proba`` output is clamped to ``[clip, 1 - clip]``.
    """

    def __init__(self, max_iter=100, tol=1e-10, clip=DEFAULT_CLIP):
        self.max_iter = max_iter
        self.tol = tol
        self.clip = clip

    def fit(self, X, y):
        _check_clip(self.clip)
        X, y = check_X_y(X, y, dtype=float)
        t = (y == 1).astype(float) if set(np.unique(y)) <= {0, 1} else None
        if t is None:
            raise SchemaError("domain labels must be 0/1")
        self.classes_ = np.array([0, 1])
        n, d = X.shape
        center = X.mean(axis=0)
        spread = X.std(axis=0)
        active = spread > 0
        spread = np.where(active, spread, 1.0)
        design = np.column_stack([np.ones(n), ((X - center) / spread)[:, active]])
        base = np.clip(t.mean(), 1e-12, 1 - 1e-12)
        beta = np.zeros(design.shape[1])
        beta[0] = math.log(base / (1.0 - base))
        eta = design @ beta
        ll = float(t @ eta - np.logaddexp(0.0, eta).sum())
        converged = False
        for it in range(1, self.max_iter + 1):
            p = expit(eta)
            grad = design.T @ (t - p)
            hess = design.T @ (design * (p * (1.0 - p))[:, None])
            cond = np.linalg.cond(hess)
            if np.isfinite(cond) and cond < 1e14:
                step = np.linalg.solve(hess, grad)
            else:
                step = 4.0 * grad / n
            for _ in range(50):
                eta_new = design @ (beta + step)
                ll_new = float(t @ eta_new - np.logaddexp(0.0, eta_new).sum())
                if ll_new >= ll - 1e-12 * abs(ll):
                    break
                step *= 0.5
            beta = beta + step
            eta = eta_new
            delta = ll_new - ll
            ll = ll_new
            if abs(delta) <= self.tol * (abs(ll) + self.tol):
                converged = True
                break
        self.n_iter_ = it
        self.converged_ = converged
        if not converged:
            warnings.warn(f"IRLS did not converge in {self.max_iter} iterations; "
                          "keeping the last iterate", ConvergenceWarning, stacklevel=2)
        # a slope of 20 logits per standard deviation is a step function in practice
        self.separated_ = bool(np.any(np.abs(beta[1:]) > 20.0))
        coef = np.zeros(d)
        coef[active] = beta[1:] / spread[active]
        self.coef_ = coef
        self.intercept_ = float(beta[0] - coef @ center)
        self.n_features_in_ = d
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise SchemaError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return X @ self.coef_ + self.intercept_

    def predict_raw(self, X):
        return expit(self.decision_function(X))

    def predict_proba(self, X):
        pi = clamp(self.predict_raw(X), self.clip)
        return np.column_stack([1.0 - pi, pi])

    def predict(self, X):
        return (self.predict_raw(X) >= 0.5).astype(int)


class KernelPropensity(ClassifierMixin, BaseEstimator):
    """Nadaraya-Watson ratio of two kernel density estimates.

    ``pi(z) = sum T_i K(z - x_i) / sum K(z - x_i)`` with a compact-support
    product kernel of order ``order``. Queries where the denominator is not
    positive (outside every kernel's support, or cancelled by a higher-order
    kernel's negative lobes) get the training base rate and are counted in
    ``n_out_of_support_``.
    """

    def __init__(self, order=None, smoothness=2, exponent=None, scale=1.0, clip=DEFAULT_CLIP,
                 admissible=True):
        self.order = order
        self.smoothness = smoothness
        self.exponent = exponent
        self.scale = scale
        self.clip = clip
        self.admissible = admissible

    @classmethod
    def from_config(cls, cfg: KernelConfig, clip=DEFAULT_CLIP) -> "KernelPropensity":
        return cls(cfg.order, cfg.smoothness, cfg.exponent, cfg.scale, clip, cfg.admissible)

    def fit(self, X, y):
        _check_clip(self.clip)
        X, y = check_X_y(X, y, dtype=float)
        cfg = KernelConfig(self.order, self.smoothness, self.exponent, self.scale,
                           admissible=self.admissible)
        self.order_, self.exponent_ = cfg.resolve(X.shape[1])
        self.coefs_ = kernel_coefficients(self.order_)
        self.sigma_ = _bandwidth(X, self.scale, self.exponent_)
        self.X_ = X
        self.t_ = (y == 1).astype(float)
        self.base_rate_ = float(self.t_.mean())
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        self.n_out_of_support_ = 0
        self.separated_ = False
        return self

    def predict_raw(self, X):
        check_is_fitted(self, "X_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise SchemaError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        den, num = _kernel_sums(X, self.X_, self.sigma_, self.coefs_, self.t_[:, None])
        ok = den > 0
        self.n_out_of_support_ = int((~ok).sum())
        ratio = num[:, 0] / np.where(ok, den, 1.0)
        if self.order_ == 2:
            # nonnegative kernel: only rounding can leave [0, 1]
            ratio = np.clip(ratio, 0.0, 1.0)
        return np.where(ok, ratio, self.base_rate_)

    def predict_proba(self, X):
        pi = clamp(self.predict_raw(X), self.clip)
        return np.column_stack([1.0 - pi, pi])

    def predict(self, X):
        return (self.predict_raw(X) >= 0.5).astype(int)


class PrecomputedPropensity(BaseEstimator):
    """Class probabilities supplied from outside, looked up by example index."""

    def __init__(self, values=None, clip=DEFAULT_CLIP):
        self.values = values
        self.clip = clip

    def fit(self, X=None, y=None):
        _check_clip(self.clip)
        values = np.asarray(self.values, dtype=float).ravel()
        if not np.all(np.isfinite(values)):
            raise SchemaError("precomputed propensities must be finite")
        self.values_ = values
        self.separated_ = False
        return self

    def predict_raw_index(self, index):
        check_is_fitted(self, "values_")
        index = np.asarray(index)
        if index.size and (index.min() < 0 or index.max() >= self.values_.shape[0]):
            raise SchemaError(f"example index outside the {self.values_.shape[0]} precomputed values")
        return self.values_[index]

    def predict_index(self, index):
        return clamp(self.predict_raw_index(index), self.clip)


class NadarayaWatsonRegressor(RegressorMixin, BaseEstimator):
    """Kernel regression with the same compact-support kernels as
    :class:`KernelPropensity`.

    The bandwidth exponent defaults to ``-1/(d+4)``. Unlike the propensity
    smoother it is not held to the undersmoothing interval. Queries with no
    positive kernel mass get the training mean.
    """

    def __init__(self, order=2, exponent=None, scale=1.0):
        self.order = order
        self.exponent = exponent
        self.scale = scale

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        self.coefs_ = kernel_coefficients(self.order)
        self.exponent_ = self.exponent if self.exponent is not None else -1.0 / (X.shape[1] + 4)
        self.sigma_ = _bandwidth(X, self.scale, self.exponent_)
        self.X_ = X
        self.y_ = y
        self.mean_ = float(y.mean())
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "X_")
        X = check_array(X, dtype=float)
        den, num = _kernel_sums(X, self.X_, self.sigma_, self.coefs_, self.y_[:, None])
        ok = den > 0
        return np.where(ok, num[:, 0] / np.where(ok, den, 1.0), self.mean_)


# --------------------------------------------------------------------------
# cross-fitting


def _clip_of(estimator, default=DEFAULT_CLIP):
    return getattr(estimator, "clip", default) or default


@dataclass
class CrossFitResult:
    pi: np.ndarray
    raw: np.ndarray
    clip: float
    n_out_of_support: int = 0
    separated: bool = False
    models: list = field(default_factory=list)
    train_index: list = field(default_factory=list)

    @property
    def clipped(self) -> np.ndarray:
        return (self.raw < self.clip) | (self.raw > 1.0 - self.clip)


def _raw_proba(model, X):
    if hasattr(model, "predict_raw"):
        return np.asarray(model.predict_raw(X), dtype=float)
    return np.asarray(model.predict_proba(X), dtype=float)[:, list(model.classes_).index(1)]


def cross_fit(pooled: PooledDataset, fitter, clip: float | None = None) -> CrossFitResult:
    """Out-of-fold class probabilities for every pooled example.

    For each fold the classifier is refit on the union of the other folds
    and scores only that fold. With ``n_folds == 1`` it is fit and scored on
    everything (in-sample; a warning was already issued at pooling time).
    """
    clip = clip if clip is not None else _clip_of(fitter)
    _check_clip(clip)
    if isinstance(fitter, PrecomputedPropensity):
        model = clone(fitter).fit()
        raw = model.predict_raw_index(np.arange(pooled.n))
        return CrossFitResult(clamp(raw, clip), raw, clip, models=[model])
    X, t = pooled.features, pooled.domain
    raw = np.empty(pooled.n)
    models, trained_on = [], []
    oos = 0
    separated = False
    for k in range(pooled.n_folds):
        eval_idx = np.flatnonzero(pooled.fold_id == k)
        train_idx = np.flatnonzero(pooled.fold_id != k) if pooled.n_folds > 1 else eval_idx
        if pooled.n_folds > 1 and np.intersect1d(train_idx, eval_idx).size:
            raise InvariantError("cross-fitting scored an example with a model trained on it")
        model = clone(fitter).fit(X[train_idx], t[train_idx])
        raw[eval_idx] = _raw_proba(model, X[eval_idx])
        oos += int(getattr(model, "n_out_of_support_", 0))
        separated |= bool(getattr(model, "separated_", False))
        models.append(model)
        trained_on.append(train_idx)
    return CrossFitResult(clamp(raw, clip), raw, clip, oos, separated, models, trained_on)


# --------------------------------------------------------------------------
# diagnostics


def _ess(w):
    s = w.sum()
    s2 = (w * w).sum()
    return float(s * s / s2) if s2 > 0 else 0.0


def diagnostics(pi_hat, pooled: PooledDataset, scheme: WeightScheme | str = "harmonic",
                clip: float = DEFAULT_CLIP, clipped=None, n_out_of_support: int = 0,
                separated: bool = False) -> dict:
    """Propensity checks: base-rate calibration, clipping, overlap, effective sizes.

    ``clipped`` is a boolean mask of examples whose raw probability left
    ``[clip, 1-clip]``; without it, examples sitting on a bound count.
    """
    pi_hat = np.asarray(pi_hat, dtype=float)
    if pi_hat.shape[0] != pooled.n:
        raise SchemaError(f"{pi_hat.shape[0]} propensities for {pooled.n} examples")
    scheme = WeightScheme.coerce(scheme)
    alpha = alpha_hat(pooled)
    if clipped is None:
        clipped = (pi_hat <= clip * (1 + 1e-12)) | (pi_hat >= 1.0 - clip * (1 + 1e-12))
    in_p = pooled.domain == TRAIN_P
    in_q = pooled.domain == TARGET_Q
    edges = np.linspace(0.0, 1.0, 11)
    w_p = np.asarray(weight_p(pi_hat[in_p], alpha, scheme))
    w_q = np.asarray(weight_q(pi_hat[in_q], alpha, scheme))
    mean_pi = float(pi_hat.mean())
    return {
        "mean_pi": mean_pi,
        "alpha_hat": alpha,
        "mean_gap": abs(mean_pi - alpha),
        "clipped_fraction": float(np.mean(clipped)),
        "overlap_bins": edges.tolist(),
        "overlap_train": np.histogram(pi_hat[in_p], bins=edges)[0].tolist(),
        "overlap_target": np.histogram(pi_hat[in_q], bins=edges)[0].tolist(),
        "ess_p": _ess(w_p),
        "ess_q": _ess(w_q),
        "n_p": pooled.n_p,
        "n_q": pooled.n_q,
        "n_out_of_support": int(n_out_of_support),
        "separated": bool(separated),
    }
