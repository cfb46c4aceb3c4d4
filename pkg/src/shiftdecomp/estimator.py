"""scikit-learn style front end tying classifier, weights, decomposition and
inference together."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, clone
from sklearn.utils.validation import check_array, check_consistent_length, check_is_fitted

from .dataset import PooledDataset, alpha_hat
from .decomposition import DecompositionReport, anchor_vector, decompose
from .exceptions import SchemaError, UnsupportedMethodError
from .inference import (
    HALF_SAMPLE,
    IF_PLUGIN,
    METHODS,
    NONPARAMETRIC,
    half_sample_bootstrap,
    if_se,
    np_bootstrap,
)
from .propensity import (
    KernelPropensity,
    LogisticPropensity,
    PrecomputedPropensity,
    clamp,
    cross_fit,
    diagnostics,
)
from .weights import WeightScheme, weight_p, weight_q

PRECOMPUTED_KEY = "pi"
_FIXED_PI_KEY = "_pi_fixed"


def _se_methods(se) -> tuple[str, ...]:
    if se in (None, "none", ()):
        return ()
    if se == "all":
        return METHODS
    methods = (se,) if isinstance(se, str) else tuple(se)
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown standard-error method {m!r}; choose from {METHODS} or 'all'")
    return methods


class ShiftDecomposition(BaseEstimator):
    """Decompose the change in mean loss from a train to a target sample.

    Parameters
    ----------
    classifier : {'logistic', 'kernel', 'precomputed'} or estimator, default='logistic'
        Domain classifier. Any scikit-learn classifier with ``predict_proba``
        is accepted and cloned per fold. ``'precomputed'`` reads the
        ``propensity`` argument of :meth:`fit`.
    scheme : {'harmonic', 'min', 'truncated'}, default='harmonic'
    truncation_eps : float, default=0.1
    n_folds : int, default=3
    clip : float, default=1e-3
        Class probabilities are clamped to ``[clip, 1 - clip]``.
    kernel_order, kernel_exponent, kernel_scale
        Kernel smoother settings; ``None`` selects the undersmoothing default.
    se : {'all', 'if', 'half', 'np', 'none'} or sequence, default='all'
    n_replicates : int, default=500
    level : float, default=0.95
    stratified_bootstrap : bool, default=False
    reuse_nuisance : bool, default=False
        Keep the full-sample class probabilities inside bootstrap replicates
        instead of refitting. Faster, but intervals may undercover.
    mu_regressor : regressor, optional
        Conditional-loss regression for influence-function SEs; defaults to
        :class:`~shiftdecomp.propensity.NadarayaWatsonRegressor`.
    random_state : int, default=0
    n_jobs : int, default=1
        Threads used for bootstrap replicates. Results do not depend on it.

    Attributes
    ----------
    report_ : DecompositionReport
    pooled_ : PooledDataset
    pi_hat_ : ndarray of shape (n_samples,)
        Out-of-fold clamped class probabilities.
    weights_ : ndarray of shape (n_samples,)
        Train weights on train rows, target weights on target rows.
    """

    def __init__(self, classifier="logistic", scheme="harmonic", truncation_eps=0.1, n_folds=3,
                 clip=1e-3, kernel_order=None, kernel_exponent=None, kernel_scale=1.0, se="all",
                 n_replicates=500, level=0.95, stratified_bootstrap=False, reuse_nuisance=False,
                 mu_regressor=None, random_state=0, n_jobs=1):
        self.classifier = classifier
        self.scheme = scheme
        self.truncation_eps = truncation_eps
        self.n_folds = n_folds
        self.clip = clip
        self.kernel_order = kernel_order
        self.kernel_exponent = kernel_exponent
        self.kernel_scale = kernel_scale
        self.se = se
        self.n_replicates = n_replicates
        self.level = level
        self.stratified_bootstrap = stratified_bootstrap
        self.reuse_nuisance = reuse_nuisance
        self.mu_regressor = mu_regressor
        self.random_state = random_state
        self.n_jobs = n_jobs

    # -- helpers ---------------------------------------------------------

    def _scheme(self) -> WeightScheme:
        return WeightScheme.coerce(self.scheme, self.truncation_eps)

    def _fitter(self):
        c = self.classifier
        if c == "logistic":
            return LogisticPropensity(clip=self.clip)
        if c == "kernel":
            return KernelPropensity(self.kernel_order, 2, self.kernel_exponent, self.kernel_scale, self.clip)
        if c == "precomputed":
            return None
        if isinstance(c, str):
            raise ValueError(f"unknown classifier {c!r}")
        return clone(c)

    def _propensities(self, pooled: PooledDataset):
        if self.classifier == "precomputed":
            if PRECOMPUTED_KEY not in pooled.extra:
                raise SchemaError("classifier='precomputed' needs per-example propensities")
            return cross_fit(pooled, PrecomputedPropensity(pooled.extra[PRECOMPUTED_KEY], self.clip))
        return cross_fit(pooled, self._fitter(), clip=self.clip)

    def _pipeline(self, scheme):
        def run(sub: PooledDataset) -> np.ndarray:
            if self.reuse_nuisance:
                pi = clamp(sub.extra[_FIXED_PI_KEY], self.clip)
            else:
                pi = self._propensities(sub).pi
            return anchor_vector(sub, pi, alpha_hat(sub), scheme)
        return run

    def _config(self, pooled) -> dict:
        params = {}
        for k, v in self.get_params(deep=False).items():
            params[k] = v if isinstance(v, (str, int, float, bool, type(None), list, tuple)) else repr(v)
        if isinstance(params.get("se"), tuple):
            params["se"] = list(params["se"])
        params["scheme"] = self._scheme().to_dict()
        params["n_p"] = pooled.n_p
        params["n_q"] = pooled.n_q
        params["features"] = list(pooled.feature_names)
        return params

    # -- API -------------------------------------------------------------

    def fit(self, X, loss, domain, propensity=None):
        """Fit on pooled arrays.

        Parameters
        ----------
        X : array-like of shape (n_samples, n_features)
            Decomposition features.
        loss : array-like of shape (n_samples,)
        domain : array-like of shape (n_samples,)
            0 for train examples, 1 for target examples.
        propensity : array-like of shape (n_samples,), optional
            Required when ``classifier='precomputed'``.
        """
        X = check_array(X, dtype=float, ensure_2d=False)
        loss = check_array(loss, dtype=float, ensure_2d=False)
        domain = np.asarray(domain)
        check_consistent_length(X, loss, domain)
        extra = {}
        if propensity is not None:
            extra[PRECOMPUTED_KEY] = check_array(propensity, dtype=float, ensure_2d=False)
            check_consistent_length(X, extra[PRECOMPUTED_KEY])
        pooled = PooledDataset.from_arrays(X, loss, domain, self.n_folds, self.random_state, extra=extra)
        return self.fit_pooled(pooled)

    def fit_pooled(self, pooled: PooledDataset):
        """Fit on an already pooled dataset, keeping its fold assignment."""
        scheme = self._scheme()
        methods = _se_methods(self.se)
        notes = []
        if IF_PLUGIN in methods and scheme.kind != "harmonic":
            if self.se == "all":
                methods = tuple(m for m in methods if m != IF_PLUGIN)
                notes.append(f"influence-function SEs skipped: not available for the {scheme.kind!r} scheme")
            else:
                raise UnsupportedMethodError(
                    f"influence-function SEs are only available for the harmonic scheme, not {scheme.kind!r}")
        cf = self._propensities(pooled)
        alpha = alpha_hat(pooled)
        diag = diagnostics(cf.pi, pooled, scheme, cf.clip, cf.clipped, cf.n_out_of_support, cf.separated)
        report = decompose(pooled, cf.pi, alpha, scheme, diag, self._config(pooled))
        report.notes.extend(notes)
        point = np.array([report.anchors[k] for k in ("ep_rp", "es_rp", "es_rq", "eq_rq")]
                         + [report.terms[k] for k in ("x_shift_p_to_s", "cond_shift", "x_shift_s_to_q")])
        if IF_PLUGIN in methods:
            report.se[IF_PLUGIN] = if_se(pooled, cf.pi, alpha, scheme=scheme, level=self.level,
                                         point=point, regressor=self.mu_regressor)
        boot_methods = [m for m in methods if m != IF_PLUGIN]
        if boot_methods:
            boot_pool = pooled
            if self.reuse_nuisance:
                boot_pool = PooledDataset(pooled.features, pooled.loss, pooled.domain, pooled.fold_id,
                                          pooled.n_folds, pooled.feature_names,
                                          {**pooled.extra, _FIXED_PI_KEY: cf.pi})
                report.notes.append("bootstrap reused the full-sample domain classifier; "
                                    "intervals ignore its estimation noise and may undercover")
            pipeline = self._pipeline(scheme)
            if HALF_SAMPLE in boot_methods:
                report.se[HALF_SAMPLE] = half_sample_bootstrap(
                    boot_pool, pipeline, self.n_replicates, self.random_state, self.level, point, self.n_jobs)
            if NONPARAMETRIC in boot_methods:
                report.se[NONPARAMETRIC] = np_bootstrap(
                    boot_pool, pipeline, self.n_replicates, self.random_state, self.stratified_bootstrap,
                    self.level, point, self.n_jobs)
        in_p = pooled.domain == 0
        w = np.empty(pooled.n)
        w[in_p] = weight_p(cf.pi[in_p], alpha, scheme)
        w[~in_p] = weight_q(cf.pi[~in_p], alpha, scheme)
        self.pooled_ = pooled
        self.cross_fit_ = cf
        self.pi_hat_ = cf.pi
        self.alpha_ = alpha
        self.weights_ = w
        self.report_ = report
        return self

    @property
    def terms_(self) -> dict:
        check_is_fitted(self, "report_")
        return self.report_.terms

    @property
    def anchors_(self) -> dict:
        check_is_fitted(self, "report_")
        return self.report_.anchors


def decompose_samples(estimator: ShiftDecomposition, pooled: PooledDataset) -> DecompositionReport:
    return clone(estimator).fit_pooled(pooled).report_
