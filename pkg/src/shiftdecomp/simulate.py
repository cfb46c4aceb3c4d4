"""Synthetic shift scenarios with exact ground-truth decompositions.

Discrete tables are evaluated by exact rational sums; continuous scenarios by
adaptive quadrature over their closed-form densities. Per-example losses are
the conditional risk plus optional uniform noise on ``[-eta, eta]``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from scipy import integrate
from scipy.special import expit
from scipy.stats import norm

from .dataset import TARGET_Q, TRAIN_P, DomainSample, PooledDataset, pool
from .decomposition import ANCHORS, TERMS, anchors_to_terms
from .exceptions import EstimationError, SchemaError
from .weights import WeightScheme

QUAD_TOL = 1e-9


def _shared_density(p, q, scheme: WeightScheme):
    if scheme.kind == "harmonic":
        return p * q / (p + q) if p + q > 0 else 0 * p
    if scheme.kind == "min":
        return min(p, q)
    if p <= 0 or q <= 0:
        return 0 * p
    return p + q if min(p / q, q / p) >= scheme.eps else 0 * p


def _truth(anchors: dict) -> dict:
    anchors = {k: float(anchors[k]) for k in ANCHORS}
    return {"anchors": anchors, "terms": anchors_to_terms(anchors)}


class Scenario:
    """Base class: subclasses define the densities, risks and a sampler."""

    name = "scenario"
    n_p: int
    n_q: int
    seed: int
    noise: float

    feature_names: tuple[str, ...] = ("z",)

    def _draw(self, rng, domain: int, n: int) -> np.ndarray:
        raise NotImplementedError

    def risk(self, z: np.ndarray, domain: int) -> np.ndarray:
        raise NotImplementedError

    def density(self, z, domain: int) -> float:
        raise NotImplementedError

    def _integrate(self, f: Callable) -> float:
        raise NotImplementedError

    def true_pi(self, z, alpha: float) -> float:
        """Exact ``P(T=1 | z)`` in a pool with target fraction ``alpha``."""
        p = self.density(z, TRAIN_P)
        q = self.density(z, TARGET_Q)
        if p + q <= 0:
            raise SchemaError(f"z={z!r} lies outside both supports")
        return alpha * q / (alpha * q + (1.0 - alpha) * p)

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, seed=seed)

    def generate(self) -> tuple[DomainSample, DomainSample]:
        """Deterministic train and target samples for ``self.seed``.

        Each sample carries the true class probability (for the realized
        pool fraction) as the extra column ``pi_true``.
        """
        rng = np.random.default_rng(self.seed)
        alpha = self.n_q / (self.n_p + self.n_q)
        out = []
        for domain, n in ((TRAIN_P, self.n_p), (TARGET_Q, self.n_q)):
            z = self._draw(rng, domain, n)
            loss = self.risk(z, domain)
            if self.noise > 0:
                loss = loss + rng.uniform(-self.noise, self.noise, size=n)
            pi = np.array([self.true_pi(row if row.size > 1 else row[0], alpha) for row in z])
            out.append(DomainSample(z, loss, domain, self.feature_names, {"pi_true": pi}))
        return out[0], out[1]

    def pooled(self, k_folds: int = 3, seed: int | None = None) -> PooledDataset:
        train, target = self.generate()
        return pool(train, target, k_folds, self.seed if seed is None else seed)

    def exact_decomposition(self, scheme: WeightScheme | str = "harmonic") -> dict:
        """Ground-truth anchors and terms by quadrature."""
        scheme = WeightScheme.coerce(scheme)

        def s(z):
            return _shared_density(self.density(z, TRAIN_P), self.density(z, TARGET_Q), scheme)

        mass = self._integrate(s)
        if not mass > 0:
            raise EstimationError(f"shared distribution under {scheme.kind!r} has no mass")
        ep = self._integrate(lambda z: self.density(z, TRAIN_P) * float(self.risk(_arr(z), TRAIN_P)[0]))
        eq = self._integrate(lambda z: self.density(z, TARGET_Q) * float(self.risk(_arr(z), TARGET_Q)[0]))
        es_p = self._integrate(lambda z: s(z) * float(self.risk(_arr(z), TRAIN_P)[0])) / mass
        es_q = self._integrate(lambda z: s(z) * float(self.risk(_arr(z), TARGET_Q)[0])) / mass
        return _truth({"ep_rp": ep, "es_rp": es_p, "es_rq": es_q, "eq_rq": eq})

    def describe(self) -> dict:
        out = {"name": self.name}
        for k, v in self.__dict__.items():
            if isinstance(v, (int, float, str, bool, tuple, list)) and not callable(v):
                out[k] = list(v) if isinstance(v, tuple) else v
        return out


def _arr(z):
    return np.atleast_2d(np.asarray(z, dtype=float))


def _quad(f, a, b, points=None) -> float:
    val, _ = integrate.quad(f, a, b, points=points, epsabs=QUAD_TOL * 1e-2, epsrel=QUAD_TOL, limit=500)
    return float(val)


# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DiscreteTable(Scenario):
    """Finite support ``{0, ..., m-1}`` with given masses and conditional risks.

    Risks at points outside a distribution's support are ignored (``None``).
    ``noise`` is the half-width of the uniform loss noise.
    """

    p_masses: tuple = (0.5, 0.5, 0.0)
    q_masses: tuple = (0.0, 0.5, 0.5)
    r_p: tuple = (0.2, 0.4, None)
    r_q: tuple = (None, 0.7, 0.6)
    noise: float = 0.0
    n_p: int = 1000
    n_q: int = 1000
    seed: int = 0
    name = "discrete"

    def __post_init__(self):
        m = len(self.p_masses)
        if not (len(self.q_masses) == len(self.r_p) == len(self.r_q) == m):
            raise SchemaError("discrete table columns must have equal length")
        for masses in (self.p_masses, self.q_masses):
            if any(x < 0 for x in masses) or abs(sum(masses) - 1.0) > 1e-12:
                raise SchemaError("discrete masses must be nonnegative and sum to 1")
        if not any(p > 0 and q > 0 for p, q in zip(self.p_masses, self.q_masses)):
            raise SchemaError("train and target supports do not intersect; with no shared "
                              "support the decomposition is undefined")
        for masses, risks in ((self.p_masses, self.r_p), (self.q_masses, self.r_q)):
            if any(w > 0 and r is None for w, r in zip(masses, risks)):
                raise SchemaError("every supported point needs a conditional risk")

    def density(self, z, domain):
        i = int(round(float(np.ravel(z)[0])))
        masses = self.p_masses if domain == TRAIN_P else self.q_masses
        return masses[i] if 0 <= i < len(masses) else 0.0

    def risk(self, z, domain):
        risks = self.r_p if domain == TRAIN_P else self.r_q
        idx = np.rint(np.asarray(z, dtype=float)).astype(int).ravel()
        return np.array([np.nan if risks[i] is None else risks[i] for i in idx], dtype=float)

    def _draw(self, rng, domain, n):
        masses = np.array(self.p_masses if domain == TRAIN_P else self.q_masses, dtype=float)
        return rng.choice(len(masses), size=n, p=masses / masses.sum()).astype(float)[:, None]

    def shared_masses(self, scheme: WeightScheme | str = "harmonic") -> list[Fraction]:
        scheme = WeightScheme.coerce(scheme)
        eps = Fraction(str(scheme.eps))
        exact_scheme = replace(scheme, eps=eps)
        raw = [_shared_density(Fraction(str(p)), Fraction(str(q)), exact_scheme)
               for p, q in zip(self.p_masses, self.q_masses)]
        total = sum(raw)
        if total == 0:
            raise EstimationError(f"shared distribution under {scheme.kind!r} has no mass")
        return [Fraction(x) / total for x in raw]

    def exact_decomposition(self, scheme: WeightScheme | str = "harmonic", exact: bool = False) -> dict:
        """Anchors and terms by exact rational finite sums.

        ``exact=True`` returns :class:`fractions.Fraction` values.
        """
        s = self.shared_masses(scheme)
        fr = lambda x: Fraction(str(x))  # noqa: E731
        ep = sum(fr(p) * fr(r) for p, r in zip(self.p_masses, self.r_p) if p > 0)
        eq = sum(fr(q) * fr(r) for q, r in zip(self.q_masses, self.r_q) if q > 0)
        es_p = sum(w * fr(r) for w, r in zip(s, self.r_p) if w > 0)
        es_q = sum(w * fr(r) for w, r in zip(s, self.r_q) if w > 0)
        anchors = {"ep_rp": ep, "es_rp": es_p, "es_rq": es_q, "eq_rq": eq}
        if exact:
            return {"anchors": anchors, "terms": anchors_to_terms(anchors)}
        return _truth(anchors)


def _smooth_rp(z):
    return 0.25 + 0.1 * expit(2.0 * z)


def _smooth_rq(z):
    return _smooth_rp(z) + 0.05 + 0.05 * expit(-2.0 * z)


@dataclass(frozen=True)
class GaussianShift(Scenario):
    """Train covariates ``N(a, 1)``, target ``N(-a, 1)``.

    The target/train density ratio is ``exp(-2 a z)`` and the harmonic shared
    density is proportional to ``1 / cosh(a z)``.
    """

    a: float = 0.5
    r_p: Callable = _smooth_rp
    r_q: Callable = _smooth_rq
    noise: float = 0.2
    n_p: int = 2000
    n_q: int = 2000
    seed: int = 0
    name: str = "gaussian"

    def density(self, z, domain):
        z = float(np.ravel(z)[0])
        mean = self.a if domain == TRAIN_P else -self.a
        return float(norm.pdf(z, mean, 1.0))

    def true_pi(self, z, alpha):
        z = float(np.ravel(z)[0])
        return float(expit(math.log(alpha / (1.0 - alpha)) - 2.0 * self.a * z))

    def risk(self, z, domain):
        z = np.asarray(z, dtype=float)[..., 0] if np.ndim(z) > 1 else np.asarray(z, dtype=float)
        f = self.r_p if domain == TRAIN_P else self.r_q
        return np.asarray(f(z), dtype=float)

    def _draw(self, rng, domain, n):
        mean = self.a if domain == TRAIN_P else -self.a
        return rng.normal(mean, 1.0, size=(n, 1))

    def _integrate(self, f):
        lim = abs(self.a) + 12.0
        return _quad(lambda z: f(z), -lim, lim, points=[-abs(self.a), 0.0, abs(self.a)])

    def shared_density(self, z, scheme: WeightScheme | str = "harmonic") -> float:
        """Normalized shared density at ``z``."""
        scheme = WeightScheme.coerce(scheme)
        mass = self._integrate(lambda u: _shared_density(self.density(u, 0), self.density(u, 1), scheme))
        return _shared_density(self.density(z, 0), self.density(z, 1), scheme) / mass

    def describe(self):
        return {"name": self.name, "a": self.a, "noise": self.noise, "n_p": self.n_p,
                "n_q": self.n_q, "seed": self.seed}


@dataclass(frozen=True)
class MissingCovariate(Scenario):
    """Conditional shift induced by an unobserved binary covariate.

    The observed covariate is ``N(0, 1)`` in train and ``N(observed_shift, 1)``
    in target; the hidden indicator is Bernoulli with a domain-dependent rate
    and independent of the observed one. Risk is
    ``base + coef_observed * sigmoid(z_obs) + coef_hidden * z_hidden`` in both
    domains. With ``use_hidden=False`` samples expose only the observed
    covariate, so the hidden shift surfaces as conditional shift.
    """

    observed_shift: float = 0.25
    hidden_p: float = 0.3
    hidden_q: float = 0.7
    base: float = 0.2
    coef_observed: float = 0.1
    coef_hidden: float = 0.25
    use_hidden: bool = False
    noise: float = 0.2
    n_p: int = 2000
    n_q: int = 2000
    seed: int = 0
    name = "missing-covariate"

    @property
    def feature_names(self):
        return ("z_obs", "z_hidden") if self.use_hidden else ("z_obs",)

    def _hidden_rate(self, domain):
        return self.hidden_p if domain == TRAIN_P else self.hidden_q

    def _obs_mean(self, domain):
        return 0.0 if domain == TRAIN_P else self.observed_shift

    def density(self, z, domain):
        z = np.ravel(z)
        dens = float(norm.pdf(z[0], self._obs_mean(domain), 1.0))
        if self.use_hidden:
            h = self._hidden_rate(domain)
            dens *= h if z[1] >= 0.5 else 1.0 - h
        return dens

    def risk(self, z, domain):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        hidden = z[:, 1] if self.use_hidden else self._hidden_rate(domain)
        return self.base + self.coef_observed * expit(z[:, 0]) + self.coef_hidden * hidden

    def _draw_full(self, rng, domain, n):
        z_obs = rng.normal(self._obs_mean(domain), 1.0, size=n)
        z_hid = (rng.random(n) < self._hidden_rate(domain)).astype(float)
        return z_obs, z_hid

    def generate(self):
        # both feature views draw the same underlying examples for a given seed
        rng = np.random.default_rng(self.seed)
        alpha = self.n_q / (self.n_p + self.n_q)
        out = []
        for domain, n in ((TRAIN_P, self.n_p), (TARGET_Q, self.n_q)):
            z_obs, z_hid = self._draw_full(rng, domain, n)
            full = np.column_stack([z_obs, z_hid])
            loss = self.base + self.coef_observed * expit(z_obs) + self.coef_hidden * z_hid
            if self.noise > 0:
                loss = loss + rng.uniform(-self.noise, self.noise, size=n)
            z = full if self.use_hidden else z_obs[:, None]
            pi = np.array([self.true_pi(row, alpha) for row in z])
            out.append(DomainSample(z, loss, domain, self.feature_names, {"pi_true": pi}))
        return out[0], out[1]

    def _integrate(self, f):
        lim = abs(self.observed_shift) + 12.0
        if self.use_hidden:
            return sum(_quad(lambda u: f((u, h)), -lim, lim) for h in (0.0, 1.0))
        return _quad(lambda u: f((u,)), -lim, lim)


@dataclass(frozen=True)
class SelectionBias(Scenario):
    """Age-like covariate with selection bias toward young examples.

    Target ages are uniform on ``[low, high]``. With ``extreme=True`` the
    train sample is the target restricted to ``age <= cutoff``; otherwise
    ages up to ``cutoff`` are oversampled by ``ratio`` on full support. The
    risk is flat up to the cutoff and rises toward ``base + rise`` beyond it,
    identically in both domains.
    """

    cutoff: float = 25.0
    low: float = 18.0
    high: float = 78.0
    ratio: float = 4.0
    extreme: bool = True
    base: float = 0.1
    rise: float = 0.25
    rise_scale: float = 10.0
    noise: float = 0.1
    n_p: int = 2000
    n_q: int = 2000
    seed: int = 0
    name = "selection-bias"
    feature_names = ("age",)

    @property
    def _young_fraction(self):
        return (self.cutoff - self.low) / (self.high - self.low)

    def _train_young_mass(self):
        if self.extreme:
            return 1.0
        f = self._young_fraction
        return self.ratio * f / (self.ratio * f + 1.0 - f)

    def density(self, z, domain):
        age = float(np.ravel(z)[0])
        if not self.low <= age <= self.high:
            return 0.0
        if domain == TARGET_Q:
            return 1.0 / (self.high - self.low)
        young = self._train_young_mass()
        if age <= self.cutoff:
            return young / (self.cutoff - self.low)
        return (1.0 - young) / (self.high - self.cutoff)

    def risk(self, z, domain):
        age = np.atleast_2d(np.asarray(z, dtype=float))[:, 0]
        excess = np.maximum(age - self.cutoff, 0.0)
        return self.base + self.rise * (1.0 - np.exp(-excess / self.rise_scale))

    def _draw(self, rng, domain, n):
        if domain == TARGET_Q:
            return rng.uniform(self.low, self.high, size=(n, 1))
        young = rng.random(n) < self._train_young_mass()
        ages = np.where(young, rng.uniform(self.low, self.cutoff, n), rng.uniform(self.cutoff, self.high, n))
        return ages[:, None]

    def _integrate(self, f):
        return (_quad(lambda u: f((u,)), self.low, self.cutoff)
                + _quad(lambda u: f((u,)), self.cutoff, self.high))


def _pure_x_risk(z):
    return 0.1 + 0.3 * expit(-4.0 * (np.asarray(z) + 1.0))


def _pure_yx_rp(z):
    return 0.2 + 0.1 * expit(np.asarray(z))


def _pure_yx_rq(z):
    return _pure_yx_rp(z) + 0.08


SCENARIOS: dict[str, Callable[..., Scenario]] = {
    "discrete": lambda **kw: DiscreteTable(**{"noise": 0.2, **kw}),
    "gaussian": lambda **kw: GaussianShift(**kw),
    "pure-yx": lambda **kw: GaussianShift(**{"a": 0.0, "r_p": _pure_yx_rp, "r_q": _pure_yx_rq,
                                             "name": "pure-yx", **kw}),
    "pure-x": lambda **kw: GaussianShift(**{"a": 1.0, "r_p": _pure_x_risk, "r_q": _pure_x_risk,
                                            "name": "pure-x", **kw}),
    "missing-covariate": lambda **kw: MissingCovariate(**kw),
    "missing-covariate-full": lambda **kw: MissingCovariate(**{"use_hidden": True, **kw}),
    "selection-extreme": lambda **kw: SelectionBias(**{"extreme": True, **kw}),
    "selection-oversample": lambda **kw: SelectionBias(**{"extreme": False, **kw}),
}


def make_scenario(name: str, **kwargs) -> Scenario:
    try:
        factory = SCENARIOS[name]
    except KeyError:
        raise SchemaError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None
    return factory(**kwargs)


def true_pi(spec: Scenario, z, alpha: float) -> float:
    return spec.true_pi(z, alpha)


def exact_decomposition(spec: Scenario, scheme: WeightScheme | str = "harmonic") -> dict:
    return spec.exact_decomposition(scheme)


def generate(spec: Scenario):
    return spec.generate()


# --------------------------------------------------------------------------
# coverage


@dataclass
class CoverageResult:
    level: float
    n_reps: int
    hits: dict = field(default_factory=dict)      # method -> term -> count
    n_valid: dict = field(default_factory=dict)   # method -> count

    def coverage(self, method: str, term: str) -> float:
        return self.hits[method][term] / self.n_valid[method]

    def binomial_se(self, method: str, term: str) -> float:
        c = self.coverage(method, term)
        return math.sqrt(c * (1.0 - c) / self.n_valid[method])

    def to_dict(self) -> dict:
        return {
            "level": self.level, "n_reps": self.n_reps,
            "coverage": {m: {t: self.coverage(m, t) for t in self.hits[m]} for m in self.hits},
            "binomial_se": {m: {t: self.binomial_se(m, t) for t in self.hits[m]} for m in self.hits},
        }


def coverage_study(spec: Scenario, methods: Sequence[str] = ("if", "half", "np"), n_reps: int = 500,
                   level: float = 0.95, n_replicates: int = 200, scheme: str = "harmonic",
                   quantities: Sequence[str] = TERMS, seed: int = 0, n_jobs: int = 1,
                   **estimator_kwargs) -> CoverageResult:
    """Fraction of simulated datasets whose interval covers the exact truth.

    Every replication draws a fresh dataset from ``spec`` with its own seed
    and fits one :class:`~shiftdecomp.estimator.ShiftDecomposition` computing
    all requested interval methods.
    """
    from .estimator import ShiftDecomposition

    if n_reps < 100:
        raise ValueError("coverage studies need at least 100 replications")
    truth = spec.exact_decomposition(scheme)
    target = {**truth["anchors"], **truth["terms"]}
    methods = tuple(methods)

    def one(rep):
        rep_seed = int(np.random.default_rng([seed, rep]).integers(2**31))
        pooled = spec.with_seed(rep_seed).pooled(seed=rep_seed)
        est = ShiftDecomposition(scheme=scheme, se=methods, n_replicates=n_replicates, level=level,
                                 random_state=rep_seed, **estimator_kwargs)
        report = est.fit_pooled(pooled).report_
        return {m: {q: report.se[m][q].covers(target[q]) for q in quantities} for m in methods}

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            results = list(ex.map(one, range(n_reps)))
    else:
        results = [one(r) for r in range(n_reps)]
    out = CoverageResult(level, n_reps)
    for m in methods:
        out.hits[m] = {q: sum(r[m][q] for r in results) for q in quantities}
        out.n_valid[m] = len(results)
    return out
