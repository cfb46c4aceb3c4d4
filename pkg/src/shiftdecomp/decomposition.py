"""Four-anchor decomposition of a loss change into covariate and conditional shift.

Anchors, in order: mean train loss on train covariates, train conditional
risk averaged over the shared covariates, target conditional risk averaged
over the shared covariates, mean target loss on target covariates. Each term
is the difference of consecutive anchors, so a positive term means the loss
got worse along that step.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .dataset import TARGET_Q, TRAIN_P, PooledDataset
from .exceptions import EstimationError, InvariantError
from .weights import WeightScheme, weight_p, weight_q

ANCHORS = ("ep_rp", "es_rp", "es_rq", "eq_rq")
TERMS = ("x_shift_p_to_s", "cond_shift", "x_shift_s_to_q")
QUANTITIES = ANCHORS + TERMS

TELESCOPE_TOL = 1e-12

X_SHIFT_CAVEAT = (
    "How the covariate-shift total is split between the train-to-shared and "
    "shared-to-target terms depends on the chosen shared distribution; read "
    "the two terms together before over-interpreting either one alone.")


def plain_means(pooled: PooledDataset) -> tuple[float, float]:
    """Unweighted mean loss in the train and in the target sample."""
    loss, domain = pooled.loss, pooled.domain
    return float(loss[domain == TRAIN_P].mean()), float(loss[domain == TARGET_Q].mean())


def _weighted_mean(loss, w, scheme, side):
    total = w.sum()
    if not total > 0:
        raise EstimationError(
            f"{side} importance weights sum to zero under the {scheme.kind!r} scheme: "
            "the estimated shared support is empty; try scheme='harmonic'")
    return float(w @ loss / total)


def theta_hats(pooled: PooledDataset, pi_hat, alpha_hat: float,
               scheme: WeightScheme | str = "harmonic") -> tuple[float, float]:
    """Self-normalized estimates of the train and target conditional risks
    averaged over the shared covariate distribution."""
    scheme = WeightScheme.coerce(scheme)
    pi_hat = np.asarray(pi_hat, dtype=float)
    in_p = pooled.domain == TRAIN_P
    in_q = ~in_p
    w_p = np.asarray(weight_p(pi_hat[in_p], alpha_hat, scheme), dtype=float)
    w_q = np.asarray(weight_q(pi_hat[in_q], alpha_hat, scheme), dtype=float)
    return (_weighted_mean(pooled.loss[in_p], w_p, scheme, "train"),
            _weighted_mean(pooled.loss[in_q], w_q, scheme, "target"))


def anchors_to_terms(anchors) -> dict[str, float]:
    ep, es_p, es_q, eq = (anchors[k] for k in ANCHORS)
    return {"x_shift_p_to_s": es_p - ep, "cond_shift": es_q - es_p, "x_shift_s_to_q": eq - es_q}


def anchor_vector(pooled, pi_hat, alpha_hat, scheme) -> np.ndarray:
    """``[ep_rp, es_rp, es_rq, eq_rq, term1, term2, term3]`` as one array."""
    ep, eq = plain_means(pooled)
    tp, tq = theta_hats(pooled, pi_hat, alpha_hat, scheme)
    a = np.array([ep, tp, tq, eq])
    return np.concatenate([a, np.diff(a)])


@dataclass
class DecompositionReport:
    anchors: dict
    terms: dict
    diagnostics: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    se: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    percentage_points: dict | None = None
    version: str = __version__

    @property
    def theta_p(self) -> float:
        return self.anchors["es_rp"]

    @property
    def theta_q(self) -> float:
        return self.anchors["es_rq"]

    @property
    def gap(self) -> float:
        return self.anchors["eq_rq"] - self.anchors["ep_rp"]

    def dominant_term(self) -> str:
        return max(TERMS, key=lambda k: abs(self.terms[k]))

    def interval(self, method: str, quantity: str):
        return self.se[method][quantity]

    def to_dict(self) -> dict:
        out = {
            "version": self.version,
            "config": self.config,
            "anchors": dict(self.anchors),
            "terms": dict(self.terms),
            "theta_p": self.theta_p,
            "theta_q": self.theta_q,
            "se": {m: {q: iv.to_dict() for q, iv in block.items()} for m, block in self.se.items()},
            "diagnostics": self.diagnostics,
            "notes": list(self.notes),
        }
        if self.percentage_points is not None:
            out["percentage_points"] = dict(self.percentage_points)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "DecompositionReport":
        from .inference import IntervalEstimate

        return cls(
            anchors=dict(data["anchors"]),
            terms=dict(data["terms"]),
            diagnostics=data.get("diagnostics", {}),
            config=data.get("config", {}),
            se={m: {q: IntervalEstimate.from_dict(iv) for q, iv in block.items()}
                for m, block in data.get("se", {}).items()},
            notes=list(data.get("notes", [])),
            percentage_points=data.get("percentage_points"),
            version=data.get("version", __version__),
        )

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True, allow_nan=False)

    @classmethod
    def from_json(cls, text: str) -> "DecompositionReport":
        return cls.from_dict(json.loads(text))


def _is_zero_one(loss) -> bool:
    return bool(np.isin(loss, (0.0, 1.0)).all())


def check_telescoping(anchors: dict, terms: dict) -> float:
    gap = anchors["eq_rq"] - anchors["ep_rp"]
    err = abs(sum(terms[k] for k in TERMS) - gap)
    scale = 1.0 + max(abs(v) for v in anchors.values())
    if err > TELESCOPE_TOL * scale:
        raise InvariantError(f"decomposition terms do not telescope (error {err:.3g})")
    return err


def decompose(pooled: PooledDataset, pi_hat, alpha_hat: float,
              scheme: WeightScheme | str = "harmonic", diagnostics: dict | None = None,
              config: dict | None = None) -> DecompositionReport:
    """Anchors and terms for fixed class probabilities ``pi_hat``."""
    scheme = WeightScheme.coerce(scheme)
    ep, eq = plain_means(pooled)
    tp, tq = theta_hats(pooled, pi_hat, alpha_hat, scheme)
    anchors = {"ep_rp": ep, "es_rp": tp, "es_rq": tq, "eq_rq": eq}
    terms = anchors_to_terms(anchors)
    check_telescoping(anchors, terms)
    if diagnostics is None:
        from .propensity import diagnostics as _diagnostics

        diagnostics = _diagnostics(pi_hat, pooled, scheme)
    pp = {k: 100.0 * v for k, v in terms.items()} if _is_zero_one(pooled.loss) else None
    return DecompositionReport(anchors, terms, diagnostics,
                               dict(config or {"scheme": scheme.to_dict()}),
                               notes=[X_SHIFT_CAVEAT], percentage_points=pp)
