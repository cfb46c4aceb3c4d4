"""Importance weights onto the shared covariate distribution.

Every scheme is a function of the likelihood ratio ``r = q/p``, which the
domain classifier recovers as ``r = pi/(1-pi) * (1-alpha)/alpha``. Weights
are returned unnormalized; the self-normalized estimators downstream make
scheme-level constants irrelevant.

All functions accept scalars or arrays and broadcast.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SCHEMES = ("harmonic", "min", "truncated")


@dataclass(frozen=True)
class WeightScheme:
    """Which shared distribution is in force.

    ``harmonic`` (default) has density proportional to ``pq/(p+q)``; ``min``
    to ``min(p, q)``; ``truncated`` to ``p+q`` restricted to points where
    ``min(r, 1/r) >= eps``. The truncated scheme is experimental: its
    results depend strongly on an arbitrary threshold.
    """

    kind: str = "harmonic"
    eps: float = 0.1

    def __post_init__(self):
        if self.kind not in SCHEMES:
            raise ValueError(f"unknown weight scheme {self.kind!r}; choose from {SCHEMES}")
        if self.kind == "truncated" and not (0.0 < self.eps <= 1.0):
            raise ValueError(f"truncation eps must lie in (0, 1], got {self.eps}")

    @classmethod
    def coerce(cls, scheme, eps: float = 0.1) -> "WeightScheme":
        if isinstance(scheme, WeightScheme):
            return scheme
        return cls(str(scheme), eps)

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "truncated":
            out["eps"] = self.eps
        return out


def _check(pi, alpha):
    pi = np.asarray(pi, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if np.any((pi <= 0) | (pi >= 1)) or np.any(np.isnan(pi)):
        raise ValueError("pi must lie strictly inside (0, 1); clamp classifier outputs first")
    if np.any((alpha <= 0) | (alpha >= 1)) or np.any(np.isnan(alpha)):
        raise ValueError("alpha must lie strictly inside (0, 1)")
    return pi, alpha


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def _mix(pi, alpha):
    return (1.0 - alpha) * pi + alpha * (1.0 - pi)


def likelihood_ratio(pi, alpha):
    """q/p implied by a pooled class probability and the pooled base rate."""
    pi, alpha = _check(pi, alpha)
    return _out(pi / (1.0 - pi) * (1.0 - alpha) / alpha)


def _kept(r, eps):
    return np.minimum(r, 1.0 / r) >= eps


def weight_p(pi, alpha, scheme: WeightScheme | str = "harmonic"):
    """Weight turning a train example into a shared-distribution example."""
    scheme = WeightScheme.coerce(scheme)
    pi, alpha = _check(pi, alpha)
    if scheme.kind == "harmonic":
        return _out(pi / _mix(pi, alpha))
    r = pi / (1.0 - pi) * (1.0 - alpha) / alpha
    if scheme.kind == "min":
        return _out(np.minimum(1.0, r))
    return _out(np.where(_kept(r, scheme.eps), 1.0 + r, 0.0))


def weight_q(pi, alpha, scheme: WeightScheme | str = "harmonic"):
    """Weight turning a target example into a shared-distribution example."""
    scheme = WeightScheme.coerce(scheme)
    pi, alpha = _check(pi, alpha)
    if scheme.kind == "harmonic":
        return _out((1.0 - pi) / _mix(pi, alpha))
    r = pi / (1.0 - pi) * (1.0 - alpha) / alpha
    if scheme.kind == "min":
        return _out(np.minimum(1.0, 1.0 / r))
    return _out(np.where(_kept(r, scheme.eps), 1.0 + 1.0 / r, 0.0))


def lambda_fn(pi, alpha):
    """Density of the harmonic shared distribution relative to the pooled one,
    up to a constant: ``pi(1-pi) / ((1-alpha)pi + alpha(1-pi))``."""
    pi, alpha = _check(pi, alpha)
    return _out(pi * (1.0 - pi) / _mix(pi, alpha))


def lambda_derivs(pi, alpha):
    """Return ``(d lambda/d alpha, d/d pi [lambda/pi])``.

    ``lambda/pi`` is exactly the harmonic target weight, whose pi-derivative
    collapses to ``-(1-alpha)/mix**2``.
    """
    pi, alpha = _check(pi, alpha)
    mix2 = _mix(pi, alpha) ** 2
    d_alpha = -pi * (1.0 - pi) * (1.0 - 2.0 * pi) / mix2
    d_pi_ratio = -(1.0 - alpha) / mix2
    return _out(d_alpha), _out(d_pi_ratio)
