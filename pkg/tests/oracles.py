"""Independent reference computations used by the tests.

Everything here is written from the defining formulas with exact rational
arithmetic or brute-force loops, sharing no code with the package.
"""

from fractions import Fraction as F


def harmonic_weights(pi, alpha):
    pi, alpha = F(pi), F(alpha)
    mix = (1 - alpha) * pi + alpha * (1 - pi)
    return pi / mix, (1 - pi) / mix


def lam(pi, alpha):
    pi, alpha = F(pi), F(alpha)
    return pi * (1 - pi) / ((1 - alpha) * pi + alpha * (1 - pi))


def central_difference(f, x, h=1e-6):
    return (f(x + h) - f(x - h)) / (2 * h)


def discrete_decomposition(p, q, r_p, r_q, shared="harmonic"):
    """Anchors by finite sums over a discrete support, all in Fractions."""
    p = [F(x) for x in p]
    q = [F(x) for x in q]
    if shared == "harmonic":
        s = [a * b / (a + b) if a + b else F(0) for a, b in zip(p, q)]
    else:
        s = [min(a, b) for a, b in zip(p, q)]
    mass = sum(s)
    s = [x / mass for x in s]
    rp = [F(x) if x is not None else F(0) for x in r_p]
    rq = [F(x) if x is not None else F(0) for x in r_q]
    ep = sum(a * b for a, b in zip(p, rp))
    eq = sum(a * b for a, b in zip(q, rq))
    es_p = sum(a * b for a, b in zip(s, rp))
    es_q = sum(a * b for a, b in zip(s, rq))
    return (ep, es_p, es_q, eq), (es_p - ep, es_q - es_p, eq - es_q)


def hajek(losses, weights):
    return sum(l * w for l, w in zip(losses, weights)) / sum(weights)


def nw_ratio(train_z, train_t, query, sigma, kernel):
    """Nadaraya-Watson ratio by an explicit loop."""
    num = den = 0.0
    for z, t in zip(train_z, train_t):
        k = kernel((query - z) / sigma)
        num += k * t
        den += k
    return num, den


def epanechnikov(u):
    return 0.75 * (1 - u * u) if abs(u) <= 1 else 0.0
