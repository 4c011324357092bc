"""Truncated Taylor jets for exact high-order derivatives of compositions.

A :class:`Jet` holds the Taylor coefficients c_0..c_K of a map at a point
(c_i = f^(i)(x)/i!), over MPFR reals at the caller's working precision.
Composition uses Horner-style truncated polynomial substitution, O(K^2)
coefficient products per multiply; logarithms, exponentials, inverses and
antiderivatives of series use the standard convolution recurrences.  The
order cap leaves headroom above the largest derivative order the
regularity gates request.
"""

from __future__ import annotations

from typing import Sequence, Tuple

import gmpy2
from gmpy2 import mpfr

from .mpctx import InvalidInput, working_precision

ORDER_CAP = 64


class Jet:
    """Taylor coefficients of a smooth map at a point."""

    __slots__ = ("point", "coeffs")

    def __init__(self, point, coeffs: Sequence):
        if len(coeffs) < 1:
            raise InvalidInput("a jet needs at least its value")
        if len(coeffs) - 1 > ORDER_CAP:
            raise InvalidInput(f"jet order {len(coeffs) - 1} above cap {ORDER_CAP}")
        self.point = mpfr(point)
        self.coeffs = tuple(mpfr(c) for c in coeffs)

    @property
    def order(self) -> int:
        return len(self.coeffs) - 1

    @property
    def value(self):
        return self.coeffs[0]

    def derivative(self, i: int):
        """i-th derivative at the expansion point."""
        if not 0 <= i <= self.order:
            raise InvalidInput(f"derivative order {i} outside jet order {self.order}")
        return self.coeffs[i] * _factorial(i)

    def df(self):
        """First derivative; raises unless the jet carries it."""
        return self.derivative(1)

    def __repr__(self):
        head = ", ".join(format(c, ".6g") for c in self.coeffs[:4])
        return f"Jet(@{format(self.point, '.6g')}; [{head}{'...' if self.order > 3 else ''}])"


def _factorial(n: int):
    return mpfr(gmpy2.fac(n))


def identity_jet(x, order: int) -> Jet:
    coeffs = [mpfr(x)] + [mpfr(0)] * order
    if order >= 1:
        coeffs[1] = mpfr(1)
    return Jet(x, coeffs)


def series_mul_trunc(a: Sequence, b: Sequence, K: int) -> Tuple:
    """Product of two coefficient sequences, truncated at degree K."""
    out = [mpfr(0)] * (K + 1)
    for i, ai in enumerate(a):
        if i > K:
            break
        for j, bj in enumerate(b):
            if i + j > K:
                break
            out[i + j] += ai * bj
    return tuple(out)


def series_compose(outer: Sequence, inner_dev: Sequence, K: int) -> Tuple:
    """outer(u) substituted with u = inner_dev(t); inner_dev[0] must be 0."""
    if inner_dev and inner_dev[0] != 0:
        raise InvalidInput("inner deviation series must have zero constant term")
    acc: Tuple = (outer[min(K, len(outer) - 1)],)
    for j in range(min(K, len(outer) - 1) - 1, -1, -1):
        acc = series_mul_trunc(acc, inner_dev, K)
        acc = (acc[0] + outer[j],) + acc[1:]
    return tuple(acc) + (mpfr(0),) * (K + 1 - len(acc))


def series_log(d: Sequence) -> Tuple:
    """log of a series with positive constant term, same length."""
    if d[0] <= 0:
        raise InvalidInput("series log needs a positive constant term")
    n = len(d)
    L = [gmpy2.log(d[0])] + [mpfr(0)] * (n - 1)
    for k in range(1, n):
        s = k * d[k]
        for i in range(1, k):
            s -= (k - i) * d[i] * L[k - i]
        L[k] = s / (k * d[0])
    return tuple(L)


def series_exp(L: Sequence) -> Tuple:
    """exp of a series, same length."""
    n = len(L)
    E = [gmpy2.exp(L[0])] + [mpfr(0)] * (n - 1)
    for k in range(1, n):
        s = mpfr(0)
        for i in range(1, k + 1):
            s += i * L[i] * E[k - i]
        E[k] = s / k
    return tuple(E)


def series_integrate(c: Sequence, constant) -> Tuple:
    """Antiderivative with the given constant term; length grows by one."""
    return (mpfr(constant),) + tuple(ci / (i + 1) for i, ci in enumerate(c))


def series_derivative(c: Sequence) -> Tuple:
    return tuple((i + 1) * ci for i, ci in enumerate(c[1:]))


def series_recip(a: Sequence, K: int) -> Tuple:
    """Reciprocal series 1/a(t) truncated at degree K; a[0] must be nonzero."""
    if a[0] == 0:
        raise InvalidInput("series reciprocal needs a nonzero constant term")
    R = [1 / a[0]] + [mpfr(0)] * K
    for k in range(1, K + 1):
        s = mpfr(0)
        for i in range(1, min(k, len(a) - 1) + 1):
            s += a[i] * R[k - i]
        R[k] = -s / a[0]
    return tuple(R)


def series_reversion(F: Sequence, y) -> Tuple:
    """Taylor coefficients of the inverse map at x = F[0].

    ``F`` are the coefficients of f at the point y (so F[0] = f(y)); the
    result H satisfies H[0] = y and f(H(x+t)) = x + t to the jet order.
    Newton iteration on series doubles the certified order each step.
    """
    K = len(F) - 1
    if K < 1 or F[1] == 0:
        raise InvalidInput("reversion needs a nonzero first derivative")
    Fdev = (mpfr(0),) + tuple(F[1:])          # f(y+u) - f(y)
    Fprime = series_derivative(Fdev)           # d/du of the deviation
    S = [mpfr(0), 1 / F[1]] + [mpfr(0)] * (K - 1)
    m = 1
    while m < K:
        m = min(2 * m, K)
        st = tuple(S[: m + 1])
        r = list(series_compose(Fdev, st, m))
        r[1] -= 1                              # residual F(S(t)) - t
        dF = series_compose(Fprime, st, m)
        corr = series_mul_trunc(tuple(r), series_recip(dF, m), m)
        for k in range(min(m, K) + 1):
            S[k] -= corr[k]
    return (mpfr(y),) + tuple(S[1:])


def jet_compose(outer: Jet, inner: Jet, point_tol=None) -> Jet:
    """Jet of outer o inner at inner's base point.

    Orders must match and outer must be expanded at inner's value; the
    base-point agreement is checked to ``point_tol`` (default 2^-(prec/2)
    at the working precision).
    """
    if outer.order != inner.order:
        raise InvalidInput(f"jet order mismatch: {outer.order} vs {inner.order}")
    if point_tol is None:
        point_tol = mpfr(2) ** (-(working_precision() // 2))
    if abs(outer.point - inner.value) > point_tol:
        raise InvalidInput(
            f"composition base-point mismatch: |{outer.point} - {inner.value}| > {point_tol}")
    K = inner.order
    dev = (mpfr(0),) + inner.coeffs[1:]
    coeffs = series_compose(outer.coeffs, dev, K)
    return Jet(inner.point, coeffs)


def jet_log_derivative(j: Jet) -> Tuple:
    """Taylor coefficients of ln Df at the jet's point, to order K-1.

    Rejects jets whose first derivative is not positive, since only
    orientation-preserving diffeomorphism jets have a log-derivative.
    """
    if j.order < 1:
        raise InvalidInput("need at least a first-order jet")
    if j.coeffs[1] <= 0:
        raise InvalidInput("not a diffeomorphism jet: first derivative <= 0")
    d = series_derivative(j.coeffs)
    return series_log(d)


def jet_from_log_derivative(L: Sequence, point, value) -> Jet:
    """Rebuild the jet of a map from the series of ln Df and the map value."""
    return Jet(point, series_integrate(series_exp(L), value))
