"""Circle diffeomorphisms as lifts over a closed expression vocabulary.

A map is a node tree over rotations, trigonometric perturbations
x + sum(alpha_m sin 2pi m x + beta_m cos 2pi m x), compositions, inverses,
and integer powers.  Every node evaluates a truncated Taylor jet of its
lift at a point; periodicity is used to reduce trigonometric arguments
while the integer winding of orbits is tracked exactly.

Inverse nodes solve the lift equation with a bracketed Newton iteration:
the bracket comes from certified displacement bounds, Newton steps that
leave the bracket fall back to bisection, and the result is accepted only
when the residual passes the working-precision tolerance.  Iterates f^q
are never materialized as trees; the orbit engine walks the map q times
and accumulates the log-derivative cocycle, so derivative errors grow
additively along the orbit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, List, Optional, Sequence, Tuple, Union

import gmpy2
from gmpy2 import mpfr

from .arith import Angle
from .jets import (
    Jet,
    identity_jet,
    jet_compose,
    jet_from_log_derivative,
    jet_log_derivative,
    series_compose,
    series_exp,
    series_integrate,
    series_reversion,
)
from .mpctx import (
    BudgetExceeded,
    CertificationError,
    Enc,
    InvalidInput,
    RationalLike,
    to_fraction,
    working_precision,
)

DEFAULT_ORBIT_BUDGET = 100_000_000


_TWO_PI_CACHE: dict = {}


def _two_pi_cached():
    prec = gmpy2.get_context().precision
    v = _TWO_PI_CACHE.get(prec)
    if v is None:
        v = _TWO_PI_CACHE[prec] = 2 * gmpy2.const_pi()
    return v


class RotationAmount:
    """Rotation offset given either exactly or as an angle."""

    __slots__ = ("angle", "fraction", "_cache")

    def __init__(self, value: Union[Angle, RationalLike]):
        if isinstance(value, Angle):
            self.angle = value
            self.fraction = None
        else:
            self.angle = None
            self.fraction = to_fraction(value)
        self._cache = {}

    def enclosure(self, bits: int) -> Enc:
        if self.angle is not None:
            return self.angle.enclosure(min_width_bits=bits)
        return Enc(self.fraction, self.fraction)

    def mpfr(self):
        prec = gmpy2.get_context().precision
        v = self._cache.get(prec)
        if v is None:
            enc = self.enclosure(prec + 4)
            v = self._cache[prec] = enc.mpfr()
        return v


class MapNode:
    """Base class of the expression vocabulary."""

    def jet(self, x, order: int) -> Jet:
        raise NotImplementedError

    def value(self, x):
        return self.jet(x, 0).value

    def value_df(self, x):
        j = self.jet(x, 1)
        return j.value, j.coeffs[1]

    def deriv_range(self) -> Tuple[Fraction, Fraction]:
        """Certified global bounds on the lift derivative (cached)."""
        r = getattr(self, "_deriv_range", None)
        if r is None:
            r = self._deriv_range = self._deriv_range_impl()
        return r

    def disp_range(self) -> Tuple[Fraction, Fraction]:
        """Certified global bounds on f(x) - x (cached)."""
        r = getattr(self, "_disp_range", None)
        if r is None:
            r = self._disp_range = self._disp_range_impl()
        return r

    def _deriv_range_impl(self) -> Tuple[Fraction, Fraction]:
        raise NotImplementedError

    def _disp_range_impl(self) -> Tuple[Fraction, Fraction]:
        raise NotImplementedError

    def certify_diffeo(self) -> None:
        lo, _ = self.deriv_range()
        if lo <= 0:
            raise CertificationError(
                f"derivative lower bound {lo} is not positive; not a diffeomorphism")

    def to_dict(self) -> dict:
        raise NotImplementedError


class Rotation(MapNode):
    def __init__(self, amount: Union[Angle, RationalLike, RotationAmount]):
        self.amount = amount if isinstance(amount, RotationAmount) else RotationAmount(amount)

    def jet(self, x, order: int) -> Jet:
        coeffs = [mpfr(x) + self.amount.mpfr()] + [mpfr(0)] * order
        if order >= 1:
            coeffs[1] = mpfr(1)
        return Jet(x, coeffs)

    def value(self, x):
        return x + self.amount.mpfr()

    def value_df(self, x):
        return x + self.amount.mpfr(), mpfr(1)

    def _deriv_range_impl(self):
        return Fraction(1), Fraction(1)

    def _disp_range_impl(self):
        enc = self.amount.enclosure(64)
        return enc.lo, enc.hi

    def to_dict(self):
        if self.amount.angle is not None:
            return {"kind": "rotation", "angle": self.amount.angle.to_dict()}
        fr = self.amount.fraction
        return {"kind": "rotation", "amount": f"{fr.numerator}/{fr.denominator}"}


class TrigPoly(MapNode):
    """Lift x + sum over terms (m, alpha, beta) of alpha sin(2pi m x) + beta cos(2pi m x)."""

    def __init__(self, terms: Sequence[Tuple[int, RationalLike, RationalLike]]):
        parsed = []
        for m, alpha, beta in terms:
            m = int(m)
            if m < 1:
                raise InvalidInput("trig frequencies must be >= 1")
            parsed.append((m, to_fraction(alpha), to_fraction(beta)))
        self.terms = tuple(parsed)
        self._cache = {}

    def _terms_mpfr(self):
        prec = gmpy2.get_context().precision
        t = self._cache.get(prec)
        if t is None:
            t = self._cache[prec] = tuple(
                (m, mpfr(a.numerator) / a.denominator, mpfr(b.numerator) / b.denominator)
                for m, a, b in self.terms)
        return t

    def amplitude_sum(self) -> Fraction:
        return sum((abs(a) + abs(b) for _, a, b in self.terms), Fraction(0))

    def slope_sum(self) -> Fraction:
        return sum((m * (abs(a) + abs(b)) for m, a, b in self.terms), Fraction(0))

    def jet(self, x, order: int) -> Jet:
        x = mpfr(x)
        xr = x - gmpy2.floor(x)
        two_pi = _two_pi_cached()
        coeffs = [x] + [mpfr(0)] * order
        if order >= 1:
            coeffs[1] = mpfr(1)
        for m, a, b in self._terms_mpfr():
            s, c = gmpy2.sin_cos(two_pi * m * xr)
            cyc_s = (s, c, -s, -c)   # successive derivatives of sin through the quarter turns
            w = two_pi * m
            coeffs[0] += a * s + b * c
            fact = mpfr(1)
            wp = mpfr(1)
            for i in range(1, order + 1):
                fact *= i
                wp *= w
                coeffs[i] += (a * cyc_s[i % 4] + b * cyc_s[(i + 1) % 4]) * wp / fact
        return Jet(x, coeffs)

    def value(self, x):
        xr = x - gmpy2.floor(x)
        two_pi = _two_pi_cached()
        v = x
        for m, a, b in self._terms_mpfr():
            s, c = gmpy2.sin_cos(two_pi * m * xr)
            v += a * s + b * c
        return v

    def value_df(self, x):
        xr = x - gmpy2.floor(x)
        two_pi = _two_pi_cached()
        v = x
        d = mpfr(1)
        for m, a, b in self._terms_mpfr():
            s, c = gmpy2.sin_cos(two_pi * m * xr)
            v += a * s + b * c
            d += (a * c - b * s) * (two_pi * m)
        return v, d

    def _deriv_range_impl(self):
        # |Df - 1| <= 2 pi sum m (|alpha|+|beta|); 2 pi < 44/7
        kappa = Fraction(44, 7) * self.slope_sum()
        return 1 - kappa, 1 + kappa

    def _disp_range_impl(self):
        A = self.amplitude_sum()
        return -A, A

    def to_dict(self):
        return {"kind": "trig", "terms": [
            [m, f"{a.numerator}/{a.denominator}", f"{b.numerator}/{b.denominator}"]
            for m, a, b in self.terms]}


def identity_map() -> TrigPoly:
    return TrigPoly(())


class Compose(MapNode):
    """outer after inner: x -> outer(inner(x))."""

    def __init__(self, outer: MapNode, inner: MapNode):
        self.outer = outer
        self.inner = inner

    def jet(self, x, order: int) -> Jet:
        ji = self.inner.jet(x, order)
        jo = self.outer.jet(ji.value, order)
        if order == 0:
            return Jet(x, (jo.value,))
        return jet_compose(jo, ji)

    def value(self, x):
        return self.outer.value(self.inner.value(x))

    def value_df(self, x):
        v, d = self.inner.value_df(x)
        v2, d2 = self.outer.value_df(v)
        return v2, d2 * d

    def _deriv_range_impl(self):
        alo, ahi = self.outer.deriv_range()
        blo, bhi = self.inner.deriv_range()
        prods = [alo * blo, alo * bhi, ahi * blo, ahi * bhi]
        return min(prods), max(prods)

    def _disp_range_impl(self):
        alo, ahi = self.outer.disp_range()
        blo, bhi = self.inner.disp_range()
        return alo + blo, ahi + bhi

    def to_dict(self):
        return {"kind": "compose", "outer": self.outer.to_dict(), "inner": self.inner.to_dict()}


_LOW_CTX = {}


def _context_for(bits: int):
    ctx = _LOW_CTX.get(bits)
    if ctx is None:
        ctx = _LOW_CTX[bits] = gmpy2.context(precision=bits)
    return ctx


class Inverse(MapNode):
    def __init__(self, inner: MapNode):
        inner.certify_diffeo()
        self.inner = inner
        self._consts = {}

    def _precision_consts(self, prec: int):
        c = self._consts.get(prec)
        if c is None:
            tol0 = mpfr(2) ** (2 - prec)
            dlo, dhi = self.inner.disp_range()
            off_lo = mpfr(dhi.numerator) / dhi.denominator
            off_hi = mpfr(dlo.numerator) / dlo.denominator
            c = self._consts[prec] = (tol0, off_lo, off_hi)
        return c

    def jet(self, x, order: int) -> Jet:
        y = self._solve(mpfr(x))
        if order == 0:
            return Jet(x, (y,))
        jf = self.inner.jet(y, order)
        return Jet(x, series_reversion(jf.coeffs, y))

    def value(self, x):
        return self._solve(mpfr(x))

    def value_df(self, x):
        y = self._solve(mpfr(x))
        _, d = self.inner.value_df(y)
        return y, 1 / d

    def _solve(self, x):
        """Certified bracketed Newton for inner(y) = x.

        A residual below 2^(2-prec) certifies the root, since the global
        derivative lower bound converts it into a bound on |y - y*|.
        A cheap low-precision phase localizes the root first; Newton steps
        that leave the bracket fall back to bisection.
        """
        prec = gmpy2.get_context().precision
        guess = None
        if prec > 104:
            saved = gmpy2.get_context()
            gmpy2.set_context(_context_for(96))
            try:
                guess = self._solve_bracketed(mpfr(x), 96)
            finally:
                gmpy2.set_context(saved)
        return self._solve_bracketed(mpfr(x), prec, guess)

    def _solve_bracketed(self, x, prec: int, guess=None):
        # tolerance is relative to the lift magnitude: the residual cannot
        # beat the representation ulp of f(y) near x
        tol0, off_lo, off_hi = self._precision_consts(prec)
        ax = abs(x)
        tol = tol0 * ax if ax > 1 else tol0
        lo = x - off_lo - tol
        hi = x - off_hi + tol
        y = guess if guess is not None else lo + (hi - lo) / 2
        for _ in range(8 * prec):
            fy, dfy = self.inner.value_df(y)
            fy = fy - x
            if abs(fy) <= tol:
                return y
            if fy <= 0:
                lo = max(lo, y)
            else:
                hi = min(hi, y)
            step_ok = dfy > 0
            if step_ok:
                cand = y - fy / dfy
                step_ok = lo < cand < hi
            y = cand if step_ok else lo + (hi - lo) / 2
        raise CertificationError(
            f"inverse iteration failed to certify at x={format(x, '.8g')}; "
            f"bracket [{format(lo, '.10g')}, {format(hi, '.10g')}]")

    def _deriv_range_impl(self):
        lo, hi = self.inner.deriv_range()
        return 1 / hi, 1 / lo

    def _disp_range_impl(self):
        lo, hi = self.inner.disp_range()
        return -hi, -lo

    def to_dict(self):
        return {"kind": "inverse", "inner": self.inner.to_dict()}


class IntPower(MapNode):
    """q-fold self-composition, evaluated by orbit, never materialized."""

    def __init__(self, base: MapNode, power: int):
        if power < 0:
            raise InvalidInput("negative powers are spelled Inverse(IntPower(...))")
        self.base = base
        self.power = int(power)

    def jet(self, x, order: int) -> Jet:
        jet, _ = orbit_jet(self.base, self.power, x, order)
        return jet

    def value(self, x):
        y = mpfr(x)
        for _ in range(self.power):
            y = self.base.value(y)
        return y

    def value_df(self, x):
        y = mpfr(x)
        d = mpfr(1)
        for _ in range(self.power):
            y, dy = self.base.value_df(y)
            d *= dy
        return y, d

    def _deriv_range_impl(self):
        lo, hi = self.base.deriv_range()
        return lo ** self.power, hi ** self.power

    def _disp_range_impl(self):
        lo, hi = self.base.disp_range()
        return self.power * lo, self.power * hi

    def to_dict(self):
        return {"kind": "power", "base": self.base.to_dict(), "power": self.power}


def node_from_dict(d: dict) -> MapNode:
    kind = d["kind"]
    if kind == "rotation":
        if "angle" in d:
            return Rotation(Angle.from_dict(d["angle"]))
        return Rotation(d["amount"])
    if kind == "trig":
        return TrigPoly([(t[0], t[1], t[2]) for t in d["terms"]])
    if kind == "compose":
        return Compose(node_from_dict(d["outer"]), node_from_dict(d["inner"]))
    if kind == "inverse":
        return Inverse(node_from_dict(d["inner"]))
    if kind == "power":
        return IntPower(node_from_dict(d["base"]), d["power"])
    raise InvalidInput(f"unknown map node kind {kind!r}")


# -- circle maps and orbits ----------------------------------------------------------


@dataclass
class CircleMap:
    """A lift with optional cached rotation number."""

    node: MapNode
    name: str = ""
    cached_rotation: Optional[Tuple[Angle, Enc]] = field(default=None, repr=False)

    def jet(self, x, order: int) -> Jet:
        return self.node.jet(x, order)

    def value(self, x):
        return self.node.value(x)

    def certify(self) -> None:
        self.node.certify_diffeo()

    def check_periodicity(self, points: Sequence) -> None:
        """|f(x+1) - f(x) - 1| at sample points, within working tolerance."""
        tol = mpfr(2) ** (4 - working_precision())
        for x in points:
            err = abs(self.node.value(mpfr(x) + 1) - self.node.value(mpfr(x)) - 1)
            if err > tol:
                raise CertificationError(f"lift periodicity fails at x={x}: err={err}")

    def to_dict(self):
        return {"name": self.name, "node": self.node.to_dict()}


def evaluate(f: CircleMap, x, jet_order: int) -> Jet:
    """Jet of the lift at x."""
    return f.jet(x, jet_order)


def orbit_jet(node: MapNode, q: int, x, order: int,
              budget: int = DEFAULT_ORBIT_BUDGET,
              collect: Optional[Callable[[int, object], None]] = None) -> Tuple[Jet, Tuple]:
    """Jet of the q-th iterate at x plus the series of ln D(f^q).

    The log-derivative series (Taylor coefficients at x, length = order)
    is accumulated by the cocycle rule: each step contributes the
    log-derivative jet of f at the current orbit point composed with the
    running jet of f^i.  The returned jet is rebuilt from the cocycle.
    ``collect`` receives (i, y_i) before each step.
    """
    if q < 0:
        raise InvalidInput("orbit length must be >= 0")
    if q > budget:
        raise BudgetExceeded(f"orbit length {q} above budget {budget}")
    x = mpfr(x)
    if order == 0:
        y = x
        for i in range(q):
            if collect is not None:
                collect(i, y)
            y = node.value(y)
        return Jet(x, (y,)), ()

    K = order
    L = [mpfr(0)] * K          # ln D(f^i) Taylor coefficients at x
    y = x
    for i in range(q):
        if collect is not None:
            collect(i, y)
        jf = node.jet(y, K)
        lder = jet_log_derivative(jf)          # ln Df at y, length K
        if K == 1:
            L[0] += lder[0]
        else:
            # deviation of f^i at x: integrate exp(L) without constant term
            dev = series_integrate(series_exp(tuple(L[: K - 1])), 0)
            inc = series_compose(lder, dev, K - 1)
            for k in range(K):
                L[k] += inc[k]
        y = jf.value
    jet = jet_from_log_derivative(tuple(L), x, y)
    return jet, tuple(L)


def orbit_value(node: MapNode, q: int, x, budget: int = DEFAULT_ORBIT_BUDGET):
    return orbit_jet(node, q, x, 0, budget)[0].value


def iterate(f: CircleMap, q: int, x, jet_order: int,
            budget: int = DEFAULT_ORBIT_BUDGET) -> Jet:
    """Jet of f^q at x; negative q runs the inverse map."""
    node = f.node
    if q < 0:
        node, q = Inverse(node), -q
    jet, _ = orbit_jet(node, q, x, jet_order, budget)
    return jet


def log_derivative_sum_direct(node: MapNode, q: int, x,
                              budget: int = DEFAULT_ORBIT_BUDGET):
    """D ln D(f^q)(x) by the first-order product rule, independently of jets.

    Returns sum_i (ln Df)'(f^i x) * Df^i(x), accumulating the orbit
    derivative as a plain product; used as the cross-check route for the
    cocycle accumulation.
    """
    x = mpfr(x)
    y = x
    dprod = mpfr(1)
    acc = mpfr(0)
    if q > budget:
        raise BudgetExceeded(f"orbit length {q} above budget {budget}")
    for _ in range(q):
        j = node.jet(y, 2)
        df = j.coeffs[1]
        d2f = 2 * j.coeffs[2]
        acc += (d2f / df) * dprod
        dprod *= df
        y = j.value
    return acc


# -- rotation numbers ------------------------------------------------------------------


def rotation_number(f: CircleMap, table_depth: int = 12,
                    orbit_budget: int = 1_000_000) -> Tuple[Angle, Enc]:
    """Certified rotation-number enclosure with progressive CF extraction.

    Uses the displacement inequality q*rho - 1 < lift^q(x) - x < q*rho + 1:
    each evaluation at orbit length q yields an enclosure of width 2/q.
    Candidate orbit lengths come from the convergents of the running
    estimate, so the enclosure tightens at the denominators where the
    orbit nearly closes; digits are emitted only while both enclosure
    endpoints agree on them.
    """
    from .strings import cf_from_enclosure

    node = f.node
    prec = working_precision()
    pad = Fraction(1, 1 << (prec // 2))

    def enclosure_at(q: int) -> Enc:
        d = orbit_value(node, q, mpfr(0), budget=orbit_budget)
        num, den = d.as_integer_ratio()
        dfrac = Fraction(int(num), int(den))
        lo = (dfrac - 1) / q - pad
        hi = (dfrac + 1) / q + pad
        return Enc(lo, hi)

    enc = enclosure_at(64)
    digits: List[int] = []
    probe = 64
    stall = 0
    while True:
        frac = Enc(enc.lo - enc.lo.__floor__(), enc.hi - enc.lo.__floor__())
        new_digits = cf_from_enclosure(frac, table_depth + 2) if 0 < frac.lo and frac.hi < 1 else []
        if len(new_digits) >= table_depth:
            digits = new_digits
            break
        # width ~ 1/(2 q_m^2) certifies the next digit unless its quotient
        # is large; probes grow geometrically past that scale
        q0, q1 = 0, 1
        for a in new_digits:
            q0, q1 = q1, a * q1 + q0
        probe = max(2 * probe, 4 * q1 * q1)
        if probe > orbit_budget:
            if new_digits:
                digits = new_digits
                break
            raise BudgetExceeded(
                f"rotation-number enclosure stalls at width {float(enc.width):.3g} "
                f"with {len(new_digits)} certified digits (budget {orbit_budget})")
        nxt = enclosure_at(probe)
        if nxt.width >= enc.width:
            stall += 1
            if stall >= 3:
                digits = new_digits
                break
        else:
            stall = 0
        lo = max(enc.lo, nxt.lo)
        hi = min(enc.hi, nxt.hi)
        if lo > hi:
            raise CertificationError("rotation-number enclosures are inconsistent")
        enc = Enc(lo, hi)

    if not digits:
        raise CertificationError(
            f"no certified continued-fraction digit for rotation number in {enc}")
    from .arith import TailPolicy
    ang = Angle(digits, TailPolicy.reject(), precision_bits=prec, name=f"rho({f.name})")
    ang.freeze_prefix()
    f.cached_rotation = (ang, enc)
    return ang, enc


# -- commuting families ----------------------------------------------------------------


@dataclass
class CommutingFamily:
    """Maps with pairwise commutation certified at construction."""

    maps: List[CircleMap]
    rotation_numbers: List[Angle]
    provenance: str
    defect: object = None
    tolerance: object = None

    def __post_init__(self):
        if len(self.maps) != len(self.rotation_numbers):
            raise InvalidInput("one rotation number per map required")


def commutation_defect(maps: Sequence[CircleMap], grid: int = 10_000):
    """sup over the grid of |f_i(f_j(x)) - f_j(f_i(x))|, index-ordered max."""
    worst = mpfr(0)
    if len(maps) < 2:
        return worst
    step = mpfr(1) / grid
    for i in range(len(maps)):
        for j in range(i + 1, len(maps)):
            fi, fj = maps[i].node, maps[j].node
            x = mpfr(0)
            for _ in range(grid):
                d = abs(fi.value(fj.value(x)) - fj.value(fi.value(x)))
                if d > worst:
                    worst = d
                x += step
    return worst


def family_tolerance():
    """10^-(precision_bits/4), the hard commutation budget."""
    return mpfr(10) ** -(working_precision() // 4)


def make_conjugated_rotations(h: MapNode, angles: Sequence[Angle],
                              defect_grid: int = 1000) -> CommutingFamily:
    """Family h^-1 R_theta_i h; commutation is exact by construction and
    verified numerically on a grid."""
    h.certify_diffeo()
    hinv = Inverse(h)
    maps = []
    for i, ang in enumerate(angles):
        node = Compose(hinv, Compose(Rotation(ang), h))
        maps.append(CircleMap(node, name=f"conj_{ang.name or i}"))
    fam = CommutingFamily(maps, list(angles), provenance="conjugated-rotations")
    fam.tolerance = family_tolerance()
    fam.defect = commutation_defect(maps, grid=defect_grid)
    if fam.defect > fam.tolerance:
        raise CertificationError(
            f"commutation defect {format(fam.defect, '.3g')} above tolerance "
            f"{format(fam.tolerance, '.3g')}")
    return fam


def make_tilde_family(base: CommutingFamily, p: int,
                      crosscheck_depth: int = 6,
                      rotation_budget: int = 200_000) -> CommutingFamily:
    """Power-closure family f_1 f_2^s f_3^(s^2) ... for s = 1..p.

    Rotation numbers are the matching integer combinations of the base
    angles; each one is cross-checked against a certified enclosure of the
    composed map's rotation number.
    """
    from .strings import combination_enclosure, tilde_angles

    d = len(base.maps)
    if p < d:
        raise InvalidInput(f"need p >= d = {d}")
    angles = tilde_angles(base.rotation_numbers, p,
                          precision_bits=working_precision())
    maps = []
    for s in range(1, p + 1):
        node: MapNode = base.maps[0].node
        for i in range(1, d):
            node = Compose(node, IntPower(base.maps[i].node, s ** i))
        maps.append(CircleMap(node, name=f"tilde_{s}"))
    fam = CommutingFamily(maps, angles, provenance="power-closure")
    fam.tolerance = family_tolerance()
    fam.defect = commutation_defect(maps[: min(3, p)], grid=200)
    if fam.defect > fam.tolerance:
        raise CertificationError("tilde family lost commutation beyond tolerance")
    for s in (1, p):
        rho, enc = rotation_number(maps[s - 1], table_depth=crosscheck_depth,
                                   orbit_budget=rotation_budget)
        want = combination_enclosure(base.rotation_numbers,
                                     [s ** e for e in range(d)], 64)
        if enc.disjoint_from(want):
            raise CertificationError(
                f"rotation number of tilde_{s} disagrees with the angle combination")
    return fam


def make_liouville_family(cf_target: Angle,
                          schedule: Sequence[Tuple[int, RationalLike, RationalLike]],
                          stages: int, max_stages: int = 6) -> CommutingFamily:
    """Finite-stage successively-conjugated surrogate around a burst angle.

    The conjugator is a composition of single-frequency perturbations from
    the schedule; the result is exactly conjugate to the rotation by the
    target angle, so it is a desk-scale stand-in for the limit
    construction, not the limit object itself.
    """
    if stages > max_stages:
        raise InvalidInput(f"stages {stages} above configured depth {max_stages}")
    if stages > len(schedule):
        raise InvalidInput("schedule shorter than requested stage count")
    H: MapNode = identity_map()
    for m, alpha, beta in list(schedule)[:stages]:
        stage = TrigPoly([(m, alpha, beta)])
        stage.certify_diffeo()
        H = Compose(H, stage) if not _is_identity(H) else stage
    if _is_identity(H):
        node: MapNode = Rotation(cf_target)
    else:
        H.certify_diffeo()
        node = Compose(Inverse(H), Compose(Rotation(cf_target), H))
    fam = CommutingFamily([CircleMap(node, name="liouville")], [cf_target],
                          provenance="successive-conjugation")
    fam.tolerance = family_tolerance()
    fam.defect = mpfr(0)
    return fam


def _is_identity(node: MapNode) -> bool:
    return isinstance(node, TrigPoly) and not node.terms


def liouville_schedule(burst_scale: int, stages: int,
                       strength: Fraction = Fraction(7, 80),
                       base_factor: int = 8,
                       freq_growth: int = 3) -> List[Tuple[int, Fraction, Fraction]]:
    """Stage frequencies geometric above the burst scale, fixed slope budget.

    Each stage has |alpha| + |beta| = strength/m so the derivative
    oscillation per stage is about 2 pi strength, independent of m; mixing
    weights rotate across stages so the stage extrema do not align.
    """
    weights = [(Fraction(1), Fraction(0)), (Fraction(3, 5), Fraction(2, 5)),
               (Fraction(1, 5), Fraction(4, 5)), (Fraction(4, 5), Fraction(1, 5))]
    out = []
    m = base_factor * burst_scale
    for j in range(stages):
        w, v = weights[j % len(weights)]
        out.append((m, strength * w / m, strength * v / m))
        m *= freq_growth
    return out
