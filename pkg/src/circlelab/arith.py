"""Continued-fraction angles, convergent tables, and exponent bookkeeping.

An :class:`Angle` is an irrational number in (0,1) whose canonical data is
its stream of partial quotients; the real value is always derived from the
stream, never the other way around.  Because consecutive convergents
bracket the number, every angle carries exact rational enclosures of any
requested width, and quantities like theta_n = |q_n theta - p_n| or
||k theta|| reduce to big-integer arithmetic plus one final division.

Convergent tables are indexed so that q_1 = 1 and the denominators are
strictly increasing, i.e. they list the denominators of the best rational
approximations.  For a stream starting with a_1 = 1 this drops the
duplicate denominator produced by the classical recurrence seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Optional, Sequence, Tuple

from .mpctx import (
    CertificationError,
    CoefficientsExhausted,
    Enc,
    InvalidInput,
    PrecisionExhausted,
    RationalLike,
    to_fraction,
)

TABLE_DEPTH_CAP = 100_000


@dataclass(frozen=True)
class TailPolicy:
    """How an angle's partial-quotient stream continues past its prefix."""

    kind: str  # "constant" | "periodic" | "reject"
    data: Tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in ("constant", "periodic", "reject"):
            raise InvalidInput(f"unknown tail policy {self.kind!r}")
        if self.kind == "constant":
            if len(self.data) != 1 or self.data[0] < 1:
                raise InvalidInput("constant tail needs one coefficient >= 1")
        if self.kind == "periodic":
            if not self.data or any(a < 1 for a in self.data):
                raise InvalidInput("periodic tail needs a nonempty block of coefficients >= 1")

    @staticmethod
    def constant(a: int) -> "TailPolicy":
        return TailPolicy("constant", (int(a),))

    @staticmethod
    def periodic(block: Sequence[int]) -> "TailPolicy":
        return TailPolicy("periodic", tuple(int(a) for a in block))

    @staticmethod
    def reject() -> "TailPolicy":
        return TailPolicy("reject")


class Angle:
    """Irrational number in (0,1) held as a continued-fraction stream.

    The prefix grows on demand under the tail policy.  A reject-extension
    tail raises :class:`CoefficientsExhausted` when more coefficients are
    requested than were supplied; with such a tail the enclosure is the
    interval of all irrationals sharing the prefix.
    """

    __slots__ = ("_coeffs", "tail", "precision_bits", "name",
                 "_p", "_q", "_depth_hint")

    def __init__(self, coeffs: Sequence[int], tail: TailPolicy,
                 precision_bits: int = 256, name: str = ""):
        coeffs = [int(a) for a in coeffs]
        if not coeffs:
            raise InvalidInput("empty coefficient prefix")
        if any(a < 1 for a in coeffs):
            raise InvalidInput("partial quotients must be >= 1")
        if precision_bits < 8:
            raise InvalidInput("precision_bits must be >= 8")
        self._coeffs = coeffs
        self.tail = tail
        self.precision_bits = precision_bits
        self.name = name
        # classical convergents: p[-1]=1,p[0]=0 / q[-1]=0,q[0]=1 seeds folded in
        self._p: List[int] = [1, 0]
        self._q: List[int] = [0, 1]
        self._depth_hint = 0

    # -- coefficient stream ------------------------------------------------

    def coeff(self, i: int) -> int:
        """Partial quotient a_i (1-based)."""
        if i < 1:
            raise InvalidInput("coefficient index is 1-based")
        self._ensure_coeffs(i)
        return self._coeffs[i - 1]

    def _ensure_coeffs(self, n: int) -> None:
        while len(self._coeffs) < n:
            k = len(self._coeffs)
            if self.tail.kind == "constant":
                self._coeffs.append(self.tail.data[0])
            elif self.tail.kind == "periodic":
                block = self.tail.data
                self._coeffs.append(block[(k - self._prefix_len()) % len(block)])
            else:
                raise CoefficientsExhausted(
                    f"angle {self.name or '<anon>'}: coefficients exhausted at index {k + 1} "
                    f"(prefix has {k}, tail policy rejects extension)")

    def _prefix_len(self) -> int:
        # length of the user-supplied prefix; tail coefficients are appended after it
        return self._depth_hint or len(self._coeffs)

    def freeze_prefix(self) -> None:
        """Mark the current materialized length as the tail's phase origin."""
        self._depth_hint = len(self._coeffs)

    # -- classical convergents ----------------------------------------------

    def _ensure_classical(self, n: int) -> None:
        """Materialize classical convergents p_0..p_n, q_0..q_n."""
        if n > TABLE_DEPTH_CAP:
            raise InvalidInput(f"convergent depth {n} exceeds cap {TABLE_DEPTH_CAP}")
        while len(self._q) - 2 < n:
            k = len(self._q) - 1  # next classical index to fill
            a = self.coeff(k)
            self._p.append(a * self._p[-1] + self._p[-2])
            self._q.append(a * self._q[-1] + self._q[-2])

    def classical(self, n: int) -> Tuple[int, int]:
        """Classical convergent (p_n, q_n), n >= 0."""
        self._ensure_classical(n)
        return self._p[n + 1], self._q[n + 1]

    def classical_depth_available(self) -> int:
        """Deepest classical index reachable without raising (reject tails)."""
        if self.tail.kind != "reject":
            return TABLE_DEPTH_CAP
        return len(self._coeffs)

    # -- enclosures ----------------------------------------------------------

    def enclosure(self, min_width_bits: int = 0, depth: int | None = None) -> Enc:
        """Exact rational enclosure of the value.

        With ``min_width_bits`` the enclosure is deepened until its width is
        below 2**-min_width_bits; with a reject tail the best available
        enclosure is the interval of all continuations of the prefix.
        """
        if depth is not None:
            self._ensure_classical(depth)
            n = depth
        else:
            n = max(2, len(self._q) - 2)
        target: Optional[Fraction] = (
            Fraction(1, 1 << min_width_bits) if min_width_bits > 0 else None)
        while True:
            try:
                self._ensure_classical(n)
            except CoefficientsExhausted:
                n = self.classical_depth_available()
                self._ensure_classical(n)
                pn, qn = self.classical(n)
                pm, qm = self.classical(n - 1)
                lo, hi = sorted((Fraction(pn, qn), Fraction(pn + pm, qn + qm)))
                if target is not None and hi - lo > target:
                    raise PrecisionExhausted(
                        f"angle {self.name or '<anon>'}: reject tail leaves enclosure "
                        f"width {float(hi - lo):.3g} above target")
                return Enc(lo, hi)
            pn, qn = self.classical(n)
            pm, qm = self.classical(n - 1)
            lo, hi = sorted((Fraction(pm, qm), Fraction(pn, qn)))
            if target is None or hi - lo <= target:
                return Enc(lo, hi)
            n += max(1, n // 2)

    def value(self, precision_bits: int | None = None):
        """MPFR value at the working precision, certified within 2**-bits."""
        bits = precision_bits or self.precision_bits
        return self.enclosure(min_width_bits=bits + 2).mpfr()

    def norm_enclosure(self, k: int, min_width_bits: int = 0) -> Enc:
        """Exact enclosure of ||k * theta|| (distance to nearest integer)."""
        if k <= 0:
            raise InvalidInput("k must be a positive integer")
        bits = max(min_width_bits, k.bit_length() + 16)
        while True:
            enc = self.enclosure(min_width_bits=bits)
            try:
                return enc.scale(k).dist_to_int()
            except PrecisionExhausted:
                bits *= 2

    def cmp_rational(self, r: Fraction) -> int:
        """Exact comparison against a rational: +1 if theta > r, -1 if below.

        Always decides, since the angle is irrational; the enclosure is
        deepened until the rational falls outside it.
        """
        bits = 32
        while True:
            enc = self.enclosure(min_width_bits=bits)
            if enc.lo > r:
                return 1
            if enc.hi < r:
                return -1
            bits *= 2

    # -- serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "cf": list(self._coeffs[: self._prefix_len()]),
            "tail": {"kind": self.tail.kind, "data": list(self.tail.data)},
            "precision_bits": self.precision_bits,
            "name": self.name,
        }

    @staticmethod
    def from_dict(d: dict) -> "Angle":
        tail = TailPolicy(d["tail"]["kind"], tuple(d["tail"].get("data", ())))
        a = Angle(d["cf"], tail, d.get("precision_bits", 256), d.get("name", ""))
        a.freeze_prefix()
        return a

    def __repr__(self):
        shown = self._coeffs[: min(8, len(self._coeffs))]
        return (f"Angle({self.name or ''}[0;{','.join(map(str, shown))},...], "
                f"tail={self.tail.kind})")


def angle_from_cf(coeffs: Sequence[int], tail: TailPolicy | str = "reject",
                  precision_bits: int = 256, name: str = "") -> Angle:
    """Build an Angle from partial quotients and a tail policy."""
    if isinstance(tail, str):
        tail = TailPolicy(tail)
    a = Angle(coeffs, tail, precision_bits, name)
    a.freeze_prefix()
    return a


def golden_angle(precision_bits: int = 256) -> Angle:
    """The golden-mean fractional part, [0;1,1,1,...]."""
    return angle_from_cf([1], TailPolicy.constant(1), precision_bits, name="golden")


def sqrt2_angle(precision_bits: int = 256) -> Angle:
    """sqrt(2)-1 = [0;2,2,2,...]."""
    return angle_from_cf([2], TailPolicy.constant(2), precision_bits, name="sqrt2m1")


# -- convergent tables ---------------------------------------------------------


@dataclass(frozen=True)
class Row:
    """One best-approximation row: denominator q_n and error theta_n."""

    n: int
    a: int           # generating partial quotient (0 for a seeded first row)
    p: int
    q: int
    theta: Enc       # exact enclosure of |q*theta - p|

    def theta_mpfr(self):
        return self.theta.mpfr()


class ConvergentTable:
    """Best-approximation denominators q_1 < q_2 < ... with certified errors."""

    def __init__(self, angle: Angle, rows: List[Row], seed_p: int, seed_q: int):
        self.angle = angle
        self.rows = rows
        self.seed_p = seed_p          # the (p,q) pair preceding row 1 in the recurrence
        self.seed_q = seed_q

    def __len__(self):
        return len(self.rows)

    def row(self, n: int) -> Row:
        if not 1 <= n <= len(self.rows):
            raise InvalidInput(f"row {n} outside table depth {len(self.rows)}")
        return self.rows[n - 1]

    def q(self, n: int) -> int:
        return self.row(n).q

    def p(self, n: int) -> int:
        return self.row(n).p

    def theta(self, n: int) -> Enc:
        return self.row(n).theta

    def denominators(self) -> List[int]:
        return [r.q for r in self.rows]

    def check_invariants(self) -> None:
        """Recurrence, error sandwich and monotonicity on every row, exactly.

        The sandwich and decrease verdicts compare the angle against
        rationals directly, so they never depend on enclosure width.
        """
        rows = self.rows
        ang = self.angle
        if rows[0].q != 1:
            raise CertificationErr("q_1 != 1")
        for i in range(2, len(rows)):
            r = rows[i]
            if r.q != r.a * rows[i - 1].q + rows[i - 2].q:
                raise CertificationErr(f"recurrence fails at row {r.n}")
        if len(rows) >= 2:
            r = rows[1]
            if r.q != r.a * rows[0].q + self.seed_q:
                raise CertificationErr("recurrence fails at row 2")
        for i, r in enumerate(rows[:-1]):
            nxt = rows[i + 1]
            # theta_n <= 1/q_{n+1}:  sign(q_n theta - p_n) = s, compare s*(...) <= 1/q_{n+1}
            s = ang.cmp_rational(Fraction(r.p, r.q))
            upper = Fraction(s, r.q * nxt.q) + Fraction(r.p, r.q)
            if ang.cmp_rational(upper) == s:
                raise CertificationErr(f"upper sandwich fails at row {r.n}")
            lower = Fraction(s, r.q * (nxt.q + r.q)) + Fraction(r.p, r.q)
            if ang.cmp_rational(lower) != s:
                raise CertificationErr(f"lower sandwich fails at row {r.n}")
            # theta_n > theta_{n+1}: signs alternate, difference is
            # +/-((q_n+q_{n+1}) theta - (p_n+p_{n+1}))
            med = Fraction(r.p + nxt.p, r.q + nxt.q)
            if ang.cmp_rational(med) != s:
                raise CertificationErr(f"theta not strictly decreasing at row {r.n}")

    def to_dict(self) -> dict:
        return {
            "angle": self.angle.to_dict(),
            "seed": [str(self.seed_p), str(self.seed_q)],
            "rows": [
                {
                    "n": r.n,
                    "a": str(r.a),
                    "p": str(r.p),
                    "q": str(r.q),
                    "theta_lo": [str(r.theta.lo.numerator), str(r.theta.lo.denominator)],
                    "theta_hi": [str(r.theta.hi.numerator), str(r.theta.hi.denominator)],
                }
                for r in self.rows
            ],
        }


class CertificationErr(CertificationError):
    """Invariant violation inside supposedly certified table data."""


def convergents(angle: Angle, N: int, sep_bits: int | None = None) -> ConvergentTable:
    """Table of the first N best-approximation rows of ``angle``.

    theta_n enclosures are tightened until the last row's error is
    separated from 0 by a factor 2**sep_bits, so downstream ratios of
    theta values carry the full working precision.  The default derives
    sep_bits from the working precision.
    """
    if N < 1:
        raise InvalidInput("N must be >= 1")
    if sep_bits is None:
        from .mpctx import working_precision
        sep_bits = working_precision() + 16
    a1 = angle.coeff(1)
    skip0 = (a1 == 1)
    # classical index of paper row n
    cidx = (lambda n: n) if skip0 else (lambda n: n - 1)
    angle._ensure_classical(cidx(N) + 1)

    # anchor: deep classical convergent pair bracketing theta
    anchor = cidx(N) + 2
    while True:
        try:
            angle._ensure_classical(anchor)
        except CoefficientsExhausted:
            if angle.classical_depth_available() < cidx(N) + 1:
                raise
            anchor = angle.classical_depth_available()
            angle._ensure_classical(anchor)
        Pa, Qa = angle.classical(anchor)
        Pb, Qb = angle.classical(anchor - 1)
        lo, hi = sorted((Fraction(Pa, Qa), Fraction(Pb, Qb)))
        enc = Enc(lo, hi)
        # need q_N * width < theta_N / 2**sep_bits, theta_N >= 1/(2 q_{N+1})
        qN = angle.classical(cidx(N))[1]
        qN1 = angle.classical(cidx(N) + 1)[1]
        if qN * enc.width * (2 ** sep_bits) * 2 * qN1 < 1:
            break
        if anchor >= angle.classical_depth_available():
            raise PrecisionExhausted(
                f"cannot separate theta_{N} from 0 with available coefficients")
        anchor += max(2, anchor // 2)

    rows: List[Row] = []
    for n in range(1, N + 1):
        ci = cidx(n)
        p, q = angle.classical(ci)
        theta = enc.scale(q) - p
        theta = theta.abs()
        if n == 1:
            a_gen = angle.coeff(1) if skip0 else 0
        else:
            a_gen = angle.coeff(ci)
        rows.append(Row(n=n, a=a_gen, p=p, q=q, theta=theta))

    if skip0:
        seed_p, seed_q = 0, 1      # classical row 0
    else:
        seed_p, seed_q = 1, 0      # classical seed p_-1/q_-1
    table = ConvergentTable(angle, rows, seed_p, seed_q)
    table.check_invariants()
    return table


def extend_table(table: ConvergentTable, N: int) -> ConvergentTable:
    """Table over the same angle with depth at least N."""
    if N <= len(table):
        return table
    return convergents(table.angle, N)


def deepest_table(angle: Angle, target_N: int) -> ConvergentTable:
    """Deepest table up to target_N that the angle's coefficients support."""
    N = target_N
    if angle.tail.kind == "reject":
        capacity = angle.classical_depth_available()
        if angle.coeff(1) == 1:
            capacity -= 1
        N = min(N, capacity)
    while N >= 1:
        try:
            return convergents(angle, N)
        except (CoefficientsExhausted, PrecisionExhausted):
            N -= 1
    raise CoefficientsExhausted(
        f"angle {angle.name or '<anon>'} cannot support any table depth")


# -- exponent schedule ----------------------------------------------------------


@dataclass(frozen=True)
class ExponentSchedule:
    """All derived constants of the string/regularity machinery.

    Exact rational fields stay Fractions so schedule math introduces no
    rounding; integer fields are computed by exact comparisons.
    """

    nu: Fraction
    d: int
    r: int
    b: int
    window_K: Fraction
    tau: Fraction          # tau_{d-1}
    sigma: Fraction        # 1/(2 tau^2)
    epsilon: Fraction      # 1/(2 nu + 2)
    eta: Fraction          # (2 nu + 3)/(2 nu + 2)
    N: int                 # exception count bound for the window exponent K
    k_reg: int             # regularity derivative order
    K_yoccoz: int
    K_tilde: int

    def tau_sequence(self) -> List[Fraction]:
        out = [self.nu]
        for _ in range(self.d - 1):
            out.append(2 * out[-1] + 3)
        return out


def tau_closed_form(nu: Fraction, s: int) -> Fraction:
    """tau_s by the closed form 2**s (nu+3) - 3."""
    return (2 ** s) * (nu + 3) - 3


def exponent_schedule(nu: RationalLike, d: int, r: int, b: int,
                      window_K: RationalLike = 2) -> ExponentSchedule:
    """Fill every derived constant from (nu, d, r, b) exactly."""
    nu = to_fraction(nu)
    window_K = to_fraction(window_K)
    if nu <= 0:
        raise InvalidInput("nu must be > 0")
    if d < 2 or r < 1 or b < 1:
        raise InvalidInput("need d >= 2, r >= 1, b >= 1")
    if window_K <= 1:
        raise InvalidInput("window exponent must be > 1")

    tau = nu
    for _ in range(d - 1):
        tau = 2 * tau + 3
    assert tau == tau_closed_form(nu, d - 1)

    sigma = Fraction(1, 2) / (tau * tau)
    epsilon = Fraction(1, 1) / (2 * nu + 2)
    eta = (2 * nu + 3) / (2 * nu + 2)

    # N = floor(ln K / ln eta) + 2 via exact rational powers
    m = 0
    power = Fraction(1)
    while power * eta <= window_K:
        power *= eta
        m += 1
        if m > 10_000:
            raise InvalidInput("window exponent too large for eta")
    N = m + 2

    k_reg = int((r + 2) * (2 + tau)) + 2
    K_tilde = 2 * int(tau ** (4 * b + 1))
    K_yoccoz = int(4 * tau * K_tilde)

    return ExponentSchedule(nu=nu, d=d, r=r, b=b, window_K=window_K,
                            tau=tau, sigma=sigma, epsilon=epsilon, eta=eta,
                            N=N, k_reg=k_reg, K_yoccoz=K_yoccoz, K_tilde=K_tilde)
