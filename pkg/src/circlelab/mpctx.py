"""Precision management and exact rational enclosures.

All floating computations in this package run on MPFR reals (via gmpy2)
under an explicit working precision.  Exact statements (continued-fraction
data, membership verdicts, window bounds) are kept in big-integer or
rational form; MPFR enters only where a real number is finally rendered
or where a sup/inf over a grid is estimated.

``Enc`` is a closed rational interval certified to contain a real number.
Enclosures coming out of convergent data are exact, so comparisons against
rational thresholds are decided without rounding; when an enclosure is too
wide to decide a comparison the caller escalates depth rather than guess.
"""

from __future__ import annotations

import threading
from fractions import Fraction
from typing import Callable, Iterable, Union

import gmpy2
from gmpy2 import mpfr

RationalLike = Union[int, str, Fraction]

#: extra mantissa bits carried above the requested precision
GUARD_BITS = 10

#: hard ceiling for automatic precision escalation (design default 2**16)
MAX_PRECISION_BITS = 1 << 16


class CircleLabError(Exception):
    """Base class for all package errors."""


class InvalidInput(CircleLabError):
    """A precondition on user-facing input was violated."""


class CoefficientsExhausted(CircleLabError):
    """A continued-fraction prefix ran out under a reject-extension tail."""


class PrecisionExhausted(CircleLabError):
    """Escalation hit the precision cap before a verdict was certified."""


class BudgetExceeded(CircleLabError):
    """An evaluation or enumeration budget was exceeded."""


class CertificationError(CircleLabError):
    """A quantity that must be certified failed its certification."""


_local = threading.local()


def set_working_precision(bits: int) -> None:
    """Install a thread-local MPFR context with the given mantissa size."""
    if bits < 8:
        raise InvalidInput(f"precision_bits must be >= 8, got {bits}")
    gmpy2.set_context(gmpy2.context(precision=bits + GUARD_BITS))
    _local.bits = bits


def working_precision() -> int:
    return getattr(_local, "bits", gmpy2.get_context().precision - GUARD_BITS)


class workprec:
    """Context manager form of :func:`set_working_precision`."""

    def __init__(self, bits: int):
        self.bits = bits
        self._saved = None

    def __enter__(self):
        self._saved = gmpy2.get_context()
        self._saved_bits = getattr(_local, "bits", None)
        set_working_precision(self.bits)
        return self

    def __exit__(self, *exc):
        gmpy2.set_context(self._saved)
        _local.bits = self._saved_bits
        return False


def to_fraction(x: RationalLike) -> Fraction:
    """Parse ints, Fractions, and decimal/ratio strings exactly.

    Strings are accepted in the forms "3", "0.05", "1/4"; floats are
    deliberately rejected so config files cannot smuggle rounded values
    into exact arithmetic.
    """
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, str):
        return Fraction(x)
    raise InvalidInput(f"expected an exact number (int, Fraction, or string), got {type(x).__name__}")


def fraction_mpfr(x: Fraction) -> mpfr:
    """Round a Fraction to the current working precision."""
    return mpfr(x.numerator) / mpfr(x.denominator)


def mpfr_str(x, digits: int | None = None) -> str:
    """Deterministic decimal rendering of an MPFR value."""
    if digits is None:
        digits = int(working_precision() * 0.30103) + 2
    # 'g' instead of 'e': this gmpy2 build mishandles the 'e' conversion
    return format(mpfr(x), f".{digits}g")


class Enc:
    """Closed rational interval [lo, hi] certified to contain a real value."""

    __slots__ = ("lo", "hi")

    def __init__(self, lo: Fraction, hi: Fraction):
        if lo > hi:
            raise ValueError("enclosure endpoints out of order")
        self.lo = lo
        self.hi = hi

    def __repr__(self):
        return f"Enc({self.lo}, {self.hi})"

    @property
    def width(self) -> Fraction:
        return self.hi - self.lo

    @property
    def mid(self) -> Fraction:
        return (self.lo + self.hi) / 2

    def mpfr(self):
        return fraction_mpfr(self.mid)

    def __add__(self, other):
        if isinstance(other, Enc):
            return Enc(self.lo + other.lo, self.hi + other.hi)
        other = Fraction(other)
        return Enc(self.lo + other, self.hi + other)

    def __sub__(self, other):
        if isinstance(other, Enc):
            return Enc(self.lo - other.hi, self.hi - other.lo)
        other = Fraction(other)
        return Enc(self.lo - other, self.hi - other)

    def scale(self, k) -> "Enc":
        k = Fraction(k)
        if k >= 0:
            return Enc(self.lo * k, self.hi * k)
        return Enc(self.hi * k, self.lo * k)

    def abs(self) -> "Enc":
        if self.lo >= 0:
            return self
        if self.hi <= 0:
            return Enc(-self.hi, -self.lo)
        return Enc(Fraction(0), max(-self.lo, self.hi))

    def mod1(self) -> "Enc":
        """Reduce modulo 1; requires the interval not to straddle an integer."""
        n = self.lo.__floor__()
        if self.hi - n >= 1 and self.hi.__floor__() != n and self.hi != n + 1:
            raise PrecisionExhausted("enclosure straddles an integer, cannot reduce mod 1")
        return Enc(self.lo - n, self.hi - n)

    def dist_to_int(self) -> "Enc":
        """Enclosure of the distance to the nearest integer."""
        f = self.mod1()
        lo, hi = f.lo, f.hi
        half = Fraction(1, 2)
        # ||x|| = x on [0,1/2], = 1-x on [1/2,1]
        if hi <= half:
            return Enc(lo, hi)
        if lo >= half:
            return Enc(1 - hi, 1 - lo)
        return Enc(min(lo, 1 - hi), half)

    def cmp(self, threshold: Fraction) -> int:
        """-1 if certainly below, +1 if certainly above, 0 if undecided."""
        if self.hi < threshold:
            return -1
        if self.lo > threshold:
            return 1
        return 0

    def disjoint_from(self, other: "Enc") -> bool:
        return self.hi < other.lo or other.hi < self.lo


def escalate(task: Callable[[int], object], start_bits: int,
             cap: int = MAX_PRECISION_BITS):
    """Run ``task(bits)`` with doubling precision until it stops raising
    :class:`PrecisionExhausted` or the cap aborts with a diagnostic."""
    bits = start_bits
    last = None
    while bits <= cap:
        try:
            return task(bits)
        except PrecisionExhausted as exc:
            last = exc
            bits *= 2
    raise PrecisionExhausted(
        f"no certified verdict below the {cap}-bit precision cap: {last}")


def integer_nth_root_ceil(x: int, n: int) -> int:
    """Smallest integer r with r**n >= x (x >= 0, n >= 1)."""
    if x <= 0:
        return 0
    r, exact = gmpy2.iroot(x, n)
    r = int(r)
    return r if exact or r ** n >= x else r + 1


def integer_nth_root_floor(x: int, n: int) -> int:
    """Largest integer r with r**n <= x (x >= 0, n >= 1)."""
    if x < 0:
        raise ValueError("negative radicand")
    return int(gmpy2.iroot(x, n)[0])


def pow_fraction_ceil_int(base: int, expo: Fraction) -> int:
    """Smallest integer >= base**expo for base >= 1 and expo > 0, exactly."""
    if base < 1:
        raise ValueError("base must be >= 1")
    return integer_nth_root_ceil(base ** expo.numerator, expo.denominator)


def pow_fraction_floor_int(base: int, expo: Fraction) -> int:
    """Largest integer <= base**expo for base >= 1 and expo > 0, exactly."""
    if base < 1:
        raise ValueError("base must be >= 1")
    return integer_nth_root_floor(base ** expo.numerator, expo.denominator)


def max_abs(values: Iterable) -> mpfr:
    """Index-ordered maximum of absolute values (bit-stable reduction)."""
    best = None
    for v in values:
        a = abs(v)
        if best is None or a > best:
            best = a
    if best is None:
        raise ValueError("empty reduction")
    return best
