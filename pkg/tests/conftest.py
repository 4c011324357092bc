import gmpy2
import pytest
from gmpy2 import mpfr

from circlelab.mpctx import set_working_precision


@pytest.fixture(autouse=True)
def _precision():
    set_working_precision(128)
    yield


@pytest.fixture
def prec256():
    set_working_precision(256)
    yield
    set_working_precision(128)


def golden_value(bits: int = 320):
    """(sqrt(5)-1)/2 from the fixed point x = 1/(1+x), independent of CF code."""
    with _ctx(bits):
        return (gmpy2.sqrt(mpfr(5)) - 1) / 2


def sqrt2_value(bits: int = 320):
    with _ctx(bits):
        return gmpy2.sqrt(mpfr(2)) - 1


class _ctx:
    def __init__(self, bits):
        self.bits = bits

    def __enter__(self):
        self.saved = gmpy2.get_context()
        gmpy2.set_context(gmpy2.context(precision=self.bits))

    def __exit__(self, *exc):
        gmpy2.set_context(self.saved)
        return False


def brute_force_best_denominators(value, q_max: int):
    """All q <= q_max improving the record of ||q theta||, by direct search."""
    best = None
    out = []
    for q in range(1, q_max + 1):
        d = value * q
        dist = abs(d - gmpy2.rint(d))
        if best is None or dist < best:
            best = dist
            out.append(q)
    return out


def brute_force_exceptions(values, U: int, V: int, expo: int, bits: int = 480):
    """All k in [U, V] with ||k theta_i|| <= k^-expo for some i.

    Works from high-precision values directly (independent of the exact
    enclosure machinery) and asserts each verdict is separated from the
    threshold far beyond rounding.
    """
    out = []
    with _ctx(bits):
        vals = [mpfr(v) for v in values]
        guard = mpfr(2) ** (-bits // 2)
        for k in range(U, V + 1):
            rhs = mpfr(k) ** (-expo)
            hit = False
            for v in vals:
                d = v * k
                dist = abs(d - gmpy2.rint(d))
                assert abs(dist - rhs) > guard, "oracle too close to call"
                if dist <= rhs:
                    hit = True
                    break
            if hit:
                out.append(k)
    return out
