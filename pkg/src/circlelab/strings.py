"""Simultaneous Diophantine machinery: membership sets, exception scans,
string covering, alternated configurations, and derived angle families.

Membership verdicts (q_{s+1} <= q_s^tau, ||k theta|| >= C k^-tau) are
decided in exact big-integer arithmetic: exponents are taken as exact
rationals, so a verdict is a comparison of integer powers and never
depends on float rounding.  Scans over k work on exact rational
enclosures of ||k theta|| and escalate continued-fraction depth when an
enclosure straddles a threshold instead of guessing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import List, Optional, Sequence, Tuple

from .arith import (Angle, ConvergentTable, ExponentSchedule, TailPolicy,
                    convergents, deepest_table, extend_table)
from .mpctx import (
    CoefficientsExhausted,
    Enc,
    InvalidInput,
    PrecisionExhausted,
    RationalLike,
    integer_nth_root_floor,
    pow_fraction_ceil_int,
    pow_fraction_floor_int,
    to_fraction,
)

SCAN_DEPTH_START = 64


# -- membership ------------------------------------------------------------------


def in_A_tau(table: ConvergentTable, s: int, tau: RationalLike) -> bool:
    """Exact verdict of q_{s+1} <= q_s^tau for rows s, s+1 of the table."""
    tau = to_fraction(tau)
    if tau <= 0:
        raise InvalidInput("tau must be positive")
    qs = table.q(s)
    qn = table.q(s + 1)
    # q_{s+1} <= q_s^(num/den)  <=>  q_{s+1}^den <= q_s^num
    return qn ** tau.denominator <= qs ** tau.numerator


def _pow_leq(base_l: int, el: Fraction, base_r: int, er: Fraction) -> bool:
    """Exact check of base_l^el <= base_r^er for positive rational exponents."""
    return base_l ** (el.numerator * er.denominator) <= base_r ** (er.numerator * el.denominator)


def _norm_cmp_power(angle: Angle, k: int, C: Fraction, expo: Fraction) -> int:
    """Exact sign of ||k theta|| - C k^-expo (+1 above, -1 below).

    Escalates enclosure depth until decided; the difference cannot vanish
    because ||k theta|| is irrational while the threshold is rational.
    """
    en, ed = expo.numerator, expo.denominator
    Cn, Cd = C.numerator, C.denominator
    # ||k theta|| > C k^-expo  <=>  ||k theta||^ed * k^en * Cd^ed > Cn^ed
    rhs = Cn ** ed
    k_pow = k ** en
    bits = SCAN_DEPTH_START + k.bit_length()
    while True:
        enc = angle.norm_enclosure(k, min_width_bits=bits)
        lo = enc.lo
        if lo > 0 and (lo.numerator ** ed) * k_pow * (Cd ** ed) > rhs * (lo.denominator ** ed):
            return 1
        hi = enc.hi
        if (hi.numerator ** ed) * k_pow * (Cd ** ed) < rhs * (hi.denominator ** ed):
            return -1
        bits *= 2
        if bits > 1 << 24:
            raise PrecisionExhausted(f"cannot separate ||{k} theta|| from its threshold")


def d_set_member(angles: Sequence[Angle], k_lo: int, k_hi: int,
                 tau: RationalLike, C: RationalLike = 1) -> Tuple[bool, Optional[int]]:
    """Exact check of sup_i ||k theta_i|| >= C k^-tau for every k in [k_lo, k_hi].

    Returns (True, None) or (False, smallest violating k).  An empty range
    is vacuously true.  Scans may be partitioned by k; merging by minimum
    witness keeps the result partition-independent.
    """
    if not angles:
        raise InvalidInput("need at least one angle")
    tau = to_fraction(tau)
    C = to_fraction(C)
    if k_lo > k_hi:
        return True, None
    for k in range(max(1, k_lo), k_hi + 1):
        if not any(_norm_cmp_power(a, k, C, tau) > 0 for a in angles):
            return False, k
    return True, None


def fit_largest_C(angles: Sequence[Angle], k_lo: int, k_hi: int,
                  tau: RationalLike) -> Fraction:
    """Certified lower bound for the largest C with membership on the range.

    C = min over k of max_i ||k theta_i|| * k^tau, evaluated from enclosure
    lower bounds and a floor of the power, so the reported value is always
    admissible.
    """
    tau = to_fraction(tau)
    best: Optional[Fraction] = None
    for k in range(max(1, k_lo), k_hi + 1):
        top = max(a.norm_enclosure(k, min_width_bits=48 + k.bit_length()).lo
                  for a in angles)
        val = top * pow_fraction_floor_int(k, tau)
        if best is None or val < best:
            best = val
    if best is None:
        raise InvalidInput("empty fit range")
    return best


# -- exception extraction ---------------------------------------------------------


@dataclass(frozen=True)
class ExceptionWindow:
    """One exception of the protection scan.

    ``k`` is the smallest integer at which some angle dips below the
    threshold, ``j`` that angle's index, and ``protected_end`` the point
    where the next scan resumes; the stretch [k, protected_end) is covered
    by this window.
    """

    k: int
    j: int
    norm: Enc
    protected_end: int


def _pow_floor_of_reciprocal(fr: Fraction, expo: Fraction) -> int:
    """floor((1/fr)^expo) for 0 < fr < 1, conservatively (never above)."""
    inv = 1 / fr
    en, ed = expo.numerator, expo.denominator
    scaled = (inv.numerator ** en) // (inv.denominator ** en)
    return integer_nth_root_floor(scaled, ed)


def extract_exceptions(angles: Sequence[Angle], U: int, V: int, nu: RationalLike,
                       sched: ExponentSchedule | None = None,
                       jump_policy: str = "lemma",
                       verify_samples: int = 16) -> List[ExceptionWindow]:
    """Constructive scan for the exceptional times of a simultaneous family.

    Walks k upward from U; at each exception (||k theta_j|| <= k^-(2nu+3))
    the offending angle is retired and the scan resumes at the end of the
    protected stretch.  ``jump_policy`` selects the protected-end exponent:
    "lemma" uses epsilon = 1/(2nu+2), the exponent the protection lemma
    actually grants, and is the default; "literal" uses 2nu+3 as printed in
    the source construction, which overshoots the protected zone.

    After the scan, membership of the surviving angles is spot-verified on
    sampled points between windows, so a configuration error surfaces
    instead of propagating.
    """
    if U > V:
        raise InvalidInput("empty scan range: U > V")
    if U < 1:
        raise InvalidInput("U must be >= 1")
    if jump_policy not in ("lemma", "literal"):
        raise InvalidInput(f"unknown jump policy {jump_policy!r}")
    nu = to_fraction(nu)
    expo = 2 * nu + 3
    jump_expo = Fraction(1, 1) / (2 * nu + 2) if jump_policy == "lemma" else expo

    windows: List[ExceptionWindow] = []
    retired: set[int] = set()
    one = Fraction(1)
    k = U
    while k <= V:
        hit = None
        for j, a in enumerate(angles):
            if j not in retired and _norm_cmp_power(a, k, one, expo) < 0:
                hit = j
                break
        if hit is None:
            k += 1
            continue
        bits = SCAN_DEPTH_START + k.bit_length()
        enc = angles[hit].norm_enclosure(k, min_width_bits=bits)
        while enc.lo <= 0:
            bits *= 2
            enc = angles[hit].norm_enclosure(k, min_width_bits=bits)
        end = max(_pow_floor_of_reciprocal(enc.hi, jump_expo), k + 1)
        windows.append(ExceptionWindow(k=k, j=hit, norm=enc, protected_end=end))
        retired.add(hit)
        if sched is not None and len(windows) > sched.N:
            raise InvalidInput(
                f"found {len(windows)} exceptions, above the configured bound "
                f"{sched.N}: schedule and angle family are inconsistent")
        if len(retired) == len(angles):
            break
        k = end

    survivors = [a for j, a in enumerate(angles) if j not in retired]
    if survivors and verify_samples > 0:
        span = max(1, (V - U) // verify_samples)
        guarded = [(w.k, w.protected_end) for w in windows]
        k = U
        while k <= V:
            if not any(lo <= k < hi for lo, hi in guarded):
                ok, witness = d_set_member(survivors, k, k, expo)
                if not ok:
                    raise CertificationFailure(
                        f"scan verification failed at k={witness}: survivors unprotected")
            k += span
    return windows


class CertificationFailure(PrecisionExhausted):
    pass


# -- string covering ---------------------------------------------------------------


@dataclass(frozen=True)
class DiophantineString:
    """Run of membership indices [l, n-1] for the angle at index j."""

    j: int
    l: int
    n: int
    tau: Fraction

    def __post_init__(self):
        if self.l < 1 or self.n < self.l:
            raise InvalidInput("need 1 <= l <= n")

    def indices(self) -> range:
        return range(self.l, self.n)

    def validate(self, table: ConvergentTable) -> None:
        for s in self.indices():
            if not in_A_tau(table, s, self.tau):
                raise InvalidInput(
                    f"string [{self.l},{self.n}] fails membership at s={s}")

    def to_dict(self) -> dict:
        return {"j": self.j, "l": self.l, "n": self.n,
                "tau": [str(self.tau.numerator), str(self.tau.denominator)]}


@dataclass
class StringSearchState:
    """Diagnostic breadcrumb for a failed covering search."""

    angle_index: int
    depth_reached: int
    last_break: Optional[int]

    def describe(self) -> str:
        return (f"angle {self.angle_index}: searched to depth {self.depth_reached}, "
                f"first membership break at {self.last_break}")


def find_string_covering(angles: Sequence[Angle], U: int, V: int,
                         sched: ExponentSchedule,
                         tau: RationalLike | None = None,
                         depth_cap: int = 4000) -> Tuple[DiophantineString, ConvergentTable]:
    """Find an angle with a membership run whose denominators straddle [U, V].

    Returns the first (by angle order) string with q_l <= U <= V <= q_n and
    every interior index a member; the output is re-validated before return.
    """
    if U < 1 or V < U:
        raise InvalidInput("need 1 <= U <= V")
    K = to_fraction(sched.window_K)
    if U > 1 and not _pow_leq(V, Fraction(1), U, K):
        raise InvalidInput(f"window too wide: V > U^K with K={K}")
    tau = to_fraction(tau) if tau is not None else sched.tau
    states: List[StringSearchState] = []

    for idx, angle in enumerate(angles):
        table = deepest_table(angle, 8)
        while table.q(len(table)) < V and len(table) < depth_cap:
            deeper = deepest_table(angle, min(depth_cap, len(table) * 2))
            if len(deeper) <= len(table):
                break
            table = deeper
        if table.q(len(table)) < V:
            states.append(StringSearchState(idx, len(table), None))
            continue
        n = next(i for i in range(1, len(table) + 1) if table.q(i) >= V)
        l = max(i for i in range(1, n + 1) if table.q(i) <= U)
        break_at = next((s for s in range(l, n) if not in_A_tau(table, s, tau)), None)
        if break_at is None:
            string = DiophantineString(j=idx, l=l, n=n, tau=tau)
            string.validate(table)
            return string, table
        states.append(StringSearchState(idx, len(table), break_at))

    detail = "; ".join(s.describe() for s in states)
    raise PrecisionExhausted(f"no covering string found for [{U}, {V}]: {detail}")


# -- alternated configurations ------------------------------------------------------


@dataclass
class AlternatedConfig:
    """Chained membership strings with overlap windows and left margins.

    A margin is the deepest index l' <= l whose run [l', l-1] stays in the
    membership set with q_{l'} <= q_l^xi.  With few angles such margins may
    not exist at desk depth (they come from adding angles), so each string
    carries a flag saying whether its margin claim is asserted; validation
    checks the bound only where claimed.
    """

    strings: List[DiophantineString]
    margins: List[int]                  # l'_i per string
    xi: Fraction
    tau: Fraction
    margin_ok: List[bool] = None
    complete: bool = True
    failure: Optional[str] = None

    def __post_init__(self):
        if self.margin_ok is None:
            self.margin_ok = [True] * len(self.strings)

    def exponents(self, tables: Sequence[ConvergentTable]) -> List[float]:
        """Per-string growth exponents A_i with q_{n_i} = q_{l_i}^{A_i}."""
        out = []
        for st in self.strings:
            t = tables[st.j]
            out.append(math.log(t.q(st.n)) / math.log(t.q(st.l)))
        return out

    def validate(self, tables: Sequence[ConvergentTable]) -> None:
        """Check every invariant: membership, chain inequalities, margins."""
        if len(self.margins) != len(self.strings) or len(self.margin_ok) != len(self.strings):
            raise InvalidInput("margin list length mismatch")
        t2 = self.tau * self.tau
        for i, st in enumerate(self.strings):
            table = tables[st.j]
            st.validate(table)
            lp = self.margins[i]
            if lp > st.l:
                raise InvalidInput(f"margin index above string start at string {i}")
            for s in range(lp, st.l):
                if not in_A_tau(table, s, self.tau):
                    raise InvalidInput(f"margin run broken at s={s} (string {i})")
            if self.margin_ok[i] and \
               not _pow_leq(table.q(lp), Fraction(1), table.q(st.l), self.xi):
                raise InvalidInput(f"margin bound fails at string {i}")
        for i in range(len(self.strings) - 1):
            a, b = self.strings[i], self.strings[i + 1]
            qn = tables[a.j].q(a.n)
            ql_cur = tables[a.j].q(a.l)
            ql_next = tables[b.j].q(b.l)
            # q_{l_i}^(tau^2) <= q_{n_i}^(1/tau^2) <= q_{l_{i+1}} <= q_{n_i}^(1/tau)
            if not _pow_leq(ql_cur, t2, qn, 1 / t2):
                raise InvalidInput(f"chain growth bound fails between strings {i},{i + 1}")
            if not _pow_leq(qn, 1 / t2, ql_next, Fraction(1)):
                raise InvalidInput(f"window lower bound fails between strings {i},{i + 1}")
            if not _pow_leq(ql_next, Fraction(1), qn, 1 / self.tau):
                raise InvalidInput(f"window upper bound fails between strings {i},{i + 1}")

    def summary(self, tables: Sequence[ConvergentTable]) -> str:
        lines = []
        A = self.exponents(tables)
        for i, st in enumerate(self.strings):
            t = tables[st.j]
            qn = t.q(st.n)
            qn_str = str(qn) if qn < 10 ** 12 else f"~1e{len(str(qn)) - 1}"
            margin = f"l'={self.margins[i]}" if self.margin_ok[i] else "l'=(none)"
            lines.append(
                f"string {i}: angle={st.j} l={st.l} n={st.n} {margin} "
                f"q_l={t.q(st.l)} q_n={qn_str} A={A[i]:.3f}")
        if not self.complete:
            lines.append(f"INCOMPLETE: {self.failure}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "strings": [s.to_dict() for s in self.strings],
            "margins": list(self.margins),
            "margin_ok": list(self.margin_ok),
            "xi": [str(self.xi.numerator), str(self.xi.denominator)],
            "tau": [str(self.tau.numerator), str(self.tau.denominator)],
            "complete": self.complete,
            "failure": self.failure,
        }


def find_alternated_config(angles: Sequence[Angle], sched: ExponentSchedule,
                           xi: RationalLike, depth: int,
                           tau: RationalLike | None = None,
                           table_depth_cap: int = 4000,
                           start_candidates: int = 64,
                           n_cap: Optional[int] = None,
                           prefer_switch: bool = False,
                           margin_policy: str = "require") -> Tuple[AlternatedConfig, List[ConvergentTable]]:
    """Greedy left-to-right construction of an alternated configuration.

    Each new string is searched in the window [q_{n_prev}^(1/tau^2),
    q_{n_prev}^(1/tau)]; within a window the first angle (in candidate
    order) offering a membership run with the required growth and margin
    wins.  ``n_cap`` bounds string ends by table row, keeping them inside
    a traceable depth; ``prefer_switch`` rotates the candidate order so
    the previous string's angle is tried last (still deterministic).
    On exhaustion the partial configuration carries a failure marker
    instead of raising.
    """
    xi = to_fraction(xi)
    tau = to_fraction(tau) if tau is not None else sched.tau
    if xi <= 0 or xi >= 1:
        raise InvalidInput("margin exponent must lie in (0,1)")
    if depth < 0:
        raise InvalidInput("depth must be >= 0")
    if margin_policy not in ("require", "optional"):
        raise InvalidInput(f"unknown margin policy {margin_policy!r}")
    t2 = tau * tau
    t4 = t2 * t2
    tables = [deepest_table(a, 16) for a in angles]
    cfg = AlternatedConfig(strings=[], margins=[], margin_ok=[], xi=xi, tau=tau)
    if depth == 0:
        return cfg, tables

    def ensure_q(j: int, target_q: int) -> bool:
        while tables[j].q(len(tables[j])) < target_q:
            if len(tables[j]) >= table_depth_cap:
                return False
            deeper = deepest_table(angles[j], min(table_depth_cap, len(tables[j]) * 2))
            if len(deeper) <= len(tables[j]):
                return False
            tables[j] = deeper
        return True

    def ensure_rows(j: int, rows: int) -> bool:
        if len(tables[j]) >= rows:
            return True
        if rows > table_depth_cap:
            return False
        deeper = deepest_table(angles[j], rows)
        if len(deeper) >= rows:
            tables[j] = deeper
            return True
        return False

    def margin_for(j: int, l: int) -> Tuple[int, bool]:
        """Deepest reachable l' and whether it meets q_{l'} <= q_l^xi."""
        t = tables[j]
        lp = l
        while lp - 1 >= 1 and in_A_tau(t, lp - 1, tau):
            lp -= 1
        if lp == l:
            return l, t.q(l) == 1
        return lp, _pow_leq(t.q(lp), Fraction(1), t.q(l), xi)

    def grow_string(j: int, l: int, accept_short: bool) -> Optional[int]:
        """Smallest n with q_n >= q_l^(tau^4) reachable through members.

        With ``accept_short`` a run that breaks earlier (or hits the row
        cap) is still returned, provided it is nonempty.
        """
        target = pow_fraction_ceil_int(tables[j].q(l), t4)
        n = l
        while True:
            if n_cap is not None and n >= n_cap:
                return n if (accept_short or tables[j].q(n) >= target) and n > l else None
            if not ensure_rows(j, n + 1):
                return n if accept_short and n > l else None
            if tables[j].q(n) >= target:
                return n
            if not in_A_tau(tables[j], n, tau):
                return n if accept_short and n > l else None
            n += 1

    def angle_order(prev_j: Optional[int]) -> List[int]:
        order = list(range(len(angles)))
        if prefer_switch and prev_j is not None:
            order = order[prev_j + 1:] + order[:prev_j + 1]
        return order

    prev: Optional[DiophantineString] = None
    for i in range(depth):
        last_string = (i == depth - 1)
        if prev is None:
            candidates = [(j, l) for j in angle_order(None)
                          for l in range(2, 2 + start_candidates)]
        else:
            qn_prev = tables[prev.j].q(prev.n)
            w_lo = pow_fraction_ceil_int(qn_prev, 1 / t2)
            w_hi = pow_fraction_floor_int(qn_prev, 1 / tau)
            candidates = []
            for j in angle_order(prev.j):
                if not ensure_q(j, w_lo):
                    continue
                t = tables[j]
                ls = [l for l in range(1, len(t) + 1) if w_lo <= t.q(l) <= w_hi]
                candidates.extend((j, l) for l in ls[:start_candidates])
        placed = False
        for j, l in candidates:
            if not ensure_rows(j, l + 1):
                continue
            lp, margin_good = margin_for(j, l)
            if margin_policy == "require" and not margin_good:
                continue
            n = grow_string(j, l, accept_short=last_string)
            if n is None:
                continue
            st = DiophantineString(j=j, l=l, n=n, tau=tau)
            cfg.strings.append(st)
            cfg.margins.append(lp)
            cfg.margin_ok.append(margin_good)
            prev = st
            placed = True
            break
        if not placed:
            cfg.complete = False
            cfg.failure = (f"no admissible string at step {i}"
                           + ("" if prev is None else
                              f" in the window after q_n of string {i - 1}"))
            break

    if cfg.strings:
        cfg.validate(tables)
    return cfg, tables


# -- derived angle families -----------------------------------------------------------


def tilde_angles(base: Sequence[Angle], p: int, precision_bits: int = 256,
                 cf_depth: int = 64) -> List[Angle]:
    """Angles theta_1 + s theta_2 + ... + s^(d-1) theta_d mod 1, s = 1..p.

    Each combination is reduced mod 1 and its continued fraction recovered
    from exact rational enclosures; recovery deepens the base enclosures
    until ``cf_depth`` coefficients are certified.
    """
    if not base:
        raise InvalidInput("need at least one base angle")
    d = len(base)
    if p < d:
        raise InvalidInput(f"need p >= d = {d}")
    return [
        _combination_angle(base, [s ** e for e in range(d)], precision_bits,
                           cf_depth, name=f"tilde_{s}")
        for s in range(1, p + 1)
    ]


def combination_enclosure(base: Sequence[Angle], weights: Sequence[int],
                          bits: int) -> Enc:
    """Exact enclosure of sum_i w_i theta_i mod 1 at the requested width."""
    while True:
        enc = Enc(Fraction(0), Fraction(0))
        for a, w in zip(base, weights):
            enc = enc + a.enclosure(min_width_bits=bits + max(1, w).bit_length()).scale(w)
        try:
            return enc.mod1()
        except PrecisionExhausted:
            bits *= 2
            if bits > 1 << 20:
                raise


def _combination_angle(base: Sequence[Angle], weights: Sequence[int],
                       precision_bits: int, cf_depth: int, name: str) -> Angle:
    bits = max(precision_bits, 64)
    while True:
        frac = combination_enclosure(base, weights, bits)
        if frac.lo > 0 and frac.hi < 1:
            coeffs = cf_from_enclosure(frac, cf_depth)
            if len(coeffs) >= cf_depth:
                ang = Angle(coeffs[:cf_depth], tail=TailPolicy.reject(),
                            precision_bits=precision_bits, name=name)
                ang.freeze_prefix()
                return ang
        bits *= 2
        if bits > 1 << 20:
            raise PrecisionExhausted(
                f"continued-fraction recovery stalls for {name} at depth {cf_depth}")


def cf_from_enclosure(enc: Enc, max_depth: int) -> List[int]:
    """Certified partial quotients shared by every number inside the enclosure.

    Runs the Gauss map on both endpoints in exact rational arithmetic and
    emits digits while they agree.
    """
    coeffs: List[int] = []
    lo, hi = enc.lo, enc.hi
    if not (0 < lo and hi < 1):
        return coeffs
    while len(coeffs) < max_depth:
        if lo <= 0 or hi <= 0:
            break
        inv_lo, inv_hi = 1 / hi, 1 / lo
        a = inv_lo.__floor__()
        if a != inv_hi.__floor__() or inv_hi == a:
            break
        coeffs.append(int(a))
        lo, hi = inv_lo - a, inv_hi - a
    return coeffs
