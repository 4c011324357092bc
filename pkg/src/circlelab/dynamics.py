"""Per-scale dynamics diagnostics of a circle map against its convergents.

For each best-approximation denominator q_n the trace records the extrema
M_n, m_n of the lift displacement |f^q(x) - x - p_n|, their ratio U_n and
the exponent u_n with M_n = theta_n^(u_n).  On top of the trace sit the
recurrence residuals (the empirical constant of the one-step inequality
system), the transfer inequalities across string switches of a commuting
pair, the exponent dynamics along strings, and the local criterion scan.

Extrema are estimated on a uniform grid, refined globally by doubling and
locally around candidate extrema; a row is certified when both refinements
stabilize inside the requested relative tolerance.  Uncertified rows stay
in the trace but are flagged, and every consumer that needs certified
input refuses to divide by an uncertified row.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import gmpy2
from gmpy2 import mpfr

from .arith import Angle, ConvergentTable
from .mpctx import (
    BudgetExceeded,
    CertificationError,
    Enc,
    InvalidInput,
    working_precision,
)
from .maps import CircleMap, MapNode, rotation_number
from .strings import AlternatedConfig, DiophantineString
from .arith import ExponentSchedule

DEFAULT_EXTREMA_BUDGET = 1 << 22
DEFAULT_REL_TOL_BITS = 16


@dataclass
class ExtremaResult:
    M: object
    m: object
    certified: bool
    grid_used: int
    evals: int
    df_dev_estimate: object   # max |Df^q - 1| seen on the grid


def _displacement_fn(node: MapNode, q: int, p: int) -> Callable:
    def disp(x):
        y = mpfr(x)
        for _ in range(q):
            y = node.value(y)
        return y - x - p
    return disp


def _df_deviation(node: MapNode, q: int, x):
    """|D(f^q)(x) - 1| at one point, by the derivative product."""
    y = mpfr(x)
    dprod = mpfr(1)
    for _ in range(q):
        y, dy = node.value_df(y)
        dprod *= dy
    return abs(dprod - 1)


def _local_refine(disp, x_lo, x_hi, want_max: bool, rounds: int):
    """Ternary-style refinement of one extremum bracket; returns (value, evals)."""
    evals = 0
    best = None
    for _ in range(rounds):
        step = (x_hi - x_lo) / 5
        xs = [x_lo + step, x_lo + 2 * step, x_lo + 3 * step, x_lo + 4 * step]
        vals = [abs(disp(x)) for x in xs]
        evals += 4
        idx = max(range(4), key=lambda i: vals[i]) if want_max else \
            min(range(4), key=lambda i: vals[i])
        cand = vals[idx]
        if best is None or (cand > best if want_max else cand < best):
            best = cand
        x_lo = xs[idx] - step
        x_hi = xs[idx] + step
    return best, evals


def displacement_extrema(f: CircleMap | MapNode, q: int, p: int, grid: int,
                         budget: int = DEFAULT_EXTREMA_BUDGET,
                         rel_tol_bits: int = DEFAULT_REL_TOL_BITS,
                         refine_rounds: int = 12,
                         candidates: int = 2) -> ExtremaResult:
    """Certified-by-stabilization extrema of |lift^q(x) - x - p| over the circle.

    The uniform grid doubles until both extrema are stable to the relative
    tolerance, then local extremum brackets are polished; quadratic
    behavior at an interior extremum makes the polish converge far faster
    than global refinement would.  When the evaluation budget runs out
    first, the result is returned with the certified flag down, never
    silently.
    """
    node = f.node if isinstance(f, CircleMap) else f
    if grid < 2:
        raise InvalidInput("grid must be >= 2")
    if q < 0:
        raise InvalidInput("q must be >= 0")
    if q == 0:
        return ExtremaResult(mpfr(0), mpfr(0), True, grid, 0, mpfr(0))
    disp = _displacement_fn(node, q, p)
    rel_tol = mpfr(2) ** (-rel_tol_bits)
    tiny = mpfr(2) ** (-working_precision())

    evals = 0
    G = grid
    prevM = prevm = None
    values: List = []
    while True:
        if evals + q * G > budget:
            return ExtremaResult(
                prevM if prevM is not None else mpfr("nan"),
                prevm if prevm is not None else mpfr("nan"),
                False, G, evals, mpfr("nan"))
        step = mpfr(1) / G
        values = []
        x = mpfr(0)
        for _ in range(G):
            values.append(abs(disp(x)))
            x += step
        evals += q * G
        M = max(values)
        m = min(values)
        if prevM is not None and abs(M - prevM) <= rel_tol * M and \
           abs(m - prevm) <= rel_tol * max(m, tiny):
            break
        prevM, prevm = M, m
        G *= 2
    grid_stable = True

    # local polish around the best few maxima and minima
    step = mpfr(1) / G
    order_max = sorted(range(G), key=lambda i: values[i], reverse=True)[:candidates]
    order_min = sorted(range(G), key=lambda i: values[i])[:candidates]
    M, m = max(values), min(values)
    for idx_list, want_max in ((order_max, True), (order_min, False)):
        for i in idx_list:
            lo = (i - 1) * step
            hi = (i + 1) * step
            if evals + 4 * refine_rounds * q > budget:
                grid_stable = False
                break
            val, used = _local_refine(disp, lo, hi, want_max, refine_rounds)
            evals += used * q
            if want_max and val > M:
                M = val
            if not want_max and val < m:
                m = val
    df_dev = _df_deviation(node, q, mpfr("0.375"))
    evals += q
    return ExtremaResult(M, m, grid_stable, G, evals, df_dev)


# -- traces ---------------------------------------------------------------------------


@dataclass
class TraceRow:
    n: int
    q: int
    p: int
    theta: Enc
    M: object
    m: object
    U: object
    u: object
    certified: bool


@dataclass
class DynamicsTrace:
    """Rows of per-denominator displacement statistics for one map.

    The backing convergent table is kept so consumers can read q_n and
    theta_n beyond the trace depth (e.g. at a string end whose orbit is
    out of budget) without computing displacement rows there.
    """

    map_name: str
    angle_name: str
    rows: List[TraceRow]
    table: ConvergentTable
    rel_tol_bits: int = DEFAULT_REL_TOL_BITS

    def q_at(self, n: int) -> int:
        return self.table.q(n)

    def row(self, n: int) -> TraceRow:
        if not 1 <= n <= len(self.rows):
            raise InvalidInput(f"trace row {n} outside depth {len(self.rows)}")
        return self.rows[n - 1]

    def __len__(self):
        return len(self.rows)

    def check_sandwich(self) -> None:
        """m_n <= theta_n <= M_n on certified rows, with measurement slack."""
        slack = 1 + mpfr(2) ** (-self.rel_tol_bits + 2)
        for r in self.rows:
            if not r.certified:
                continue
            tlo = mpfr(r.theta.lo.numerator) / r.theta.lo.denominator
            thi = mpfr(r.theta.hi.numerator) / r.theta.hi.denominator
            if r.m > thi * slack or r.M * slack < tlo:
                raise CertificationError(
                    f"extrema sandwich fails at row {r.n}: "
                    f"m={format(r.m, '.6g')} theta~{format(thi, '.6g')} M={format(r.M, '.6g')}")


def build_trace(f: CircleMap, table: ConvergentTable, depth: int, grid: int,
                budget: int = DEFAULT_EXTREMA_BUDGET,
                rel_tol_bits: int = DEFAULT_REL_TOL_BITS,
                threads: int = 1,
                check_rotation: bool = True,
                rotation_budget: int = 200_000) -> DynamicsTrace:
    """Per-row displacement statistics of f against the angle's convergents."""
    if depth < 1 or depth > len(table):
        raise InvalidInput(f"depth {depth} outside table depth {len(table)}")
    if check_rotation:
        rho, enc = rotation_number(f, table_depth=min(8, depth),
                                   orbit_budget=rotation_budget)
        ang_enc = table.angle.enclosure(min_width_bits=64)
        if enc.disjoint_from(ang_enc):
            raise CertificationError(
                f"rotation number of {f.name or 'map'} disagrees with the table's angle")

    bits = working_precision()

    def compute_row(n: int) -> TraceRow:
        from .mpctx import set_working_precision
        set_working_precision(bits)
        r = table.row(n)
        ex = displacement_extrema(f, r.q, r.p, grid, budget=budget,
                                  rel_tol_bits=rel_tol_bits)
        theta_mid = r.theta.mpfr()
        lnM = gmpy2.log(ex.M) if ex.M > 0 else mpfr("-inf")
        u = lnM / gmpy2.log(theta_mid)
        U = ex.M / ex.m if ex.m > 0 else mpfr("inf")
        return TraceRow(n=n, q=r.q, p=r.p, theta=r.theta, M=ex.M, m=ex.m,
                        U=U, u=u, certified=ex.certified)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(compute_row, range(1, depth + 1)))
    else:
        rows = [compute_row(n) for n in range(1, depth + 1)]
    trace = DynamicsTrace(map_name=f.name, angle_name=table.angle.name, rows=rows,
                          table=table, rel_tol_bits=rel_tol_bits)
    trace.check_sandwich()
    return trace


# -- recurrence residuals ----------------------------------------------------------------


@dataclass
class ResidualRow:
    n: int
    c_upper: object    # smallest admissible constant in the M-inequality
    c_lower: object    # smallest admissible constant in the m-inequality


@dataclass
class ResidualReport:
    K: int
    rows: List[ResidualRow]
    empirical_C: object

    def running_max(self) -> List:
        out = []
        cur = mpfr(0)
        for r in self.rows:
            cur = max(cur, r.c_upper, r.c_lower)
            out.append(cur)
        return out


def yoccoz_residuals(trace: DynamicsTrace, K: int) -> ResidualReport:
    """Smallest per-step constants making the one-step recurrence inequalities
    hold, and their running maximum (the empirical C of the map at this K).

    Refuses uncertified rows: the division by m and the powers of M amplify
    grid noise beyond anything the flag could excuse.
    """
    if K < 1:
        raise InvalidInput("K must be >= 1")
    rows = []
    for n in range(2, len(trace) + 1):
        prev = trace.row(n - 1)
        cur = trace.row(n)
        if not (prev.certified and cur.certified):
            raise CertificationError(f"residuals need certified rows {n - 1}, {n}")
        ratio = cur.theta.mpfr() / prev.theta.mpfr()
        Mp = prev.M
        sq = gmpy2.sqrt(Mp)
        num_up = cur.M - prev.M * ratio
        den_up = Mp ** (K + 1) + cur.M * sq
        c_up = max(mpfr(0), num_up / den_up)
        num_lo = prev.m * ratio - cur.m
        den_lo = cur.m * sq + prev.m * Mp ** K
        c_lo = max(mpfr(0), num_lo / den_lo)
        rows.append(ResidualRow(n=n, c_upper=c_up, c_lower=c_lo))
    emp = mpfr(0)
    for r in rows:
        emp = max(emp, r.c_upper, r.c_lower)
    return ResidualReport(K=K, rows=rows, empirical_C=emp)


# -- transfer inequalities across string switches ------------------------------------------


@dataclass
class SwitchReport:
    index: int
    from_string: DiophantineString
    to_string: DiophantineString
    L: int
    bound_M_ok: bool
    bound_m_ok: bool
    bound_U_ok: bool
    margin_M: object
    margin_m: object
    margin_U: object
    degenerate: bool = False


def _ratio_floor(num: Enc, den: Enc) -> int:
    """floor of the enclosed ratio; requires the enclosure not to straddle."""
    lo = num.lo / den.hi
    hi = num.hi / den.lo
    fl = lo.__floor__()
    if hi.__floor__() != fl and hi != fl + 1:
        raise CertificationError(
            "transfer ratio enclosure straddles an integer; deepen the tables")
    return int(fl)


def transfer_check(f_trace: DynamicsTrace, g_trace: DynamicsTrace,
                   config: AlternatedConfig) -> List[SwitchReport]:
    """Commutation transfer inequalities at every switch of the configuration.

    At switch i with L = floor(beta_{l'-1} / theta_{n-1}) the displacement
    extrema of the incoming map at row l_{i+1}-1 are bounded by the
    outgoing map's at row n_i - 1:

        M~ <= (1+L) M        m~ >= L m        U~ <= (1 + 1/L) U

    Margins are rhs - lhs (so nonnegative means the bound holds).
    """
    traces = (f_trace, g_trace)
    out: List[SwitchReport] = []
    for i in range(len(config.strings) - 1):
        cur = config.strings[i]
        nxt = config.strings[i + 1]
        tr_cur = traces[cur.j]
        tr_nxt = traces[nxt.j]
        n_row = cur.n - 1
        l_row = nxt.l - 1
        if n_row < 1 or l_row < 1:
            raise InvalidInput(f"switch {i} needs rows before the string boundaries")
        if n_row > len(tr_cur) or l_row > len(tr_nxt):
            raise InvalidInput(f"switch {i} indices outside trace depth")
        a = tr_cur.row(n_row)
        b = tr_nxt.row(l_row)
        if not (a.certified and b.certified):
            raise CertificationError(f"switch {i} touches uncertified rows")
        L = _ratio_floor(b.theta, a.theta)
        if L < 1:
            out.append(SwitchReport(i, cur, nxt, L, True, True, True,
                                    mpfr(0), mpfr(0), mpfr(0), degenerate=True))
            continue
        rhs_M = (1 + L) * a.M
        rhs_m = L * a.m
        rhs_U = (1 + mpfr(1) / L) * a.U
        out.append(SwitchReport(
            index=i, from_string=cur, to_string=nxt, L=L,
            bound_M_ok=b.M <= rhs_M,
            bound_m_ok=b.m >= rhs_m,
            bound_U_ok=b.U <= rhs_U,
            margin_M=rhs_M - b.M,
            margin_m=b.m - rhs_m,
            margin_U=rhs_U - b.U,
        ))
    return out


# -- exponent dynamics along strings ----------------------------------------------------


@dataclass
class StringExponentReport:
    index: int
    string: DiophantineString
    A: object
    u_in: object
    u_out: object
    rho_bound: object
    satisfied: bool
    margin_logs: object


@dataclass
class DichotomyReport:
    """Running products of squared growth exponents, one angle against the rest."""

    per_angle: Dict[int, List[float]]
    growing_angle: Optional[int]


def exponent_dynamics(traces: Sequence[DynamicsTrace], config: AlternatedConfig,
                      sched: ExponentSchedule, b: int,
                      slack: float = 1.0) -> Tuple[List[StringExponentReport], DichotomyReport]:
    """Exponent bookkeeping along each string plus the dichotomy statistic.

    For a string [l, n-1] with growth A (q_n = q_l^A), entering exponent
    u_in (M_{l-1} = q_l^-u_in) and predicted floor
    rho = min(1 - sigma, A^b u_in), the report states whether the exit
    bound M_{n-1} <= slack * q_n^-rho held.  ``slack`` > 1 grants the
    finite-scale allowance of a conjugacy's derivative oscillation.
    """
    sigma = mpfr(sched.sigma.numerator) / sched.sigma.denominator
    reports: List[StringExponentReport] = []
    for i, st in enumerate(config.strings):
        tr = traces[st.j]
        if st.l - 1 < 1 or st.n - 1 > len(tr) or st.n > len(tr.table):
            raise InvalidInput(f"string {i} outside trace depth")
        row_in = tr.row(st.l - 1)
        row_out = tr.row(st.n - 1)
        if not (row_in.certified and row_out.certified):
            raise CertificationError(f"string {i} touches uncertified rows")
        q_l = mpfr(tr.q_at(st.l))
        q_n = mpfr(tr.q_at(st.n))
        A = gmpy2.log(q_n) / gmpy2.log(q_l)
        u_in = -gmpy2.log(row_in.M) / gmpy2.log(q_l)
        u_out = -gmpy2.log(row_out.M) / gmpy2.log(q_n)
        rho = min(1 - sigma, (A ** b) * u_in)
        lhs = gmpy2.log(row_out.M)
        rhs = gmpy2.log(mpfr(slack)) - rho * gmpy2.log(q_n)
        reports.append(StringExponentReport(
            index=i, string=st, A=A, u_in=u_in, u_out=u_out, rho_bound=rho,
            satisfied=bool(lhs <= rhs), margin_logs=rhs - lhs))

    angles = sorted({st.j for st in config.strings})
    per_angle: Dict[int, List[float]] = {}
    growing = None
    p_plus_1 = len(angles) + 1
    for k in angles:
        seq = []
        log_num = 0.0
        log_den = 0.0
        for r in reports:
            if r.string.j == k:
                log_num += p_plus_1 * math.log(float(r.A))
            else:
                log_den += math.log(float(r.A))
            seq.append(log_num - log_den)
        per_angle[k] = seq
        if len(seq) >= 2 and seq[-1] > seq[0] and (growing is None):
            growing = k
    return reports, DichotomyReport(per_angle=per_angle, growing_angle=growing)


# -- local criterion ------------------------------------------------------------------------


@dataclass
class LocalCriterionRow:
    index: int
    string: DiophantineString
    lhs: object           # M_{n_i - 1}
    rhs: object           # q_{n_i}^-(1-sigma)
    qualifies: bool


@dataclass
class LocalCriterionReport:
    rows: List[LocalCriterionRow]
    first_index: Optional[int]

    def describe(self) -> str:
        if self.first_index is None:
            return ("no string end meets the smallness gate; the bounded-ratio "
                    "regime is not yet reachable from this data")
        return (f"string {self.first_index} meets the smallness gate; past this "
                f"scale the bounded-ratio regime propagates along the chain")


def local_criterion(traces: Sequence[DynamicsTrace], config: AlternatedConfig,
                    sched: ExponentSchedule) -> LocalCriterionReport:
    """First string end with M_{n-1} <= q_n^-(1-sigma), with margins per string."""
    sigma = sched.sigma
    rows: List[LocalCriterionRow] = []
    first = None
    for i, st in enumerate(config.strings):
        tr = traces[st.j]
        if st.n - 1 < 1 or st.n - 1 > len(tr) or st.n > len(tr.table):
            raise InvalidInput(f"string {i} outside trace depth")
        row = tr.row(st.n - 1)
        if not row.certified:
            raise CertificationError(f"local criterion needs certified row {st.n - 1}")
        q_n = mpfr(tr.q_at(st.n))
        expo = mpfr(sigma.numerator) / sigma.denominator - 1
        rhs = q_n ** expo
        ok = bool(row.M <= rhs)
        rows.append(LocalCriterionRow(index=i, string=st, lhs=row.M, rhs=rhs,
                                      qualifies=ok))
        if ok and first is None:
            first = i
    return LocalCriterionReport(rows=rows, first_index=first)
