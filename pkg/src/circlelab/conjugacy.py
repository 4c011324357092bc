"""Conjugacy estimation and the derivative-norm machinery at special times.

The conjugating map of a circle diffeomorphism to its rotation is
estimated by the rotation-compensated Birkhoff average
h_n(x) = (1/n) sum_{i<n} (lift^i(x) - i theta), normalized to vanish at 0.
The plain lift average drifts linearly (its mean displacement is i theta),
so the compensated form is what actually converges; the normalization
constant is fitted downstream, never assumed.

Special times are integers expressible as bounded multiples of in-string
denominators; averages restricted to those times, distribution gaps of
the associated orbit set, and the sup norms of D^(k-1) ln D(f^(q_s))
with their growth gates make up the rest of the module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import gmpy2
from gmpy2 import mpfr

from .arith import Angle, ConvergentTable
from .dynamics import DynamicsTrace
from .jets import ORDER_CAP
from .maps import CircleMap, MapNode, orbit_jet
from .mpctx import (
    BudgetExceeded,
    CertificationError,
    InvalidInput,
    working_precision,
)
from .strings import AlternatedConfig
from .arith import ExponentSchedule

DEFAULT_ENUM_BUDGET = 200_000


# -- special times -------------------------------------------------------------------


@dataclass
class DiophantineTimes:
    """Integers m = sum a_s q_s over in-string indices, a_s <= q_{s+1}/q_s."""

    role: str                          # label of the angle these times belong to
    bound: int
    members: List[int]
    decompositions: Dict[int, Tuple[Tuple[int, int], ...]]   # m -> ((s, a), ...)
    truncated: bool = False

    def __len__(self):
        return len(self.members)

    def validate(self, table: ConvergentTable) -> None:
        for m in self.members:
            terms = self.decompositions[m]
            if sum(a * table.q(s) for s, a in terms) != m:
                raise InvalidInput(f"decomposition of {m} does not add up")
            for s, a in terms:
                if a < 1 or a * table.q(s) > table.q(s + 1):
                    raise InvalidInput(f"multiplier {a} at index {s} out of range")


def diophantine_times(config: AlternatedConfig, table: ConvergentTable,
                      bound: int, angle_index: int = 0, role: str = "theta",
                      budget: int = DEFAULT_ENUM_BUDGET) -> DiophantineTimes:
    """Enumerate the special times of one angle up to ``bound``.

    Bounded-knapsack enumeration over the allowed (index, multiplier)
    pairs of that angle's strings, deduplicated and sorted; a blown budget
    returns what was found with the truncation flag set.
    """
    if bound < 0:
        raise InvalidInput("bound must be >= 0")
    pairs: List[Tuple[int, int]] = []      # (s, max multiplier)
    seen = set()
    for st in config.strings:
        if st.j != angle_index:
            continue
        for s in st.indices():
            if s in seen or s + 1 > len(table):
                continue
            seen.add(s)
            a_max = table.q(s + 1) // table.q(s)
            a_max = min(a_max, bound // table.q(s)) if table.q(s) <= bound else 0
            if a_max >= 1:
                pairs.append((s, a_max))
    pairs.sort(reverse=True)

    found: Dict[int, Tuple[Tuple[int, int], ...]] = {}
    truncated = False
    budget_left = [budget]

    def walk(i: int, total: int, parts: Tuple[Tuple[int, int], ...]):
        nonlocal truncated
        if budget_left[0] <= 0:
            truncated = True
            return
        budget_left[0] -= 1
        if total > 0 and total not in found:
            found[total] = parts
        if i >= len(pairs):
            return
        s, a_max = pairs[i]
        qs = table.q(s)
        walk(i + 1, total, parts)
        for a in range(1, a_max + 1):
            t = total + a * qs
            if t > bound:
                break
            walk(i + 1, t, parts + ((s, a),))

    walk(0, 0, ())
    members = sorted(found)
    return DiophantineTimes(role=role, bound=bound, members=members,
                            decompositions=found, truncated=truncated)


def orbit_density_gap(A: DiophantineTimes, A_tilde: DiophantineTimes,
                      theta: Angle, beta: Angle) -> Tuple[object, int]:
    """Largest circular gap of {u theta + v beta mod 1} over the two sets.

    An empty side contributes v = 0 (or u = 0), so the check degenerates
    gracefully to the one-angle orbit.  Returns (gap, point count).
    """
    us = A.members if A.members else [0]
    vs = A_tilde.members if A_tilde.members else [0]
    if us == [0] and vs == [0]:
        raise InvalidInput("both time sets are empty")
    tv = theta.value()
    bv = beta.value()
    pts = sorted(set(
        (u * tv + v * bv) % 1 for u in us for v in vs))
    gap = mpfr(0)
    for i in range(len(pts)):
        nxt = pts[(i + 1) % len(pts)] + (1 if i + 1 == len(pts) else 0)
        gap = max(gap, nxt - pts[i])
    return gap, len(pts)


# -- conjugacy estimates ---------------------------------------------------------------


@dataclass
class ConjugacyEstimate:
    xs: List
    values: List
    n_terms: int
    sup_defect: object
    label: str = ""

    def check_monotone(self) -> None:
        for i in range(len(self.xs) - 1):
            if not self.values[i + 1] > self.values[i]:
                raise CertificationError(
                    f"conjugacy estimate not increasing between grid points {i}, {i + 1}")

    def sample(self, i: int):
        return self.xs[i], self.values[i]


def cesaro_conjugacy(f: CircleMap, theta: Angle, n_terms: int, grid: int,
                     budget: int = 100_000_000) -> ConjugacyEstimate:
    """Rotation-compensated Birkhoff average of the orbit, normalized at 0.

    The defect sup_x |h(f(x)) - h(x) - theta| telescopes exactly to
    max over the grid of |lift^n(x) - x - n theta| / n, so it costs
    nothing beyond the sums themselves.
    """
    if n_terms < 1:
        raise InvalidInput("n_terms must be >= 1")
    if grid < 1:
        raise InvalidInput("grid must be >= 1")
    if n_terms * grid > budget:
        raise BudgetExceeded(f"{n_terms} terms on a {grid}-grid exceeds the budget")
    node = f.node
    tval = theta.value()
    step = mpfr(1) / grid
    xs = []
    raw = []
    defect = mpfr(0)
    x = mpfr(0)
    for _ in range(grid):
        y = mpfr(x)
        acc = mpfr(0)
        drift = mpfr(0)
        for _i in range(n_terms):
            acc += y - drift
            y = node.value(y)
            drift += tval
        xs.append(x)
        raw.append(acc / n_terms)
        d = abs(y - drift - x) / n_terms    # telescoped functional-equation defect
        if d > defect:
            defect = d
        x += step
    base = raw[0]
    values = [v - base for v in raw]
    est = ConjugacyEstimate(xs=xs, values=values, n_terms=n_terms,
                            sup_defect=defect, label=f"cesaro({f.name})")
    est.check_monotone()
    return est


def conjugacy_at_times(f: CircleMap, g: CircleMap,
                       A: DiophantineTimes, A_tilde: DiophantineTimes,
                       theta: Angle, beta: Angle, grid: int,
                       max_pairs: int = 512,
                       budget: int = 100_000_000) -> ConjugacyEstimate:
    """Average of lift^u(lift^v(x)) - u theta - v beta over special-time pairs.

    Pairs are taken smallest-first by u+v (deterministic) up to
    ``max_pairs``; the defect is measured directly on image points of f,
    at double cost but with no interpolation.
    """
    us = A.members if A.members else [0]
    vs = A_tilde.members if A_tilde.members else [0]
    pairs = sorted(((u, v) for u in us for v in vs),
                   key=lambda t: (t[0] + t[1], t[0]))[:max_pairs]
    if not pairs:
        raise InvalidInput("no time pairs to average over")
    work = sum(u + v for u, v in pairs)
    if work * grid * 2 > budget:
        raise BudgetExceeded("special-time average exceeds the orbit budget")
    tval = theta.value()
    bval = beta.value()
    fa, ga = f.node, g.node

    def h_at(x):
        acc = mpfr(0)
        by_v: Dict[int, object] = {}
        v_sorted = sorted(set(v for _, v in pairs))
        y = mpfr(x)
        last_v = 0
        for v in v_sorted:
            for _ in range(v - last_v):
                y = ga.value(y)
            last_v = v
            by_v[v] = y
        for u, v in pairs:
            z = by_v[v]
            for _ in range(u):
                z = fa.value(z)
            acc += z - u * tval - v * bval
        return acc / len(pairs)

    step = mpfr(1) / grid
    xs, raw = [], []
    x = mpfr(0)
    for _ in range(grid):
        xs.append(x)
        raw.append(h_at(x))
        x += step
    base = raw[0]
    values = [v - base for v in raw]
    defect = mpfr(0)
    x = mpfr(0)
    for i in range(grid):
        himg = h_at(fa.value(x)) - base
        d = abs(himg - values[i] - tval)
        if d > defect:
            defect = d
        x += step
    est = ConjugacyEstimate(xs=xs, values=values, n_terms=len(pairs),
                            sup_defect=defect, label=f"times({f.name},{g.name})")
    return est


# -- derivative norms at denominator times ------------------------------------------------


@dataclass
class DeltaRow:
    s: int
    q: int
    delta: object          # sup |D^(k-1) ln D f^(q_s)| + theta_s
    sup_norm: object       # the sup part alone
    theta: object
    bound: object          # q_s^((k-1)/2)
    bound_ok: bool
    certified: bool
    grid_used: int


def delta_norms(f: CircleMap, table: ConvergentTable, s_range: Sequence[int],
                k: int, grid: int, budget: int = 1 << 22,
                rel_tol_bits: int = 12) -> List[DeltaRow]:
    """Per-index derivative norms of the iterate logarithm with their bound.

    The sup over the circle of |D^(k-1) ln D f^(q_s)| is estimated on a
    doubling grid via jet-orbit accumulation; adding theta_s gives the row
    quantity, compared against q_s^((k-1)/2).  grid=1 degenerates to a
    single point and is flagged uncertified.
    """
    if k < 2:
        raise InvalidInput("k must be >= 2 (the norm differentiates at least once)")
    if k > ORDER_CAP:
        raise InvalidInput(f"k = {k} above the jet order cap {ORDER_CAP}")
    node = f.node
    fact = mpfr(gmpy2.fac(k - 1))
    out: List[DeltaRow] = []
    for s in s_range:
        row = table.row(s)
        q = row.q

        def sup_at(G: int) -> object:
            # L holds the Taylor coefficients of ln D f^q; index k-1 times
            # (k-1)! is the (k-1)-th derivative
            best = mpfr(0)
            x = mpfr(0)
            step = mpfr(1) / G
            for _ in range(G):
                _, L = orbit_jet(node, q, x, k, budget=budget)
                val = abs(L[k - 1]) * fact
                if val > best:
                    best = val
                x += step
            return best

        G = max(1, grid)
        sup = sup_at(G)
        certified = False
        if G > 1:
            rel_tol = mpfr(2) ** (-rel_tol_bits)
            while q * G * 2 <= budget:
                G *= 2
                nxt = sup_at(G)
                stable = abs(nxt - sup) <= rel_tol * max(nxt, mpfr(2) ** (-60))
                sup = max(sup, nxt)
                if stable:
                    certified = True
                    break
        theta_val = row.theta.mpfr()
        delta = sup + theta_val
        bound = mpfr(q) ** (mpfr(k - 1) / 2)
        out.append(DeltaRow(s=s, q=q, delta=delta, sup_norm=sup, theta=theta_val,
                            bound=bound, bound_ok=bool(delta <= bound),
                            certified=certified, grid_used=G))
    return out


# -- regularity gates ------------------------------------------------------------------------


@dataclass
class GateRow:
    s: int
    q: int
    gate_small: bool               # (delta_s q_{s+1})^(1/k) / q_s <= q_s^(-1/4)
    lhs: object
    rhs: object
    norms: Dict[int, object]       # a -> ||ln D f^(a q_s)||_{r+1}
    fitted_C: Optional[object]     # smallest C in ||...|| <= C q_s^-1 (delta q_{s+1})^rho


@dataclass
class GateReport:
    rows: List[GateRow]
    rho: object
    decay_slope: Optional[float]   # log-log slope of the norms against q_s
    nu_fit: Optional[float]

    def decay_ok(self) -> bool:
        return self.decay_slope is not None and self.decay_slope < 0


def _sup_norm_orders(node: MapNode, q: int, grid: int, max_order: int,
                     budget: int) -> Dict[int, object]:
    """sup over the grid of |D^j ln D f^q| for j = 1..max_order.

    Convention: order j means the j-th derivative of the iterate's
    logarithm-derivative, read from the log-jet coefficients.
    """
    sups = {j: mpfr(0) for j in range(1, max_order + 1)}
    x = mpfr(0)
    step = mpfr(1) / grid
    for _ in range(grid):
        _, L = orbit_jet(node, q, x, max_order + 1, budget=budget)
        for j in range(1, max_order + 1):
            val = abs(L[j]) * mpfr(gmpy2.fac(j))
            if val > sups[j]:
                sups[j] = val
        x += step
    return sups


def regularity_gate(delta_rows: Sequence[DeltaRow], table: ConvergentTable,
                    sched: ExponentSchedule, f: CircleMap, r: int, k: int,
                    grid: int = 64, a_policy: str = "endpoints",
                    budget: int = 1 << 22) -> GateReport:
    """Evaluate the smallness gate and the norm-growth law on sampled multiples.

    For each row s the gate compares (delta_s q_{s+1})^(1/k) q_s^-1 with
    q_s^(-1/4) exactly in logs; the norm law fits the smallest C with
    ||ln D f^(a q_s)||_{r+1} <= C q_s^-1 (delta_s q_{s+1})^rho over the
    sampled multiples a, and the norms' log-log slope against q_s is the
    reported decay exponent.  Multiples whose orbits exceed the budget are
    skipped rather than crashing the scan.
    """
    if a_policy not in ("endpoints", "one"):
        raise InvalidInput(f"unknown multiple-sampling policy {a_policy!r}")
    node = f.node
    rho = mpfr(r + 2) / k
    rows: List[GateRow] = []
    xs, ys = [], []
    for dr in delta_rows:
        s = dr.s
        q = dr.q
        q_next = table.q(s + 1) if s + 1 <= len(table) else None
        if q_next is None:
            continue
        # gate: delta * q_{s+1} <= q_s^(3k/4), compared in logs
        lhs = (gmpy2.log(dr.delta) + gmpy2.log(mpfr(q_next))) / k - gmpy2.log(mpfr(q))
        rhs = -gmpy2.log(mpfr(q)) / 4
        gate_ok = bool(lhs <= rhs)

        ratio = q_next // q
        if a_policy == "one" or ratio <= 1:
            a_samples = [1]
        else:
            a_samples = sorted({1, (ratio + 1) // 2, ratio})
        norms: Dict[int, object] = {}
        fitted = None
        for a in a_samples:
            if a * q * grid > budget:
                continue
            sups = _sup_norm_orders(node, a * q, grid, r + 1, budget)
            norm = max(sups.values())
            norms[a] = norm
            denom = (dr.delta * q_next) ** rho / q
            c = norm / denom
            if fitted is None or c > fitted:
                fitted = c
        rows.append(GateRow(s=s, q=q, gate_small=gate_ok, lhs=lhs, rhs=rhs,
                            norms=norms, fitted_C=fitted))
        if 1 in norms and norms[1] > 0:
            xs.append(math.log(q))
            ys.append(math.log(float(norms[1])))
    slope = None
    if len(xs) >= 2:
        n = len(xs)
        mx = sum(xs) / n
        my = sum(ys) / n
        den = sum((x - mx) ** 2 for x in xs)
        slope = sum((x - mx) * (y - my) for x, y in zip(xs, ys)) / den if den > 0 else None
    return GateReport(rows=rows, rho=rho,
                      decay_slope=slope,
                      nu_fit=(-slope if slope is not None else None))
