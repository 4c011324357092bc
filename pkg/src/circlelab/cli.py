"""Experiment driver: configs in, versioned CSV/JSON artifacts out.

Subcommands mirror the pipeline stages: ``angles`` writes convergent
tables and simultaneous-membership reports, ``strings`` the alternated
configuration, ``run`` the dynamics traces with their derived reports,
``conjugacy`` the estimate and derivative-norm gates; ``all`` chains the
four.  Exit codes: 0 success, 2 validation, 3 budget exhausted,
4 certification failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

from . import serialize
from .arith import Angle, ConvergentTable, convergents, deepest_table
from .config import ConfigError, ExperimentConfig, build_family, load_config
from .conjugacy import (
    cesaro_conjugacy,
    conjugacy_at_times,
    delta_norms,
    diophantine_times,
    orbit_density_gap,
    regularity_gate,
)
from .dynamics import (
    DynamicsTrace,
    build_trace,
    exponent_dynamics,
    local_criterion,
    transfer_check,
    yoccoz_residuals,
)
from .maps import CommutingFamily, commutation_defect
from .mpctx import (
    BudgetExceeded,
    CertificationError,
    CircleLabError,
    CoefficientsExhausted,
    InvalidInput,
    PrecisionExhausted,
    set_working_precision,
)
from .strings import AlternatedConfig, d_set_member, find_alternated_config, fit_largest_C

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_BUDGET = 3
EXIT_CERTIFICATION = 4


class Runner:
    def __init__(self, cfg: ExperimentConfig, out_dir: str):
        self.cfg = cfg
        self.out = out_dir
        self.cfg_hash = serialize.config_hash(cfg.text)
        self.written: List[str] = []
        os.makedirs(out_dir, exist_ok=True)

    # -- output helpers ---------------------------------------------------------

    def path(self, name: str) -> str:
        return os.path.join(self.out, name)

    def write_json(self, name: str, payload: dict) -> None:
        serialize.dump_json(self.path(name), payload)
        self.written.append(name)

    def write_text(self, name: str, text: str) -> None:
        with open(self.path(name), "w", encoding="utf-8") as fh:
            fh.write(text)
        self.written.append(name)

    def finish(self) -> None:
        files = {}
        for name in sorted(self.written):
            with open(self.path(name), "rb") as fh:
                files[name] = hashlib.sha256(fh.read()).hexdigest()
        serialize.dump_json(self.path("manifest.json"), {
            "meta": serialize.meta_block(self.cfg_hash, {"kind": "manifest"}),
            "files": files,
        })

    # -- shared construction ----------------------------------------------------

    def family_angles(self) -> List[Angle]:
        names = self.cfg.family_spec.get("angles")
        if names:
            return [self.cfg.angle(n) for n in names]
        if "angle" in self.cfg.family_spec:
            return [self.cfg.angle(self.cfg.family_spec["angle"])]
        return list(self.cfg.angles.values())

    def strings_config(self, angles: Sequence[Angle]) -> Tuple[AlternatedConfig, list]:
        opts = self.cfg.strings_opts
        return find_alternated_config(
            angles, self.cfg.schedule, self.cfg.xi,
            depth=int(self.cfg.depths.get("strings", 2)),
            tau=self.cfg.tau(),
            n_cap=(int(opts["n_cap"]) if opts.get("n_cap") is not None else None),
            prefer_switch=bool(opts.get("prefer_switch", False)),
            margin_policy=opts.get("margin_policy", "require"),
        )

    def family(self) -> CommutingFamily:
        return build_family(self.cfg)

    # -- subcommands -------------------------------------------------------------

    def cmd_angles(self) -> None:
        cfg = self.cfg
        if int(cfg.depths["table"]) < 1:
            print("warning: table depth 0 requested; writing empty tables",
                  file=sys.stderr)
            for name in cfg.angles:
                self.write_text(f"angle_{name}.csv", serialize.csv_text(
                    ["n", "a_n", "p_n", "q_n", "theta_n"], [],
                    serialize.meta_block(self.cfg_hash,
                                         {"kind": "convergent-table", "angle": name})))
            return
        tables: Dict[str, ConvergentTable] = {}
        for name, ang in cfg.angles.items():
            table = deepest_table(ang, int(cfg.depths["table"]))
            if len(table) < int(cfg.depths["table"]):
                print(f"note: angle {name} supports only depth {len(table)}",
                      file=sys.stderr)
            tables[name] = table
            payload = {"meta": serialize.meta_block(self.cfg_hash,
                                                    {"kind": "convergent-table"}),
                       "table": table.to_dict()}
            self.write_json(f"angle_{name}.json", payload)
            rows = [[str(r.n), str(r.a), str(r.p), str(r.q),
                     serialize.real_str(r.theta.mpfr())] for r in table.rows]
            self.write_text(f"angle_{name}.csv", serialize.csv_text(
                ["n", "a_n", "p_n", "q_n", "theta_n"], rows,
                serialize.meta_block(self.cfg_hash,
                                     {"kind": "convergent-table", "angle": name})))
        angs = list(cfg.angles.values())
        k_lo = int(cfg.dset["k_lo"])
        k_hi = int(cfg.dset["k_hi"])
        tau = Fraction(cfg.dset["tau"]) if "tau" in cfg.dset else cfg.schedule.nu
        fitted = fit_largest_C(angs, k_lo, k_hi, tau)
        ok, witness = d_set_member(angs, k_lo, k_hi, tau, fitted)
        self.write_json("dset_report.json", {
            "meta": serialize.meta_block(self.cfg_hash, {"kind": "dset-report"}),
            "k_range": [k_lo, k_hi],
            "tau": str(tau),
            "fitted_C": str(fitted),
            "fitted_C_float": float(fitted),
            "membership_with_fitted_C": ok,
            "witness": witness,
        })

    def cmd_strings(self) -> None:
        angles = self.family_angles()
        cfg_obj, tables = self.strings_config(angles)
        payload = {"meta": serialize.meta_block(self.cfg_hash,
                                                {"kind": "alternated-config"}),
                   "config": cfg_obj.to_dict()}
        A = cfg_obj.exponents(tables)
        payload["exponents"] = [float(a) for a in A]
        self.write_json("strings.json", payload)
        self.write_text("strings.txt", cfg_obj.summary(tables) + "\n")

    def _traces(self, fam: CommutingFamily) -> List[DynamicsTrace]:
        cfg = self.cfg
        qmax = int(cfg.budgets.get("trace_q_max", 5000))
        traces = []
        for mp, ang in zip(fam.maps, fam.rotation_numbers):
            table = deepest_table(ang, int(cfg.depths["table"]))
            depth = min(int(cfg.depths["trace"]), len(table))
            while depth > 1 and table.q(depth) > qmax:
                depth -= 1
            # rotation numbers were validated at family construction;
            # re-deriving them from orbits here would dominate the run
            tr = build_trace(mp, table, depth, int(cfg.grids["trace"]),
                             budget=int(cfg.budgets["extrema"]),
                             rel_tol_bits=int(cfg.grids.get("trace_rel_tol_bits", 16)),
                             threads=cfg.threads,
                             check_rotation=False,
                             rotation_budget=int(cfg.budgets["rotation_orbit"]))
            traces.append(tr)
        return traces

    def cmd_run(self) -> None:
        cfg = self.cfg
        fam = self.family()
        defect_report = {
            "meta": serialize.meta_block(self.cfg_hash, {"kind": "family"}),
            "provenance": fam.provenance,
            "maps": [m.name for m in fam.maps],
            "commutation_defect": serialize.real_str(fam.defect),
            "tolerance": serialize.real_str(fam.tolerance),
        }
        self.write_json("family.json", defect_report)
        traces = self._traces(fam)
        for tr in traces:
            self.write_text(f"trace_{tr.map_name}.csv",
                            serialize.trace_csv(tr, self.cfg_hash))
            self.write_json(f"trace_{tr.map_name}.json",
                            serialize.trace_json(tr, self.cfg_hash))
            rep = yoccoz_residuals(tr, cfg.yoccoz_K)
            self.write_json(f"residuals_{tr.map_name}.json",
                            serialize.residuals_json(rep, self.cfg_hash))

        angles = fam.rotation_numbers
        cfg_obj, tables = self.strings_config(angles)
        self.write_json("strings.json", {
            "meta": serialize.meta_block(self.cfg_hash, {"kind": "alternated-config"}),
            "config": cfg_obj.to_dict()})

        def row_feasible(st, need_end: bool) -> bool:
            tr = traces[st.j]
            if st.l - 1 < 1 or st.l - 1 > len(tr):
                return False
            if need_end and (st.n - 1 > len(tr) or st.n > len(tr.table)):
                return False
            return True

        if len(traces) >= 2 and len(cfg_obj.strings) >= 2:
            # a switch is checkable when the outgoing end row and the
            # incoming start row both sit inside their traces
            feasible = all(
                row_feasible(cfg_obj.strings[i], need_end=True)
                and row_feasible(cfg_obj.strings[i + 1], need_end=False)
                for i in range(len(cfg_obj.strings) - 1))
            if feasible:
                switches = transfer_check(traces[0], traces[1], cfg_obj)
                self.write_json("transfer.json", {
                    "meta": serialize.meta_block(self.cfg_hash,
                                                 {"kind": "transfer-report"}),
                    "switches": [
                        {
                            "index": s.index, "L": s.L,
                            "bounds": [s.bound_M_ok, s.bound_m_ok, s.bound_U_ok],
                            "margins": [serialize.real_str(s.margin_M),
                                        serialize.real_str(s.margin_m),
                                        serialize.real_str(s.margin_U)],
                            "degenerate": s.degenerate,
                        }
                        for s in switches
                    ],
                })
            else:
                self.write_json("transfer.json", {
                    "meta": serialize.meta_block(self.cfg_hash,
                                                 {"kind": "transfer-report"}),
                    "switches": [],
                    "note": "switch rows outside trace depth; deepen traces to check",
                })

        reachable = AlternatedConfig(
            strings=[st for st in cfg_obj.strings if row_feasible(st, need_end=True)],
            margins=[m for st, m in zip(cfg_obj.strings, cfg_obj.margins)
                     if row_feasible(st, need_end=True)],
            margin_ok=[ok for st, ok in zip(cfg_obj.strings, cfg_obj.margin_ok)
                       if row_feasible(st, need_end=True)],
            xi=cfg_obj.xi, tau=cfg_obj.tau)
        skipped = len(cfg_obj.strings) - len(reachable.strings)
        if reachable.strings:
            reports, dicho = exponent_dynamics(
                traces, reachable, cfg.effective_schedule(), cfg.schedule.b,
                slack=float(cfg.raw.get("exponent_slack", 1.0)))
            self.write_json("exponents.json", {
                "meta": serialize.meta_block(self.cfg_hash, {"kind": "exponent-dynamics"}),
                "skipped_strings": skipped,
                "strings": [
                    {"index": r.index, "angle": r.string.j,
                     "A": serialize.real_str(r.A),
                     "u_in": serialize.real_str(r.u_in),
                     "u_out": serialize.real_str(r.u_out),
                     "rho_bound": serialize.real_str(r.rho_bound),
                     "satisfied": r.satisfied,
                     "margin_logs": serialize.real_str(r.margin_logs)}
                    for r in reports
                ],
                "dichotomy": {str(k): v for k, v in dicho.per_angle.items()},
                "growing_angle": dicho.growing_angle,
            })
            local = local_criterion(traces, reachable, cfg.effective_schedule())
            self.write_json("local.json", {
                "meta": serialize.meta_block(self.cfg_hash, {"kind": "local-criterion"}),
                "skipped_strings": skipped,
                "first_index": local.first_index,
                "note": local.describe(),
                "rows": [
                    {"index": r.index, "lhs": serialize.real_str(r.lhs),
                     "rhs": serialize.real_str(r.rhs), "qualifies": r.qualifies}
                    for r in local.rows
                ],
            })

    def cmd_conjugacy(self) -> None:
        cfg = self.cfg
        fam = self.family()
        f = fam.maps[0]
        theta = fam.rotation_numbers[0]
        est = cesaro_conjugacy(f, theta, int(cfg.conjugacy["cesaro_terms"]),
                               int(cfg.grids["cesaro"]),
                               budget=int(cfg.budgets["orbit"]))
        self.write_text("cesaro.csv", serialize.estimate_csv(est, self.cfg_hash))

        table = deepest_table(theta, int(cfg.depths["table"]))
        k = int(cfg.conjugacy["k"])
        s_hi = int(cfg.conjugacy.get("delta_s_max", min(8, len(table) - 1)))
        s_hi = min(s_hi, len(table) - 1)
        rows = delta_norms(f, table, range(1, s_hi + 1), k,
                           int(cfg.grids["delta"]),
                           budget=int(cfg.budgets["extrema"]))
        self.write_json("delta.json", serialize.delta_rows_json(rows, k, self.cfg_hash))
        gates = regularity_gate(rows, table, cfg.effective_schedule(), f,
                                r=cfg.schedule.r, k=k,
                                grid=max(16, int(cfg.grids["delta"]) // 4),
                                budget=int(cfg.budgets["extrema"]))
        self.write_json("gates.json", serialize.gate_report_json(gates, self.cfg_hash))

        angles = fam.rotation_numbers
        cfg_obj, tables = self.strings_config(angles)
        bound = int(cfg.conjugacy["times_bound"])
        times0 = diophantine_times(cfg_obj, tables[0], bound, angle_index=0,
                                   role="theta",
                                   budget=int(cfg.budgets["enumeration"]))
        payload = {
            "meta": serialize.meta_block(self.cfg_hash, {"kind": "special-times"}),
            "theta": {"count": len(times0), "truncated": times0.truncated,
                      "members": [str(m) for m in times0.members[:2000]]},
        }
        if len(angles) >= 2:
            times1 = diophantine_times(cfg_obj, tables[1], bound, angle_index=1,
                                       role="beta",
                                       budget=int(cfg.budgets["enumeration"]))
            payload["beta"] = {"count": len(times1), "truncated": times1.truncated,
                               "members": [str(m) for m in times1.members[:2000]]}
            gap, npts = orbit_density_gap(times0, times1, angles[0], angles[1])
            payload["density"] = {"max_gap": serialize.real_str(gap), "points": npts}
            if times0.members or times1.members:
                g = fam.maps[1] if len(fam.maps) >= 2 else fam.maps[0]
                est2 = conjugacy_at_times(
                    f, g, times0, times1, angles[0], angles[1],
                    grid=int(cfg.conjugacy.get("times_grid", 32)),
                    max_pairs=int(cfg.conjugacy.get("times_pairs", 64)),
                    budget=int(cfg.budgets["orbit"]))
                self.write_text("cesaro_times.csv",
                                serialize.estimate_csv(est2, self.cfg_hash))
                payload["times_defect"] = serialize.real_str(est2.sup_defect)
                payload["plain_defect"] = serialize.real_str(est.sup_defect)
        self.write_json("times.json", payload)

    def run_command(self, command: str) -> None:
        steps = {
            "angles": [self.cmd_angles],
            "strings": [self.cmd_strings],
            "run": [self.cmd_run],
            "conjugacy": [self.cmd_conjugacy],
            "all": [self.cmd_angles, self.cmd_strings, self.cmd_run,
                    self.cmd_conjugacy],
        }
        if command not in steps:
            raise ConfigError("command", f"unknown subcommand {command!r}")
        for step in steps[command]:
            step()
        self.finish()


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="circlelab",
        description="numerical laboratory for commuting circle diffeomorphisms")
    ap.add_argument("command", choices=["angles", "strings", "run", "conjugacy", "all"])
    ap.add_argument("--config", required=True, help="experiment config (JSON)")
    ap.add_argument("--out", default=None, help="output directory")
    ap.add_argument("--precision", type=int, default=None, help="working precision bits")
    ap.add_argument("--depth", type=int, default=None, help="trace depth override")
    ap.add_argument("--budget", type=int, default=None, help="orbit budget override")
    ap.add_argument("--threads", type=int, default=None, help="worker thread count")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.precision is not None:
            cfg.precision_bits = args.precision
        if args.depth is not None:
            cfg.depths["trace"] = args.depth
        if args.budget is not None:
            cfg.budgets["orbit"] = args.budget
        if args.threads is not None:
            cfg.threads = args.threads
        set_working_precision(cfg.precision_bits)
        out_dir = args.out or cfg.out_dir
        Runner(cfg, out_dir).run_command(args.command)
        return EXIT_OK
    except (ConfigError, InvalidInput, CoefficientsExhausted, FileNotFoundError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except BudgetExceeded as exc:
        print(f"budget exhausted: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (CertificationError, PrecisionExhausted) as exc:
        print(f"certification failure: {exc}", file=sys.stderr)
        return EXIT_CERTIFICATION


if __name__ == "__main__":
    sys.exit(main())
