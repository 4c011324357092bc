"""Experiment configuration: parsing, validation, and object construction.

Configs are JSON with every number that feeds exact arithmetic written as
a string ("1/20", "0.05", "3"), so no value is mangled through binary
floats on its way into the exact layer.  Validation failures carry the
offending field path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Tuple

from gmpy2 import mpfr

from .arith import Angle, ExponentSchedule, TailPolicy, angle_from_cf, exponent_schedule
from .maps import (
    CircleMap,
    CommutingFamily,
    Compose,
    Inverse,
    MapNode,
    Rotation,
    TrigPoly,
    family_tolerance,
    liouville_schedule,
    make_conjugated_rotations,
    make_liouville_family,
    make_tilde_family,
)
from .mpctx import InvalidInput, to_fraction

CONFIG_SCHEMA = "circlelab.config/1"


class ConfigError(InvalidInput):
    """Validation failure with a field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _need(d: dict, key: str, path: str):
    if key not in d:
        raise ConfigError(f"{path}.{key}", "missing required field")
    return d[key]


@dataclass
class ExperimentConfig:
    raw: dict
    text: str
    precision_bits: int
    seed: int
    out_dir: str
    threads: int
    angles: Dict[str, Angle]
    schedule: ExponentSchedule
    xi: Fraction
    tau_override: Optional[Fraction]
    family_spec: dict
    depths: dict
    budgets: dict
    grids: dict
    dset: dict
    conjugacy: dict
    yoccoz_K: int
    strings_opts: dict

    def angle(self, name: str) -> Angle:
        if name not in self.angles:
            raise ConfigError(f"angles.{name}", "referenced angle is not defined")
        return self.angles[name]

    def tau(self) -> Fraction:
        return self.tau_override if self.tau_override is not None else self.schedule.tau

    def effective_schedule(self) -> ExponentSchedule:
        """Schedule with tau-derived constants recomputed under the override.

        The canonical schedule keeps the recurrence-derived tau; an
        override changes the string exponent, so sigma and the dependent
        integer constants follow it while the nu-derived fields stay.
        """
        if self.tau_override is None:
            return self.schedule
        s = self.schedule
        tau = self.tau_override
        return ExponentSchedule(
            nu=s.nu, d=s.d, r=s.r, b=s.b, window_K=s.window_K,
            tau=tau,
            sigma=Fraction(1, 2) / (tau * tau),
            epsilon=s.epsilon, eta=s.eta, N=s.N,
            k_reg=int((s.r + 2) * (2 + tau)) + 2,
            K_tilde=2 * int(tau ** (4 * s.b + 1)),
            K_yoccoz=int(4 * tau * (2 * int(tau ** (4 * s.b + 1)))),
        )


def _parse_angle(name: str, spec: dict) -> Angle:
    path = f"angles.{name}"
    cf = _need(spec, "cf", path)
    if not isinstance(cf, list) or not cf:
        raise ConfigError(f"{path}.cf", "need a nonempty list of partial quotients")
    tail_spec = spec.get("tail", {"kind": "reject"})
    kind = tail_spec.get("kind", "reject")
    try:
        tail = TailPolicy(kind, tuple(int(a) for a in tail_spec.get("data", ())))
        return angle_from_cf([int(a) for a in cf], tail,
                             precision_bits=int(spec.get("precision_bits", 256)),
                             name=name)
    except InvalidInput as exc:
        raise ConfigError(path, str(exc)) from exc


def load_config(path: str) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}", f"invalid JSON: {exc.msg}") from exc
    return parse_config(raw, text)


def parse_config(raw: dict, text: str = "") -> ExperimentConfig:
    if raw.get("schema") != CONFIG_SCHEMA:
        raise ConfigError("schema", f"expected {CONFIG_SCHEMA!r}, got {raw.get('schema')!r}")
    precision = int(raw.get("precision_bits", 256))
    if precision < 8:
        raise ConfigError("precision_bits", "must be >= 8")

    angles = {name: _parse_angle(name, spec)
              for name, spec in _need(raw, "angles", "config").items()}

    sch_raw = _need(raw, "schedule", "config")
    try:
        schedule = exponent_schedule(
            to_fraction(_need(sch_raw, "nu", "schedule")),
            int(_need(sch_raw, "d", "schedule")),
            int(_need(sch_raw, "r", "schedule")),
            int(_need(sch_raw, "b", "schedule")),
            window_K=to_fraction(sch_raw.get("window_K", 2)),
        )
    except InvalidInput as exc:
        raise ConfigError("schedule", str(exc)) from exc
    xi = to_fraction(sch_raw.get("xi", "1/2"))
    tau_override = (to_fraction(sch_raw["tau_override"])
                    if sch_raw.get("tau_override") is not None else None)

    family_spec = _need(raw, "family", "config")
    if "kind" not in family_spec:
        raise ConfigError("family.kind", "missing required field")

    depths = dict(raw.get("depths", {}))
    depths.setdefault("table", 20)
    depths.setdefault("trace", 8)
    depths.setdefault("strings", 2)
    budgets = dict(raw.get("budgets", {}))
    budgets.setdefault("orbit", 100_000_000)
    budgets.setdefault("extrema", 1 << 22)
    budgets.setdefault("enumeration", 100_000)
    budgets.setdefault("rotation_orbit", 200_000)
    budgets.setdefault("trace_q_max", 5000)
    grids = dict(raw.get("grids", {}))
    grids.setdefault("trace", 128)
    grids.setdefault("commutation", 1000)
    grids.setdefault("cesaro", 192)
    grids.setdefault("delta", 64)
    for section, vals in (("depths", depths), ("budgets", budgets), ("grids", grids)):
        for k, v in vals.items():
            if int(v) < 0 or (section != "depths" and int(v) == 0):
                raise ConfigError(f"{section}.{k}", "must be positive")
    dset = dict(raw.get("dset", {}))
    dset.setdefault("k_lo", 1)
    dset.setdefault("k_hi", 1000)
    conj = dict(raw.get("conjugacy", {}))
    conj.setdefault("cesaro_terms", 10_000)
    conj.setdefault("k", 4)
    conj.setdefault("times_bound", "200")
    strings_opts = dict(raw.get("strings", {}))

    for name in family_spec.get("angles", []):
        if name not in angles:
            raise ConfigError("family.angles", f"angle {name!r} is not defined")

    return ExperimentConfig(
        raw=raw, text=text or json.dumps(raw, sort_keys=True),
        precision_bits=precision,
        seed=int(raw.get("seed", 0)),
        out_dir=raw.get("out_dir", "out"),
        threads=int(raw.get("threads", 1)),
        angles=angles, schedule=schedule, xi=xi, tau_override=tau_override,
        family_spec=family_spec, depths=depths, budgets=budgets, grids=grids,
        dset=dset, conjugacy=conj, yoccoz_K=int(raw.get("yoccoz_K", 4)),
        strings_opts=strings_opts,
    )


def _trig_from_spec(spec: dict, path: str) -> TrigPoly:
    terms = spec.get("trig", [])
    try:
        return TrigPoly([(int(t[0]), t[1], t[2]) for t in terms])
    except (InvalidInput, IndexError, TypeError) as exc:
        raise ConfigError(path, f"bad trig terms: {exc}") from exc


def build_family(cfg: ExperimentConfig) -> CommutingFamily:
    """Construct the commuting family the config describes."""
    spec = cfg.family_spec
    kind = spec["kind"]
    if kind == "pure_rotations":
        names = _need(spec, "angles", "family")
        angs = [cfg.angle(n) for n in names]
        maps = [CircleMap(Rotation(a), name=f"rot_{a.name}") for a in angs]
        fam = CommutingFamily(maps, angs, provenance="conjugated-rotations")
        fam.defect = mpfr(0)
        fam.tolerance = family_tolerance()
        return fam
    if kind == "conjugated_rotations":
        h = _trig_from_spec(_need(spec, "h", "family"), "family.h")
        names = _need(spec, "angles", "family")
        angs = [cfg.angle(n) for n in names]
        return make_conjugated_rotations(h, angs,
                                         defect_grid=int(cfg.grids.get("commutation", 1000)))
    if kind == "tilde":
        base_spec = dict(spec)
        base_spec["kind"] = "conjugated_rotations"
        base_cfg = cfg
        base = build_family_from(base_cfg, base_spec)
        return make_tilde_family(base, int(_need(spec, "p", "family")),
                                 rotation_budget=int(cfg.budgets["rotation_orbit"]))
    if kind == "liouville":
        name = _need(spec, "angle", "family")
        ang = cfg.angle(name)
        stages = int(spec.get("stages", 3))
        if "schedule" in spec:
            sched = [(int(t[0]), t[1], t[2]) for t in spec["schedule"]]
        else:
            burst_row = int(_need(spec, "burst_row", "family"))
            from .arith import convergents
            table = convergents(ang, burst_row)
            sched = liouville_schedule(table.q(burst_row), stages,
                                       base_factor=int(spec.get("base_factor", 8)))
        return make_liouville_family(ang, sched, stages)
    raise ConfigError("family.kind", f"unknown family kind {kind!r}")


def build_family_from(cfg: ExperimentConfig, spec: dict) -> CommutingFamily:
    saved = cfg.family_spec
    cfg.family_spec = spec
    try:
        return build_family(cfg)
    finally:
        cfg.family_spec = saved
