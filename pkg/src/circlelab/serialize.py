"""Artifact writers: versioned JSON and CSV with deterministic content.

Every artifact carries the schema version, the hash of the generating
config, and the working precision, so a reader can refuse mismatched
inputs.  Big integers are written as strings (never floats), reals as
fixed-exponent decimal strings at a digit count derived from the working
precision; key order is sorted and no timestamps are embedded, which
makes outputs byte-identical across reruns and thread counts.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from fractions import Fraction
from typing import Dict, List, Optional, Sequence

from gmpy2 import mpfr

from .dynamics import DynamicsTrace, ResidualReport
from .conjugacy import ConjugacyEstimate, DeltaRow, GateReport
from .mpctx import working_precision

SCHEMA_VERSION = "circlelab/1"


def real_str(x, digits: Optional[int] = None) -> str:
    # the 'g' conversion is used because this gmpy2 build mishandles 'e'
    if digits is None:
        digits = int(working_precision() * 0.30103) + 2
    return format(mpfr(x), f".{digits}g")


def fraction_str(fr: Fraction) -> str:
    return f"{fr.numerator}/{fr.denominator}"


def config_hash(config_text: str) -> str:
    return hashlib.sha256(config_text.encode("utf-8")).hexdigest()[:16]


def meta_block(cfg_hash: str, extra: Optional[dict] = None) -> dict:
    meta = {
        "schema": SCHEMA_VERSION,
        "config_hash": cfg_hash,
        "precision_bits": working_precision(),
    }
    if extra:
        meta.update(extra)
    return meta


def dump_json(path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def csv_text(header: Sequence[str], rows: Sequence[Sequence[str]],
             meta: dict) -> str:
    buf = io.StringIO()
    for key in sorted(meta):
        buf.write(f"# {key}={meta[key]}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def write_csv(path, header, rows, meta) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(csv_text(header, rows, meta))


def trace_csv(trace: DynamicsTrace, cfg_hash: str) -> str:
    header = ["n", "q_n", "p_n", "theta_n", "M_n", "m_n", "U_n", "u_n", "certified"]
    rows = []
    for r in trace.rows:
        rows.append([
            str(r.n), str(r.q), str(r.p), real_str(r.theta.mpfr()),
            real_str(r.M), real_str(r.m), real_str(r.U), real_str(r.u),
            "1" if r.certified else "0",
        ])
    meta = meta_block(cfg_hash, {"map": trace.map_name, "angle": trace.angle_name,
                                 "kind": "dynamics-trace"})
    return csv_text(header, rows, meta)


def trace_json(trace: DynamicsTrace, cfg_hash: str,
               annotations: Optional[dict] = None) -> dict:
    return {
        "meta": meta_block(cfg_hash, {"map": trace.map_name,
                                      "angle": trace.angle_name,
                                      "kind": "dynamics-trace"}),
        "rows": [
            {
                "n": r.n, "q": str(r.q), "p": str(r.p),
                "theta": real_str(r.theta.mpfr()),
                "M": real_str(r.M), "m": real_str(r.m),
                "U": real_str(r.U), "u": real_str(r.u),
                "certified": r.certified,
            }
            for r in trace.rows
        ],
        "annotations": annotations or {},
    }


def residuals_json(rep: ResidualReport, cfg_hash: str) -> dict:
    return {
        "meta": meta_block(cfg_hash, {"kind": "recurrence-residuals", "K": rep.K}),
        "rows": [
            {"n": r.n, "c_upper": real_str(r.c_upper), "c_lower": real_str(r.c_lower)}
            for r in rep.rows
        ],
        "empirical_C": real_str(rep.empirical_C),
    }


def estimate_csv(est: ConjugacyEstimate, cfg_hash: str) -> str:
    header = ["x", "h_est"]
    rows = [[real_str(x), real_str(v)] for x, v in zip(est.xs, est.values)]
    meta = meta_block(cfg_hash, {"kind": "conjugacy-estimate", "label": est.label,
                                 "n_terms": est.n_terms,
                                 "sup_defect": real_str(est.sup_defect)})
    return csv_text(header, rows, meta)


def delta_rows_json(rows: Sequence[DeltaRow], k: int, cfg_hash: str) -> dict:
    return {
        "meta": meta_block(cfg_hash, {"kind": "delta-norms", "k": k}),
        "rows": [
            {
                "s": r.s, "q": str(r.q),
                "delta": real_str(r.delta),
                "sup_norm": real_str(r.sup_norm),
                "theta": real_str(r.theta),
                "bound": real_str(r.bound),
                "bound_ok": r.bound_ok,
                "certified": r.certified,
                "grid": r.grid_used,
            }
            for r in rows
        ],
    }


def gate_report_json(rep: GateReport, cfg_hash: str) -> dict:
    return {
        "meta": meta_block(cfg_hash, {"kind": "regularity-gates"}),
        "rho": real_str(rep.rho),
        "decay_slope": rep.decay_slope,
        "nu_fit": rep.nu_fit,
        "rows": [
            {
                "s": r.s, "q": str(r.q),
                "gate_small": r.gate_small,
                "lhs_log": real_str(r.lhs),
                "rhs_log": real_str(r.rhs),
                "norms": {str(a): real_str(v) for a, v in sorted(r.norms.items())},
                "fitted_C": real_str(r.fitted_C) if r.fitted_C is not None else None,
            }
            for r in rep.rows
        ],
    }
