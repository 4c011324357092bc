"""circlelab: a numerical laboratory for commuting circle diffeomorphisms.

The package is organized around the pipeline

    angles  ->  strings  ->  commuting family  ->  dynamics trace  ->  conjugacy

with exact continued-fraction arithmetic at the bottom (``arith``,
``strings``), truncated Taylor jets and circle-map evaluation in the
middle (``jets``, ``maps``), and the per-scale diagnostics on top
(``dynamics``, ``conjugacy``).  ``cli`` drives experiment configs into
CSV/JSON artifacts.
"""

from .mpctx import (
    BudgetExceeded,
    CertificationError,
    CircleLabError,
    CoefficientsExhausted,
    Enc,
    InvalidInput,
    PrecisionExhausted,
    set_working_precision,
    workprec,
)
from .arith import (
    Angle,
    ConvergentTable,
    ExponentSchedule,
    TailPolicy,
    angle_from_cf,
    convergents,
    exponent_schedule,
    golden_angle,
    sqrt2_angle,
)
from .strings import (
    AlternatedConfig,
    DiophantineString,
    d_set_member,
    extract_exceptions,
    find_alternated_config,
    find_string_covering,
    in_A_tau,
    tilde_angles,
)

__version__ = "0.1.0"
