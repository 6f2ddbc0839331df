"""Lookup-table data model, synthetic table generation, and the accuracy
metrics used to compare a trained network against its table.

The real collision-avoidance table is not redistributable, so the toolkit
ships a documented synthetic replacement: the grid matches the published
axis scheme (the nonuniform range axis is a documented stand-in with the
same span and cardinality) and the scores come from a fixed analytic
formula, so generation is deterministic and needs no data files.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .quantize import (
    ExplicitAxis,
    QuantScheme,
    SchemeFormatError,
    UniformAxis,
    axis_from_line,
    axis_to_line,
)

# Synthetic range axis (meters): 32 nonuniform values spanning 0..56000,
# denser near zero, with exactly five values inside [2000, 7000].
RHO_VALUES = (
    0, 50, 100, 200, 300, 400, 500, 600, 700, 800, 900, 1000,
    1200, 1400, 1700, 2000, 2600, 3300, 4200, 5300, 7100, 8500,
    10700, 13500, 17000, 21400, 27000, 34000, 39000, 44000, 50000, 56000,
)

SPEED_VALUES = (50.0, 100.0, 150.0, 200.0)

# Per-action heading offsets (radians): no turn, weak left/right,
# strong left/right.
TURN_OFFSETS = np.array([0.0, 0.35, -0.35, 1.05, -1.05])

NUM_ACTIONS = 5


def make_cas_scheme() -> QuantScheme:
    """Quantization grid of the horizontal collision-avoidance inputs:
    range, angle to intruder, intruder heading, ownship speed, intruder
    speed.  41 angle values evenly span [-pi, pi]; grid size 860,672."""
    step = 2.0 * np.pi / 40.0
    return QuantScheme(
        [
            ExplicitAxis("rho", "m", [float(v) for v in RHO_VALUES]),
            UniformAxis("theta", "rad", step, -np.pi, -np.pi, -np.pi + 40 * step),
            UniformAxis("psi", "rad", step, -np.pi, -np.pi, -np.pi + 40 * step),
            ExplicitAxis("v_own", "m/s", SPEED_VALUES),
            ExplicitAxis("v_int", "m/s", SPEED_VALUES),
        ]
    )


@dataclass
class LookupTable:
    """Scores over the full grid: row at flat index i holds the five
    action scores for grid point i."""

    scheme: QuantScheme
    scores: np.ndarray  # (grid_size, 5) float32
    tau: float = 5.0
    alpha_prev: str = "WR"

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float32)
        if scores.shape != (self.scheme.grid_size, NUM_ACTIONS):
            raise ValueError(
                f"scores shape {scores.shape} does not match grid size {self.scheme.grid_size}"
            )
        if not np.isfinite(scores).all():
            raise ValueError("table scores must be finite")
        scores = np.ascontiguousarray(scores)
        scores.flags.writeable = False
        self.scores = scores


def _wrap_angle(a: np.ndarray) -> np.ndarray:
    return np.mod(a + np.pi, 2.0 * np.pi) - np.pi


def generate_synthetic_table(
    scheme: QuantScheme, tau: float = 5.0, alpha_prev: str = "WR"
) -> LookupTable:
    """Deterministic analytic scores over the grid.

    With relative bearing ``theta_rel = wrap(theta + psi/2)`` and urgency
    ``base = exp(-rho/20000) * (1 + (v_int - v_own)/400)``, each action
    scores ``-|theta_rel - offset| * base`` plus a clear-of-conflict bonus
    ``0.1 * (1 - base)``: far, slow intruders favor no turn, near ones
    favor turning away from the bearing.
    """
    if scheme.n != 5:
        raise ValueError(
            f"synthetic table needs the 5 collision-avoidance dimensions "
            f"(rho, theta, psi, v_own, v_int); the scheme has {scheme.n}"
        )
    pts = scheme.points_for_flat(np.arange(scheme.grid_size, dtype=np.int64))
    rho, theta, psi, v_own, v_int = (pts[:, d] for d in range(5))
    theta_rel = _wrap_angle(theta + psi / 2.0)
    base = np.exp(-rho / 20000.0) * (1.0 + (v_int - v_own) / 400.0)
    scores = -np.abs(theta_rel[:, None] - TURN_OFFSETS[None, :]) * base[:, None]
    scores[:, 0] += 0.1 * (1.0 - base)
    return LookupTable(scheme, scores.astype(np.float32), tau=tau, alpha_prev=alpha_prev)


# ---------------------------------------------------------------------------
# Accuracy metrics (uniform weighting over table entries; argmax ties
# resolve to the lowest action index on both sides).


def _as_scores(pred_scores, table: LookupTable) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred_scores, dtype=np.float64)
    ref = table.scores.astype(np.float64)
    if pred.shape != ref.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match table {ref.shape}")
    return pred, ref


def policy_accuracy(pred_scores, table: LookupTable) -> float:
    """Fraction of entries where predicted and table argmax agree."""
    pred, ref = _as_scores(pred_scores, table)
    return float(np.mean(np.argmax(pred, axis=1) == np.argmax(ref, axis=1)))


def score_error(pred_scores, table: LookupTable, norm: str = "l1") -> float:
    """Mean per-entry l1 or l2 norm of the score difference."""
    pred, ref = _as_scores(pred_scores, table)
    diff = pred - ref
    if norm == "l1":
        per_entry = np.abs(diff).sum(axis=1)
    elif norm == "l2":
        per_entry = np.sqrt((diff * diff).sum(axis=1))
    else:
        raise ValueError(f"unknown norm {norm!r} (expected 'l1' or 'l2')")
    return float(np.mean(per_entry))


# ---------------------------------------------------------------------------
# Table files: metadata comments, the scheme block in the quantizer
# format, then one line of 5 scores per flat index.


class TableFormatError(ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


def save_table(table: LookupTable, dest) -> None:
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w") as f:
            save_table(table, f)
        return
    dest.write("# gridverify lookup table\n")
    dest.write(f"# meta tau={table.tau!r} alpha_prev={table.alpha_prev}\n")
    dest.write(f"axes {table.scheme.n}\n")
    for axis in table.scheme.axes:
        dest.write(axis_to_line(axis) + "\n")
    dest.write(f"scores {table.scheme.grid_size}\n")
    np.savetxt(dest, table.scores, fmt="%.9g")


def load_table(source) -> LookupTable:
    if isinstance(source, (str, os.PathLike)):
        with open(source) as f:
            return load_table(f)
    tau, alpha_prev = 5.0, "WR"
    lineno = 0

    def next_line():
        nonlocal lineno, tau, alpha_prev
        for raw in source:
            lineno += 1
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line.lstrip("#").strip()
                if body.startswith("meta "):
                    for item in body[5:].split():
                        key, _, val = item.partition("=")
                        if key == "tau":
                            tau = float(val)
                        elif key == "alpha_prev":
                            alpha_prev = val
                continue
            return line
        raise TableFormatError("truncated table file", line=lineno)

    header = next_line().split()
    if len(header) != 2 or header[0] != "axes":
        raise TableFormatError(f"expected 'axes <n>', found {header!r}", line=lineno)
    n_axes = int(header[1])
    axes = [axis_from_line(next_line(), lineno) for _ in range(n_axes)]
    scheme = QuantScheme(axes)
    header = next_line().split()
    if len(header) != 2 or header[0] != "scores":
        raise TableFormatError(f"expected 'scores <count>', found {header!r}", line=lineno)
    count = int(header[1])
    if count != scheme.grid_size:
        raise TableFormatError(
            f"score count {count} does not match grid size {scheme.grid_size}", line=lineno
        )
    try:
        scores = np.loadtxt(source, dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise TableFormatError(f"bad score data: {exc}") from None
    if scores.shape != (count, NUM_ACTIONS):
        raise TableFormatError(
            f"expected {count} rows of {NUM_ACTIONS} scores, found shape {scores.shape}"
        )
    return LookupTable(scheme, scores.astype(np.float32), tau=tau, alpha_prev=alpha_prev)
