"""Interval-propagation baseline verifier with input bisection.

This is the comparison baseline, not an exact method: bounds are computed
in double precision without directed rounding, so the analysis itself can
be off by floating-point rounding (the concrete enumeration verifier does
not have this caveat).  A Violated verdict always carries a concrete
witness re-checked with ``forward``; interval evidence alone never
produces Violated.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass

import numpy as np

from .enumverify import VerificationSetupError, _check_pair
from .mlp import DimensionError, Network, forward
from .properties import Property
from .quantize import QuantScheme


@dataclass
class IntervalVerdict:
    status: str  # "holds" | "violated" | "unknown"
    witness: tuple[tuple[float, ...], tuple[float, ...]] | None
    boxes_explored: int
    max_depth_reached: bool
    wall_time: float = 0.0

    @property
    def holds(self) -> bool:
        return self.status == "holds"

    def to_dict(self, property_name: str | None = None) -> dict:
        d = {
            "status": self.status,
            "boxes_explored": self.boxes_explored,
            "max_depth_reached": self.max_depth_reached,
            "wall_time_s": self.wall_time,
            "counterexamples": []
            if self.witness is None
            else [{"point": list(self.witness[0]), "scores": list(self.witness[1])}],
        }
        if property_name is not None:
            d = {"property": property_name, **d}
        return d


def interval_forward(net: Network, lo, hi) -> tuple[np.ndarray, np.ndarray]:
    """Output bounds containing f(x) for every x in the box [lo, hi]."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    if lo.shape != (net.input_dim,) or hi.shape != (net.input_dim,):
        raise DimensionError(f"expected bounds of shape ({net.input_dim},)")
    if not (np.isfinite(lo).all() and np.isfinite(hi).all() and (lo <= hi).all()):
        raise VerificationSetupError("box bounds must be finite with lo <= hi")
    # normalization is affine with positive scale: order preserved
    lo = (lo - net.norm_mean) / net.norm_range
    hi = (hi - net.norm_mean) / net.norm_range
    last = len(net.layers) - 1
    for li, layer in enumerate(net.layers):
        w = layer.weights.astype(np.float64)
        b = layer.biases.astype(np.float64)
        w_pos = np.maximum(w, 0.0)
        w_neg = np.minimum(w, 0.0)
        new_lo = w_pos @ lo + w_neg @ hi + b
        new_hi = w_pos @ hi + w_neg @ lo + b
        if li != last:
            new_lo = np.maximum(new_lo, 0.0)
            new_hi = np.maximum(new_hi, 0.0)
        lo, hi = new_lo, new_hi
    return lo, hi


def bisect_verify(
    net: Network,
    scheme: QuantScheme,
    prop: Property,
    max_boxes: int = 10000,
    max_depth: int = 60,
) -> IntervalVerdict:
    """Worklist bisection: discharge boxes whose interval bounds prove the
    predicate, report a concrete witness on a failing box center, or give
    up (Unknown) when the box budget or depth limit is exhausted."""
    _check_pair(net, scheme, prop)
    t0 = time.perf_counter()
    box = prop.resolved_box(scheme)
    lo0 = np.array([b[0] for b in box], dtype=np.float64)
    hi0 = np.array([b[1] for b in box], dtype=np.float64)
    # split on the widest dimension relative to its axis range
    spans = np.array([max(a.hi - a.lo, 1e-300) for a in scheme.axes])
    pred = prop.output_pred
    queue: deque = deque([(lo0, hi0, 0)])
    explored = 0
    depth_hit = False
    undecided = False
    while queue:
        if explored >= max_boxes:
            return IntervalVerdict(
                "unknown", None, explored, depth_hit, time.perf_counter() - t0
            )
        lo, hi, depth = queue.popleft()
        explored += 1
        out_lo, out_hi = interval_forward(net, lo, hi)
        certainly_true, _ = pred.interval_eval(out_lo, out_hi)
        if certainly_true:
            continue
        center = (lo + hi) / 2.0
        scores = forward(net, center)
        if not pred.eval(np.asarray(scores, dtype=np.float64)):
            return IntervalVerdict(
                "violated",
                (tuple(map(float, center)), tuple(map(float, scores))),
                explored,
                depth_hit,
                time.perf_counter() - t0,
            )
        if depth >= max_depth:
            depth_hit = True
            undecided = True
            continue
        d = int(np.argmax((hi - lo) / spans))
        mid = (lo[d] + hi[d]) / 2.0
        left_hi = hi.copy()
        left_hi[d] = mid
        right_lo = lo.copy()
        right_lo[d] = mid
        queue.append((lo, left_hi, depth + 1))
        queue.append((right_lo, hi, depth + 1))
    status = "unknown" if undecided else "holds"
    return IntervalVerdict(status, None, explored, depth_hit, time.perf_counter() - t0)
