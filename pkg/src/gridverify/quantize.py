"""Per-dimension input quantization and grid enumeration.

Each axis is either uniform (step/bias lattice clamped to [lo, hi]) or an
explicit strictly increasing value list quantized by nearest neighbor.
Tie-breaking is fixed for determinism: uniform axes round half away from
zero, explicit-axis midpoints resolve to the lower value.
"""

from __future__ import annotations

import enum
import itertools
import math
import os
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np


class QuantizeError(ValueError):
    pass


class GridOverflowError(QuantizeError):
    """Grid size does not fit in a 64-bit count."""


class OffGridError(QuantizeError):
    """Point is not exactly on the quantization grid."""


class InvertedIntervalError(QuantizeError):
    pass


class IncommensurableStepError(QuantizeError):
    """Axis values share no common step above the configured minimum."""


class SchemeFormatError(QuantizeError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


def _round_half_away(t: np.ndarray) -> np.ndarray:
    return np.sign(t) * np.floor(np.abs(t) + 0.5)


class UniformAxis:
    """Uniform lattice value = bias + j*step for j in [j_lo, j_hi].

    ``lo`` and ``hi`` must sit on the lattice; they are snapped to the
    canonical lattice values (bias + j*step) so quantization always
    returns a member of ``values`` bit-exactly.
    """

    kind = "uniform"

    def __init__(self, label: str, unit: str, step: float, bias: float, lo: float, hi: float):
        if not (math.isfinite(step) and math.isfinite(bias) and math.isfinite(lo) and math.isfinite(hi)):
            raise QuantizeError(f"axis {label}: non-finite parameters")
        if step <= 0:
            raise QuantizeError(f"axis {label}: step must be positive")
        if lo > hi:
            raise QuantizeError(f"axis {label}: lo > hi")
        j_lo = round((lo - bias) / step)
        j_hi = round((hi - bias) / step)
        tol = step * 1e-6
        if abs(bias + j_lo * step - lo) > tol or abs(bias + j_hi * step - hi) > tol:
            raise QuantizeError(f"axis {label}: lo/hi are not lattice values")
        self.label = label
        self.unit = unit
        self.step = float(step)
        self.bias = float(bias)
        self._j_lo = j_lo
        self._j_hi = j_hi
        values = bias + np.arange(j_lo, j_hi + 1, dtype=np.float64) * step
        values.flags.writeable = False
        self.values = values
        self.lo = float(values[0])
        self.hi = float(values[-1])

    @property
    def size(self) -> int:
        return self._j_hi - self._j_lo + 1

    def quantize(self, x):
        x = np.asarray(x, dtype=np.float64)
        t = (x - self.bias) / self.step
        j = _round_half_away(t)
        j = np.clip(j, self._j_lo, self._j_hi).astype(np.int64)
        return self.values[j - self._j_lo]

    def __eq__(self, other):
        return (
            isinstance(other, UniformAxis)
            and (self.label, self.unit) == (other.label, other.unit)
            and (self.step, self.bias, self.lo, self.hi)
            == (other.step, other.bias, other.lo, other.hi)
        )

    def __repr__(self):
        return f"UniformAxis({self.label!r}, step={self.step}, bias={self.bias}, lo={self.lo}, hi={self.hi})"


class ExplicitAxis:
    """Explicit strictly increasing value list, nearest-neighbor quantized."""

    kind = "explicit"

    def __init__(self, label: str, unit: str, values: Sequence[float]):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 1 or values.size < 1:
            raise QuantizeError(f"axis {label}: needs at least one value")
        if not np.isfinite(values).all():
            raise QuantizeError(f"axis {label}: non-finite value")
        if values.size > 1 and not (np.diff(values) > 0).all():
            raise QuantizeError(f"axis {label}: values must be strictly increasing")
        values = values.copy()
        values.flags.writeable = False
        self.label = label
        self.unit = unit
        self.values = values
        self.lo = float(values[0])
        self.hi = float(values[-1])

    @property
    def size(self) -> int:
        return self.values.size

    def quantize(self, x):
        x = np.asarray(x, dtype=np.float64)
        v = self.values
        hi = np.minimum(np.searchsorted(v, x), v.size - 1)
        lo = np.maximum(hi - 1, 0)
        # midpoint ties resolve to the lower value
        take_lo = (x - v[lo]) <= (v[hi] - x)
        return np.where(take_lo, v[lo], v[hi])

    def __eq__(self, other):
        return (
            isinstance(other, ExplicitAxis)
            and (self.label, self.unit) == (other.label, other.unit)
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self):
        return f"ExplicitAxis({self.label!r}, {self.size} values in [{self.lo}, {self.hi}])"


Axis = UniformAxis | ExplicitAxis


class EnumerationMode(enum.Enum):
    """How a property's input box maps to quantized states.

    IN_BOX enumerates grid values lying inside the box; QUANTIZED_IMAGE
    enumerates the image of the box under quantization, which can include
    grid values just outside a box that is not aligned to cell boundaries.
    """

    IN_BOX = "inbox"
    QUANTIZED_IMAGE = "image"


class QuantScheme:
    """Ordered list of axes; the full grid is their Cartesian product,
    flattened row-major in declared axis order."""

    def __init__(self, axes: Sequence[Axis]):
        axes = tuple(axes)
        if not axes:
            raise QuantizeError("scheme needs at least one axis")
        labels = [a.label for a in axes]
        if len(set(labels)) != len(labels):
            raise QuantizeError("duplicate axis labels")
        size = 1
        for a in axes:
            size *= a.size
            if size >= 2**63:
                raise GridOverflowError("grid size does not fit in 64 bits")
        self.axes = axes
        self._size = size

    @property
    def n(self) -> int:
        return len(self.axes)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(a.label for a in self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.size for a in self.axes)

    @property
    def grid_size(self) -> int:
        return self._size

    def axis(self, label: str) -> Axis:
        for a in self.axes:
            if a.label == label:
                return a
        raise QuantizeError(f"unknown axis {label!r}")

    def full_box(self) -> list[tuple[float, float]]:
        return [(a.lo, a.hi) for a in self.axes]

    # -- index mapping ------------------------------------------------

    def flat_to_multi(self, flat) -> np.ndarray:
        flat = np.asarray(flat, dtype=np.int64)
        if flat.size and (flat.min() < 0 or flat.max() >= self._size):
            raise QuantizeError("flat index out of range")
        multi = np.empty(flat.shape + (self.n,), dtype=np.int64)
        rem = flat
        for d in range(self.n - 1, -1, -1):
            k = self.axes[d].size
            multi[..., d] = rem % k
            rem = rem // k
        return multi

    def multi_to_flat(self, multi) -> np.ndarray:
        multi = np.asarray(multi, dtype=np.int64)
        flat = np.zeros(multi.shape[:-1], dtype=np.int64)
        for d in range(self.n):
            k = self.axes[d].size
            idx = multi[..., d]
            if idx.size and (idx.min() < 0 or idx.max() >= k):
                raise QuantizeError(f"index out of range on axis {self.axes[d].label}")
            flat = flat * k + idx
        return flat

    def points_for_flat(self, flat) -> np.ndarray:
        """Grid coordinates for flat indices; shape (..., n), float64."""
        multi = self.flat_to_multi(flat)
        pts = np.empty(multi.shape, dtype=np.float64)
        for d, a in enumerate(self.axes):
            pts[..., d] = a.values[multi[..., d]]
        return pts

    def __eq__(self, other):
        return isinstance(other, QuantScheme) and self.axes == other.axes


@dataclass(frozen=True)
class GridIndex:
    """Per-dimension indices plus the row-major flattened index."""

    per_dim: tuple[int, ...]
    flat: int


def index_to_point(scheme: QuantScheme, idx: GridIndex | int) -> np.ndarray:
    flat = idx.flat if isinstance(idx, GridIndex) else int(idx)
    return scheme.points_for_flat(np.int64(flat))


def point_to_index(scheme: QuantScheme, x) -> GridIndex:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (scheme.n,):
        raise QuantizeError(f"expected {scheme.n} coordinates, got shape {x.shape}")
    per_dim = []
    for a, v in zip(scheme.axes, x):
        j = int(np.searchsorted(a.values, v))
        if j >= a.size or a.values[j] != v:
            raise OffGridError(f"{v!r} is not a grid value of axis {a.label}")
        per_dim.append(j)
    per_dim = tuple(per_dim)
    return GridIndex(per_dim, int(scheme.multi_to_flat(np.array(per_dim))))


# -- quantization entry points ---------------------------------------------


def quantize_scalar(axis: Axis, x: float) -> float:
    if not math.isfinite(x):
        raise QuantizeError("non-finite input")
    return float(axis.quantize(x))


def quantize_point(scheme: QuantScheme, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (scheme.n,):
        raise QuantizeError(f"expected {scheme.n} coordinates, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise QuantizeError("non-finite input")
    return np.array([a.quantize(v) for a, v in zip(scheme.axes, x)])


def quantize_batch(scheme: QuantScheme, xs) -> np.ndarray:
    """Vectorized quantize_point over rows of ``xs``."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != scheme.n:
        raise QuantizeError(f"expected (k, {scheme.n}) inputs, got shape {xs.shape}")
    out = np.empty_like(xs)
    for d, a in enumerate(scheme.axes):
        out[:, d] = a.quantize(xs[:, d])
    return out


# -- state enumeration ------------------------------------------------------


def _axis_state_indices(axis: Axis, lo: float, hi: float, mode: EnumerationMode) -> np.ndarray:
    if lo > hi:
        raise InvertedIntervalError(f"axis {axis.label}: interval [{lo}, {hi}] is inverted")
    if mode is EnumerationMode.IN_BOX:
        return np.nonzero((axis.values >= lo) & (axis.values <= hi))[0]
    # Image of [lo, hi] under a monotone quantizer: every axis value from
    # q(lo) to q(hi) is attained, and nothing else.
    a = int(np.searchsorted(axis.values, float(axis.quantize(lo))))
    b = int(np.searchsorted(axis.values, float(axis.quantize(hi))))
    return np.arange(a, b + 1, dtype=np.int64)


def per_axis_state_indices(
    scheme: QuantScheme, box: Sequence[tuple[float, float]], mode: EnumerationMode
) -> list[np.ndarray]:
    if len(box) != scheme.n:
        raise QuantizeError(f"box must have {scheme.n} intervals")
    return [_axis_state_indices(a, lo, hi, mode) for a, (lo, hi) in zip(scheme.axes, box)]


def states_for_property(
    scheme: QuantScheme, box: Sequence[tuple[float, float]], mode: EnumerationMode
) -> Iterator[GridIndex]:
    """Quantized states for a per-dimension box, in ascending flat order."""
    per_axis = per_axis_state_indices(scheme, box, mode)
    strides = np.cumprod((1,) + scheme.shape[::-1][:-1])[::-1]
    for combo in itertools.product(*(a.tolist() for a in per_axis)):
        yield GridIndex(tuple(combo), int(np.dot(strides, combo)))


def flat_states_for_box(
    scheme: QuantScheme, box: Sequence[tuple[float, float]], mode: EnumerationMode
) -> np.ndarray:
    """Sorted flat indices of the states in the box (vectorized)."""
    per_axis = per_axis_state_indices(scheme, box, mode)
    strides = np.cumprod((1,) + scheme.shape[::-1][:-1])[::-1]
    flat = np.zeros((1,) * scheme.n, dtype=np.int64)
    for d, idx in enumerate(per_axis):
        shape = [1] * scheme.n
        shape[d] = idx.size
        flat = flat + (idx * strides[d]).reshape(shape)
    return flat.ravel()


# -- dense lookup acceleration ---------------------------------------------


def _float_gcd(a: float, b: float, tol: float) -> float:
    while b > tol:
        a, b = b, math.fmod(a, b)
    return a


@dataclass(frozen=True)
class DenseLUT:
    """Dense nearest-neighbor table over a common-step lattice.

    ``table[j]`` is the nearest axis value to ``anchor + j * gcd_step``.
    Lookups resolve at *half* the common step: nearest-neighbor decision
    boundaries (midpoints of adjacent values) always sit on multiples of
    ``gcd_step / 2`` above the anchor, so every half-step cell maps to a
    single axis value and one floor division replaces the search.  Inputs
    landing exactly on a cell boundary take the boundary value, which
    keeps the midpoint tie-break (lower value wins) of the direct search.
    """

    gcd_step: float
    anchor: float
    table: np.ndarray
    _cell: np.ndarray
    _edge: np.ndarray

    def lookup(self, x):
        x = np.asarray(x, dtype=np.float64)
        half = self.gcd_step / 2.0
        j = np.floor((x - self.anchor) / half)
        j = np.clip(j, 0, self._cell.size - 1).astype(np.int64)
        exact = self.anchor + j * half == x
        return np.where(exact, self._edge[j], self._cell[j])


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


def build_dense_lut(axis: Axis, min_step: float = 1e-9) -> DenseLUT:
    values = axis.values
    anchor = float(values[0])
    if values.size == 1:
        one = _frozen(values.copy())
        return DenseLUT(max(abs(anchor), 1.0), anchor, one, one, one)
    if isinstance(axis, UniformAxis):
        g = float(axis.step)
    else:
        diffs = np.diff(values)
        g = float(diffs[0])
        for d in diffs[1:]:
            g = _float_gcd(max(g, float(d)), min(g, float(d)), min_step)
        if g < min_step:
            raise IncommensurableStepError(
                f"axis {axis.label}: no common step >= {min_step}; "
                "use nearest-neighbor search"
            )
        for d in diffs:
            if abs(d / g - round(d / g)) > 1e-9:
                raise IncommensurableStepError(
                    f"axis {axis.label}: difference {d} is not a multiple of {g}"
                )
    half = g / 2.0
    n_cells = int(round((values[-1] - anchor) / half))
    table = _frozen(axis.quantize(anchor + np.arange(n_cells // 2 + 1) * g))
    cell = _frozen(axis.quantize(anchor + (np.arange(n_cells) + 0.5) * half))
    edge = _frozen(axis.quantize(anchor + np.arange(n_cells) * half))
    return DenseLUT(g, anchor, table, cell, edge)


# -- scheme files -----------------------------------------------------------
#
# One axis per line:
#   <name> <unit> uniform <step> <bias> <lo> <hi>
#   <name> <unit> explicit v1,v2,...
# '#' lines are comments.


def _fmt(v: float) -> str:
    return repr(float(v))


def axis_to_line(axis: Axis) -> str:
    if isinstance(axis, UniformAxis):
        return (
            f"{axis.label} {axis.unit} uniform "
            f"{_fmt(axis.step)} {_fmt(axis.bias)} {_fmt(axis.lo)} {_fmt(axis.hi)}"
        )
    return f"{axis.label} {axis.unit} explicit " + ",".join(_fmt(v) for v in axis.values)


def axis_from_line(line: str, lineno: int | None = None) -> Axis:
    parts = line.split()
    if len(parts) < 3:
        raise SchemeFormatError(f"malformed axis line {line!r}", line=lineno)
    label, unit, kind = parts[0], parts[1], parts[2]
    try:
        if kind == "uniform":
            if len(parts) != 7:
                raise SchemeFormatError("uniform axis needs step, bias, lo, hi", line=lineno)
            step, bias, lo, hi = (float(p) for p in parts[3:7])
            return UniformAxis(label, unit, step, bias, lo, hi)
        if kind == "explicit":
            if len(parts) != 4:
                raise SchemeFormatError("explicit axis needs one value list", line=lineno)
            values = [float(p) for p in parts[3].split(",")]
            return ExplicitAxis(label, unit, values)
    except (ValueError, QuantizeError) as exc:
        if isinstance(exc, SchemeFormatError):
            raise
        raise SchemeFormatError(str(exc), line=lineno) from None
    raise SchemeFormatError(f"unknown axis kind {kind!r}", line=lineno)


def save_scheme(scheme: QuantScheme, dest) -> None:
    text = "# gridverify quantization scheme\n"
    text += "".join(axis_to_line(a) + "\n" for a in scheme.axes)
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w") as f:
            f.write(text)
    else:
        dest.write(text)


def load_scheme(source) -> QuantScheme:
    if isinstance(source, (str, os.PathLike)) and (
        isinstance(source, os.PathLike) or "\n" not in source
    ):
        with open(source) as f:
            text = f.read()
    elif isinstance(source, str):
        text = source
    else:
        text = source.read()
    axes = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        axes.append(axis_from_line(line, lineno))
    if not axes:
        raise SchemeFormatError("no axes found")
    return QuantScheme(axes)
