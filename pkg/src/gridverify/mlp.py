"""Small feed-forward ReLU networks with bit-deterministic evaluation.

Networks are immutable after construction and safe to share between
threads.  ``forward`` / ``forward_batch`` are pure; batching is purely a
throughput optimization and produces bit-identical rows.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import _kernels

PRECISIONS = ("single", "double")

_DTYPES = {"single": np.float32, "double": np.float64}

# Cumulative count of rows pushed through forward_batch; used by tests to
# check how many network evaluations an operation performed.
_eval_count = 0


def eval_count() -> int:
    return _eval_count


class NetworkError(ValueError):
    """Invalid network structure or values."""


class NetworkFormatError(NetworkError):
    """Malformed network file; message carries the offending line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DimensionError(NetworkError):
    """Input/weight dimension mismatch."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class AffineLayer:
    """One affine stage: y = weights @ x + biases, weights shaped (out, in)."""

    weights: np.ndarray
    biases: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights)
        b = np.asarray(self.biases)
        if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
            raise DimensionError(
                f"layer needs (out, in) weights and (out,) biases, got {w.shape} and {b.shape}"
            )
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise NetworkError("layer contains non-finite weights or biases")
        object.__setattr__(self, "weights", _freeze(w))
        object.__setattr__(self, "biases", _freeze(b))

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]


class Network:
    """Affine+ReLU stack (ReLU on hidden layers, identity on the output).

    An optional per-dimension affine normalization ``(x - mean) / range``
    is applied ahead of the first layer; it defaults to the identity.
    ``metadata`` carries the controller context: ``tau`` (seconds until
    loss of vertical separation), ``alpha_prev`` (previous advisory id)
    and a free-form ``name``.
    """

    def __init__(
        self,
        layers: Sequence[AffineLayer],
        precision: str = "single",
        metadata: dict | None = None,
        norm_mean: Iterable[float] | None = None,
        norm_range: Iterable[float] | None = None,
    ):
        if not layers:
            raise NetworkError("network needs at least one layer")
        if precision not in PRECISIONS:
            raise NetworkError(f"unknown precision {precision!r}")
        layers = tuple(
            l if isinstance(l, AffineLayer) else AffineLayer(*l) for l in layers
        )
        for prev, cur in zip(layers, layers[1:]):
            if cur.in_dim != prev.out_dim:
                raise DimensionError(
                    f"layer input width {cur.in_dim} does not match previous output width {prev.out_dim}"
                )
        self.layers = layers
        self.precision = precision
        self.metadata = dict(metadata or {})
        n = layers[0].in_dim
        mean = np.zeros(n) if norm_mean is None else np.asarray(norm_mean, dtype=np.float64)
        rng = np.ones(n) if norm_range is None else np.asarray(norm_range, dtype=np.float64)
        if mean.shape != (n,) or rng.shape != (n,):
            raise DimensionError("normalization vectors must match the input width")
        if not (np.isfinite(mean).all() and np.isfinite(rng).all() and (rng > 0).all()):
            raise NetworkError("normalization means must be finite and ranges positive")
        self.norm_mean = _freeze(mean)
        self.norm_range = _freeze(rng)
        dt = _DTYPES[precision]
        # Evaluation caches: transposed contiguous weights at the working dtype.
        self._wts = [_freeze(l.weights.T.astype(dt)) for l in layers]
        self._bs = [_freeze(l.biases.astype(dt)) for l in layers]
        self._nmean = _freeze(mean.astype(dt))
        self._nrange = _freeze(rng.astype(dt))

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.input_dim,) + tuple(l.out_dim for l in self.layers)

    @property
    def dtype(self):
        return _DTYPES[self.precision]

    def __eq__(self, other):
        if not isinstance(other, Network):
            return NotImplemented
        return (
            self.precision == other.precision
            and self.metadata == other.metadata
            and len(self.layers) == len(other.layers)
            and all(
                np.array_equal(a.weights, b.weights) and np.array_equal(a.biases, b.biases)
                for a, b in zip(self.layers, other.layers)
            )
            and np.array_equal(self.norm_mean, other.norm_mean)
            and np.array_equal(self.norm_range, other.norm_range)
        )


def forward_batch(net: Network, xs: np.ndarray) -> np.ndarray:
    """Evaluate the network on every row of ``xs``.

    Row ``i`` of the result is bit-identical to ``forward(net, xs[i])``
    for any batch size or slicing of the input.
    """
    global _eval_count
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != net.input_dim:
        raise DimensionError(f"expected (k, {net.input_dim}) inputs, got {xs.shape}")
    if xs.size and not np.isfinite(xs).all():
        raise NetworkError("non-finite input")
    if xs.shape[0] == 0:
        return np.empty((0, net.output_dim), dtype=net.dtype)
    _eval_count += xs.shape[0]
    h = xs.astype(net.dtype)
    h = (h - net._nmean) / net._nrange
    tmp = np.empty(max(l.out_dim for l in net.layers), dtype=net.dtype)
    last = len(net.layers) - 1
    for li, (w_t, b) in enumerate(zip(net._wts, net._bs)):
        out = np.empty((h.shape[0], w_t.shape[1]), dtype=net.dtype)
        _kernels.affine(h, w_t, b, out, tmp)
        if li != last:
            np.maximum(out, 0, out=out)
        h = out
    return h


def forward(net: Network, x: np.ndarray) -> np.ndarray:
    """Evaluate the network on a single input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError(f"expected a vector, got shape {x.shape}")
    return forward_batch(net, x[None, :])[0]


# ---------------------------------------------------------------------------
# Serialization
#
# Text format:
#   '#' comment lines anywhere before the data; '# meta key=value' lines
#   carry the metadata.  Then:
#     line 1: layer count L
#     line 2: L+1 comma-separated widths
#     line 3: precision tag (single | double)
#     line 4: normalization means (input_dim values)
#     line 5: normalization ranges
#   followed per layer by one weight row per output neuron (in_dim values,
#   row-major) and one bias line.  Numbers use the shortest decimal form
#   that reparses bit-exactly.


def _fmt(v: float) -> str:
    return repr(float(v))


def _fmt_row(vals) -> str:
    return ",".join(_fmt(v) for v in vals)


class _LineReader:
    def __init__(self, f):
        self._lines = iter(f.read().splitlines())
        self.lineno = 0
        self.meta: dict[str, str] = {}

    def next_data(self) -> str:
        for raw in self._lines:
            self.lineno += 1
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line.lstrip("#").strip()
                if body.startswith("meta ") and "=" in body:
                    key, _, val = body[5:].partition("=")
                    self.meta[key.strip()] = val.strip()
                continue
            return line
        raise NetworkFormatError("truncated stream", line=self.lineno)

    def floats(self, expect: int) -> np.ndarray:
        line = self.next_data()
        parts = line.split(",")
        if len(parts) != expect:
            raise NetworkFormatError(
                f"expected {expect} values, found {len(parts)}", line=self.lineno
            )
        try:
            vals = np.array([float(p) for p in parts], dtype=np.float64)
        except ValueError as exc:
            raise NetworkFormatError(str(exc), line=self.lineno) from None
        if not np.isfinite(vals).all():
            raise NetworkFormatError("non-finite value", line=self.lineno)
        return vals


def save_network(net: Network, dest) -> None:
    """Write a network; ``dest`` is a path or a text file object."""
    for l in net.layers:  # re-check: never write a corrupt file
        if not (np.isfinite(l.weights).all() and np.isfinite(l.biases).all()):
            raise NetworkError("refusing to save network with non-finite values")
    lines = ["# gridverify network"]
    for key in ("name", "tau", "alpha_prev"):
        if key in net.metadata:
            lines.append(f"# meta {key}={net.metadata[key]}")
    for key in sorted(net.metadata):
        if key not in ("name", "tau", "alpha_prev"):
            lines.append(f"# meta {key}={net.metadata[key]}")
    lines.append(str(len(net.layers)))
    lines.append(",".join(str(w) for w in net.widths))
    lines.append(net.precision)
    lines.append(_fmt_row(net.norm_mean))
    lines.append(_fmt_row(net.norm_range))
    for layer in net.layers:
        for row in layer.weights:
            lines.append(_fmt_row(row))
        lines.append(_fmt_row(layer.biases))
    text = "\n".join(lines) + "\n"
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w") as f:
            f.write(text)
    else:
        dest.write(text)


def load_network(source) -> Network:
    """Read a network; ``source`` is a path, a text file object, or a string."""
    if isinstance(source, (str, os.PathLike)) and (
        isinstance(source, os.PathLike) or "\n" not in source
    ):
        with open(source) as f:
            r = _LineReader(f)
            return _parse_network(r)
    if isinstance(source, str):
        return _parse_network(_LineReader(io.StringIO(source)))
    return _parse_network(_LineReader(source))


def _parse_network(r: _LineReader) -> Network:
    line = r.next_data()
    try:
        n_layers = int(line)
    except ValueError:
        raise NetworkFormatError(f"bad layer count {line!r}", line=r.lineno) from None
    if n_layers < 1:
        raise NetworkFormatError("layer count must be positive", line=r.lineno)
    parts = r.next_data().split(",")
    if len(parts) != n_layers + 1:
        raise NetworkFormatError(
            f"expected {n_layers + 1} widths, found {len(parts)}", line=r.lineno
        )
    try:
        widths = [int(p) for p in parts]
    except ValueError as exc:
        raise NetworkFormatError(str(exc), line=r.lineno) from None
    if any(w < 1 for w in widths):
        raise NetworkFormatError("widths must be positive", line=r.lineno)
    precision = r.next_data()
    if precision not in PRECISIONS:
        raise NetworkFormatError(f"unknown precision tag {precision!r}", line=r.lineno)
    dt = _DTYPES[precision]
    mean = r.floats(widths[0])
    rng = r.floats(widths[0])
    layers = []
    for li in range(n_layers):
        rows = [r.floats(widths[li]).astype(dt) for _ in range(widths[li + 1])]
        biases = r.floats(widths[li + 1]).astype(dt)
        layers.append(AffineLayer(np.stack(rows), biases))
    meta = dict(r.meta)
    if "tau" in meta:
        meta["tau"] = float(meta["tau"])
    return Network(layers, precision=precision, metadata=meta, norm_mean=mean, norm_range=rng)
