"""Exact verification by enumerating quantized input states.

Work is partitioned into contiguous flat-index chunks and merged in range
order, so verdicts and score arrays are bit-identical regardless of chunk
size or worker count.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import mlp
from .mlp import Network, forward_batch
from .properties import Property
from .quantize import QuantScheme, flat_states_for_box

DEFAULT_CHUNK = 8192
DEFAULT_COUNTEREXAMPLE_CAP = 1000


class VerificationSetupError(ValueError):
    pass


@dataclass
class Verdict:
    status: str  # "holds" | "violated"
    counterexamples: list[tuple[tuple[float, ...], tuple[float, ...]]]
    states_checked: int
    wall_time: float
    counterexamples_truncated: bool = False

    @property
    def holds(self) -> bool:
        return self.status == "holds"

    def to_dict(self, property_name: str | None = None) -> dict:
        d = {
            "status": self.status,
            "states_checked": self.states_checked,
            "wall_time_s": self.wall_time,
            "counterexamples": [
                {"point": list(p), "scores": list(s)} for p, s in self.counterexamples
            ],
            "counterexamples_truncated": self.counterexamples_truncated,
        }
        if property_name is not None:
            d = {"property": property_name, **d}
        return d

    def same_outcome(self, other: "Verdict") -> bool:
        """Equality ignoring wall time."""
        return (
            self.status == other.status
            and self.states_checked == other.states_checked
            and self.counterexamples == other.counterexamples
        )


def _check_pair(net: Network, scheme: QuantScheme, prop: Property | None = None):
    if net.input_dim != scheme.n:
        raise VerificationSetupError(
            f"network takes {net.input_dim} inputs but the scheme has {scheme.n} axes"
        )
    if prop is not None:
        net_name = str(net.metadata.get("name", ""))
        if prop.network_id and net_name and prop.network_id != net_name:
            raise VerificationSetupError(
                f"property {prop.name} targets network {prop.network_id!r}, got {net_name!r}"
            )


def _chunk_ranges(total: int, chunk: int) -> list[tuple[int, int]]:
    return [(s, min(s + chunk, total)) for s in range(0, total, chunk)]


def _run_chunks(tasks, fn, jobs: int):
    """Apply fn over chunk tasks, returning results in task order."""
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def verify(
    net: Network,
    scheme: QuantScheme,
    prop: Property,
    chunk: int = DEFAULT_CHUNK,
    jobs: int = 1,
    max_counterexamples: int = DEFAULT_COUNTEREXAMPLE_CAP,
) -> Verdict:
    """Check the property on every quantized state its input box selects."""
    _check_pair(net, scheme, prop)
    if chunk < 1:
        raise VerificationSetupError("chunk must be >= 1")
    t0 = time.perf_counter()
    flats = flat_states_for_box(scheme, prop.resolved_box(scheme), prop.mode)
    pred = prop.output_pred

    def run(rng):
        lo, hi = rng
        sub = flats[lo:hi]
        pts = scheme.points_for_flat(sub)
        scores = forward_batch(net, pts)
        bad = np.nonzero(~pred.eval_batch(scores))[0]
        return [(tuple(map(float, pts[i])), tuple(map(float, scores[i]))) for i in bad]

    results = _run_chunks(_chunk_ranges(flats.size, chunk), run, jobs)
    counterexamples: list = []
    truncated = False
    for part in results:
        for ce in part:
            if len(counterexamples) >= max_counterexamples:
                truncated = True
                break
            counterexamples.append(ce)
    status = "holds" if not counterexamples and not truncated else "violated"
    # truncated implies at least one counterexample was seen
    if truncated and not counterexamples:
        status = "violated"
    return Verdict(
        status=status,
        counterexamples=counterexamples,
        states_checked=int(flats.size),
        wall_time=time.perf_counter() - t0,
        counterexamples_truncated=truncated,
    )


def full_grid_eval(
    net: Network,
    scheme: QuantScheme,
    chunk: int = DEFAULT_CHUNK,
    jobs: int = 1,
    consumer=None,
    max_bytes: int = 2**31,
) -> np.ndarray | None:
    """Network scores for every grid point, in flat-index order.

    With a ``consumer`` the score chunks are streamed in order as
    ``consumer(start, scores)`` and nothing is stored.  Without one the
    full array is returned; if it would exceed ``max_bytes`` a MemoryError
    asks the caller to stream instead.
    """
    _check_pair(net, scheme)
    n_states = scheme.grid_size
    ranges = _chunk_ranges(n_states, chunk)

    def run(rng):
        lo, hi = rng
        pts = scheme.points_for_flat(np.arange(lo, hi, dtype=np.int64))
        return forward_batch(net, pts)

    if consumer is not None:
        for rng in ranges:
            consumer(rng[0], run(rng))
        return None
    need = n_states * net.output_dim * np.dtype(net.dtype).itemsize
    if need > max_bytes:
        raise MemoryError(
            f"full grid needs {need} bytes (> {max_bytes}); pass a consumer to stream"
        )
    out = np.empty((n_states, net.output_dim), dtype=net.dtype)

    def fill(rng):
        out[rng[0] : rng[1]] = run(rng)

    _run_chunks(ranges, fill, jobs)
    return out


def verify_all(
    net: Network,
    scheme: QuantScheme,
    props: list[Property],
    chunk: int = DEFAULT_CHUNK,
    jobs: int = 1,
    max_counterexamples: int = DEFAULT_COUNTEREXAMPLE_CAP,
) -> dict[str, Verdict]:
    """Verify several properties with a single full-grid pass.

    Verdicts are identical to individual ``verify`` calls.
    """
    if not props:
        return {}
    for p in props:
        _check_pair(net, scheme, p)
    t0 = time.perf_counter()
    flats = {p.name: flat_states_for_box(scheme, p.resolved_box(scheme), p.mode) for p in props}
    fails: dict[str, list] = {p.name: [] for p in props}

    def run(rng):
        lo, hi = rng
        pts = scheme.points_for_flat(np.arange(lo, hi, dtype=np.int64))
        scores = forward_batch(net, pts)
        out = {}
        for p in props:
            f = flats[p.name]
            a, b = np.searchsorted(f, (lo, hi))
            if a == b:
                continue
            rows = f[a:b] - lo
            bad = rows[np.nonzero(~p.output_pred.eval_batch(scores[rows]))[0]]
            out[p.name] = [
                (tuple(map(float, pts[i])), tuple(map(float, scores[i]))) for i in bad
            ]
        return out

    for part in _run_chunks(_chunk_ranges(scheme.grid_size, chunk), run, jobs):
        for name, ces in part.items():
            fails[name].extend(ces)
    elapsed = time.perf_counter() - t0
    verdicts = {}
    for p in props:
        ces = fails[p.name]
        truncated = len(ces) > max_counterexamples
        ces = ces[:max_counterexamples]
        verdicts[p.name] = Verdict(
            status="holds" if not ces else "violated",
            counterexamples=ces,
            states_checked=int(flats[p.name].size),
            wall_time=elapsed,
            counterexamples_truncated=truncated,
        )
    return verdicts
