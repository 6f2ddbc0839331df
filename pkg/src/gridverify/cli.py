"""Command-line front end for the verification pipeline.

Exit status: 0 when everything holds / succeeded, 1 when a property is
violated, 2 when the interval baseline answers unknown, 3 on usage or
input errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .enumverify import full_grid_eval, verify, verify_all
from .intervals import bisect_verify
from .mlp import forward_batch, load_network, save_network
from .properties import parse_property_file
from .quantize import load_scheme, quantize_batch
from .report import RunReport, write_bench_csv, write_bench_figure
from .tables import generate_synthetic_table, load_table, policy_accuracy, save_table, score_error
from .train import TrainConfig, train

EXIT_HOLDS = 0
EXIT_VIOLATED = 1
EXIT_UNKNOWN = 2
EXIT_USAGE = 3


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _default_jobs() -> int:
    try:
        return max(1, int(os.environ.get("GRIDVERIFY_JOBS", "1")))
    except ValueError:
        return 1


def _add_common(p):
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--jobs", type=int, default=_default_jobs(),
                   help="worker threads (affects wall time only, never verdicts)")
    p.add_argument("--chunk", type=int, default=8192, help="evaluation batch size")


def build_parser() -> _Parser:
    parser = _Parser(prog="gridverify", description=__doc__)
    parser.add_argument("--version", action="version", version=f"gridverify {__version__}")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("gen-table", help="generate the synthetic lookup table")
    p.add_argument("--scheme", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tau", type=float, default=5.0)
    p.add_argument("--alpha-prev", default="WR")
    _add_common(p)

    p = sub.add_parser("train", help="fit a network to a lookup table")
    p.add_argument("--table", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON file with a 'train' section of config keys")
    p.add_argument("--shape", help="comma-separated widths, e.g. 5,50,50,50,50,50,5")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--asym-weight", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--name", default="", help="network id recorded in metadata")
    _add_common(p)

    p = sub.add_parser("metrics", help="accuracy of a network against a table")
    p.add_argument("--net", required=True)
    p.add_argument("--table", required=True)
    _add_common(p)

    p = sub.add_parser("verify", help="enumerate quantized states for one property")
    p.add_argument("--net", required=True)
    p.add_argument("--scheme", required=True)
    p.add_argument("--prop", required=True)
    p.add_argument("--property", dest="prop_name", help="name when the file has several")
    p.add_argument("--max-counterexamples", type=int, default=1000)
    _add_common(p)

    p = sub.add_parser("verify-all", help="verify every property in one grid pass")
    p.add_argument("--net", required=True)
    p.add_argument("--scheme", required=True)
    p.add_argument("--prop", required=True)
    p.add_argument("--max-counterexamples", type=int, default=1000)
    _add_common(p)

    p = sub.add_parser("grid-eval", help="evaluate the network on the whole grid")
    p.add_argument("--net", required=True)
    p.add_argument("--scheme", required=True)
    p.add_argument("--out", help="write scores as delimited text")
    _add_common(p)

    p = sub.add_parser("bench-overhead",
                       help="quantize+forward vs forward-only throughput")
    p.add_argument("--net", required=True)
    p.add_argument("--scheme", required=True)
    p.add_argument("--points", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", help="write bench.csv and bench.png here")
    _add_common(p)

    p = sub.add_parser("bench-compare",
                       help="enumeration vs interval-baseline wall time")
    p.add_argument("--net", required=True)
    p.add_argument("--scheme", required=True)
    p.add_argument("--prop", required=True)
    p.add_argument("--property", dest="prop_name")
    p.add_argument("--max-boxes", type=int, default=10000)
    p.add_argument("--out-dir", help="write bench.csv and bench.png here")
    _add_common(p)

    return parser


def _read(path: str, loader, what: str):
    if not Path(path).exists():
        raise CliError(f"{what} file not found: {path}")
    try:
        return loader(path)
    except Exception as exc:
        raise CliError(f"failed to load {what} {path}: {exc}") from exc


def _pick_property(path: str, name: str | None):
    props = _read(path, lambda p: parse_property_file(Path(p).read_text()), "property")
    if name is None:
        if len(props) > 1:
            raise CliError(f"{path} has {len(props)} properties; pick one with --property")
        return props[0]
    for prop in props:
        if prop.name == name:
            return prop
    raise CliError(f"no property named {name!r} in {path}")


def _emit(report: RunReport, args, text_lines: list[str]) -> None:
    if args.format == "json":
        print(report.to_json())
    else:
        for line in text_lines:
            print(line)


def _verdict_lines(name: str, v) -> list[str]:
    lines = [f"property {name}: {v.status.upper()}"
             + (f" ({v.states_checked} states, {v.wall_time:.4f} s)"
                if hasattr(v, "states_checked")
                else f" ({v.boxes_explored} boxes, {v.wall_time:.4f} s)")]
    ces = v.counterexamples if hasattr(v, "counterexamples") else (
        [v.witness] if v.witness else [])
    for point, scores in ces[:10]:
        lines.append(f"  counterexample point={list(point)} scores={list(scores)}")
    if len(ces) > 10:
        lines.append(f"  ... {len(ces) - 10} more counterexamples")
    return lines


def _bench_outputs(args, rows, title, ylabel):
    if not args.out_dir:
        return {}
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "bench.csv"
    fig_path = out_dir / "bench.png"
    write_bench_csv(csv_path, rows)
    write_bench_figure(
        fig_path,
        [r["label"] for r in rows],
        [r["seconds"] for r in rows],
        title,
        ylabel,
    )
    return {"csv": str(csv_path), "figure": str(fig_path)}


def _cmd_gen_table(args) -> tuple[int, RunReport, list[str]]:
    scheme = _read(args.scheme, load_scheme, "scheme")
    t0 = time.perf_counter()
    try:
        table = generate_synthetic_table(scheme, tau=args.tau, alpha_prev=args.alpha_prev)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    t_gen = time.perf_counter() - t0
    t0 = time.perf_counter()
    save_table(table, args.out)
    t_save = time.perf_counter() - t0
    report = RunReport(
        "gen-table",
        {"scheme": args.scheme, "out": args.out, "tau": args.tau, "alpha_prev": args.alpha_prev},
        {"generate_s": t_gen, "save_s": t_save},
        {"grid_size": scheme.grid_size},
        __version__,
    )
    return EXIT_HOLDS, report, [f"wrote {scheme.grid_size} table rows to {args.out}"]


def _cmd_train(args) -> tuple[int, RunReport, list[str]]:
    table = _read(args.table, load_table, "table")
    cfg_kwargs = {}
    if args.config:
        raw = _read(args.config, lambda p: json.loads(Path(p).read_text()), "config")
        cfg_kwargs.update(raw.get("train", raw))
    for key, val in (
        ("shape", tuple(int(w) for w in args.shape.split(",")) if args.shape else None),
        ("epochs", args.epochs),
        ("batch_size", args.batch_size),
        ("learning_rate", args.lr),
        ("asym_weight", args.asym_weight),
        ("seed", args.seed),
    ):
        if val is not None:
            cfg_kwargs[key] = val
    if "shape" in cfg_kwargs:
        cfg_kwargs["shape"] = tuple(cfg_kwargs["shape"])
    try:
        cfg = TrainConfig(**cfg_kwargs)
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad training configuration: {exc}") from exc
    losses: list[float] = []
    t0 = time.perf_counter()
    net = train(table, cfg, name=args.name, on_epoch=lambda e, l: losses.append(l))
    elapsed = time.perf_counter() - t0
    save_network(net, args.out)
    report = RunReport(
        "train",
        {"table": args.table, "out": args.out, "config": vars(args).get("config"),
         **{k: (list(v) if isinstance(v, tuple) else v) for k, v in cfg.__dict__.items()}},
        {"train_s": elapsed},
        {"epoch_losses": losses},
        __version__,
    )
    lines = [f"epoch {i}: loss {l:.6g}" for i, l in enumerate(losses)]
    lines.append(f"trained {cfg.epochs} epochs in {elapsed:.2f} s -> {args.out}")
    return EXIT_HOLDS, report, lines


def _cmd_metrics(args) -> tuple[int, RunReport, list[str]]:
    net = _read(args.net, load_network, "network")
    table = _read(args.table, load_table, "table")
    t0 = time.perf_counter()
    pred = full_grid_eval(net, table.scheme, chunk=args.chunk, jobs=args.jobs)
    elapsed = time.perf_counter() - t0
    acc = policy_accuracy(pred, table)
    l1 = score_error(pred, table, "l1")
    l2 = score_error(pred, table, "l2")
    report = RunReport(
        "metrics",
        {"net": args.net, "table": args.table},
        {"grid_eval_s": elapsed},
        {"policy_accuracy": acc, "score_l1_error": l1, "score_l2_error": l2},
        __version__,
    )
    lines = [
        f"policy accuracy : {acc:.4%}",
        f"score l1 error  : {l1:.6g}",
        f"score l2 error  : {l2:.6g}",
    ]
    return EXIT_HOLDS, report, lines


def _cmd_verify(args) -> tuple[int, RunReport, list[str]]:
    net = _read(args.net, load_network, "network")
    scheme = _read(args.scheme, load_scheme, "scheme")
    prop = _pick_property(args.prop, args.prop_name)
    verdict = verify(net, scheme, prop, chunk=args.chunk, jobs=args.jobs,
                     max_counterexamples=args.max_counterexamples)
    report = RunReport(
        "verify",
        {"net": args.net, "scheme": args.scheme, "prop": args.prop, "property": prop.name},
        {"verify_s": verdict.wall_time},
        {"verdicts": [verdict.to_dict(prop.name)]},
        __version__,
    )
    code = EXIT_HOLDS if verdict.holds else EXIT_VIOLATED
    return code, report, _verdict_lines(prop.name, verdict)


def _cmd_verify_all(args) -> tuple[int, RunReport, list[str]]:
    net = _read(args.net, load_network, "network")
    scheme = _read(args.scheme, load_scheme, "scheme")
    props = _read(args.prop, lambda p: parse_property_file(Path(p).read_text()), "property")
    verdicts = verify_all(net, scheme, props, chunk=args.chunk, jobs=args.jobs,
                          max_counterexamples=args.max_counterexamples)
    report = RunReport(
        "verify-all",
        {"net": args.net, "scheme": args.scheme, "prop": args.prop},
        {"verify_s": max((v.wall_time for v in verdicts.values()), default=0.0)},
        {"verdicts": [v.to_dict(name) for name, v in verdicts.items()]},
        __version__,
    )
    lines = []
    for name, v in verdicts.items():
        lines.extend(_verdict_lines(name, v))
    code = EXIT_HOLDS if all(v.holds for v in verdicts.values()) else EXIT_VIOLATED
    return code, report, lines


def _cmd_grid_eval(args) -> tuple[int, RunReport, list[str]]:
    net = _read(args.net, load_network, "network")
    scheme = _read(args.scheme, load_scheme, "scheme")
    t0 = time.perf_counter()
    scores = full_grid_eval(net, scheme, chunk=args.chunk, jobs=args.jobs)
    elapsed = time.perf_counter() - t0
    if args.out:
        np.savetxt(args.out, scores, fmt="%.9g")
    report = RunReport(
        "grid-eval",
        {"net": args.net, "scheme": args.scheme, "out": args.out},
        {"grid_eval_s": elapsed},
        {"grid_size": scheme.grid_size},
        __version__,
    )
    lines = [f"evaluated {scheme.grid_size} states in {elapsed:.3f} s"
             f" ({scheme.grid_size / max(elapsed, 1e-12):.0f} states/s)"]
    if args.out:
        lines.append(f"wrote scores to {args.out}")
    return EXIT_HOLDS, report, lines


def _cmd_bench_overhead(args) -> tuple[int, RunReport, list[str]]:
    net = _read(args.net, load_network, "network")
    scheme = _read(args.scheme, load_scheme, "scheme")
    rng = np.random.default_rng(args.seed)
    los = np.array([a.lo for a in scheme.axes])
    his = np.array([a.hi for a in scheme.axes])
    xs = rng.uniform(los, his, size=(args.points, scheme.n))
    # warm both paths so jit/cache effects stay out of the measurement
    forward_batch(net, quantize_batch(scheme, xs[:1024]))
    forward_batch(net, xs[:1024])
    t0 = time.perf_counter()
    forward_batch(net, xs)
    t_fwd = time.perf_counter() - t0
    t0 = time.perf_counter()
    forward_batch(net, quantize_batch(scheme, xs))
    t_both = time.perf_counter() - t0
    overhead = t_both / t_fwd - 1.0
    rows = [
        {"label": "forward", "seconds": t_fwd, "points": args.points},
        {"label": "quantize+forward", "seconds": t_both, "points": args.points},
    ]
    artifacts = _bench_outputs(args, rows, "Input-quantization runtime overhead", "seconds")
    report = RunReport(
        "bench-overhead",
        {"net": args.net, "scheme": args.scheme, "points": args.points, "seed": args.seed},
        {"forward_s": t_fwd, "quantize_forward_s": t_both},
        {"relative_overhead": overhead, **artifacts},
        __version__,
    )
    lines = [
        f"forward only      : {t_fwd:.3f} s",
        f"quantize+forward  : {t_both:.3f} s",
        f"relative overhead : {overhead:+.2%}",
    ]
    lines.extend(f"wrote {v}" for v in artifacts.values())
    return EXIT_HOLDS, report, lines


def _cmd_bench_compare(args) -> tuple[int, RunReport, list[str]]:
    net = _read(args.net, load_network, "network")
    scheme = _read(args.scheme, load_scheme, "scheme")
    prop = _pick_property(args.prop, args.prop_name)
    enum_verdict = verify(net, scheme, prop, chunk=args.chunk, jobs=args.jobs)
    interval_verdict = bisect_verify(net, scheme, prop, max_boxes=args.max_boxes)
    rows = [
        {"label": "enumeration", "seconds": enum_verdict.wall_time,
         "status": enum_verdict.status, "work": enum_verdict.states_checked},
        {"label": "interval+bisection", "seconds": interval_verdict.wall_time,
         "status": interval_verdict.status, "work": interval_verdict.boxes_explored},
    ]
    artifacts = _bench_outputs(args, rows, f"Verifier wall time ({prop.name})", "seconds")
    report = RunReport(
        "bench-compare",
        {"net": args.net, "scheme": args.scheme, "prop": args.prop, "property": prop.name,
         "max_boxes": args.max_boxes},
        {"enum_s": enum_verdict.wall_time, "interval_s": interval_verdict.wall_time},
        {"verdicts": [enum_verdict.to_dict(prop.name), interval_verdict.to_dict(prop.name)],
         **artifacts},
        __version__,
    )
    lines = [
        f"enumeration        : {enum_verdict.status.upper()} in {enum_verdict.wall_time:.4f} s"
        f" ({enum_verdict.states_checked} states)",
        f"interval+bisection : {interval_verdict.status.upper()}"
        f" in {interval_verdict.wall_time:.4f} s"
        f" ({interval_verdict.boxes_explored} boxes)",
    ]
    lines.extend(f"wrote {v}" for v in artifacts.values())
    if not enum_verdict.holds or interval_verdict.status == "violated":
        return EXIT_VIOLATED, report, lines
    if interval_verdict.status == "unknown":
        return EXIT_UNKNOWN, report, lines
    return EXIT_HOLDS, report, lines


_COMMANDS = {
    "gen-table": _cmd_gen_table,
    "train": _cmd_train,
    "metrics": _cmd_metrics,
    "verify": _cmd_verify,
    "verify-all": _cmd_verify_all,
    "grid-eval": _cmd_grid_eval,
    "bench-overhead": _cmd_bench_overhead,
    "bench-compare": _cmd_bench_compare,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_USAGE
    try:
        code, report, lines = _COMMANDS[args.cmd](args)
    except CliError as exc:
        print(f"gridverify: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    _emit(report, args, lines)
    return code


if __name__ == "__main__":
    sys.exit(main())
