"""Command-line entry point: generate, infer, evaluate, baseline, benchmark, lag-hist.

Every command writes its outputs through a staging directory (nothing is
left behind on failure) together with ``manifest.json``, from which
``funconn replay`` re-runs the command.

Exit codes: 0 success, 2 invalid arguments or configuration, 3 unreadable
input, 4 empty or unusable event log, 5 parameter fitting failed.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._io import read_kv, staged_output
from .baseline import CorrelationBaseline
from .benchmark import BenchmarkSpec, run_benchmark, spec_dict, summarize, write_rows
from .evaluation import (connected_components, groups_from_membership, match_and_score,
                         write_group_report, write_report)
from .events import (EventLogError, WindowSpec, estimate_tau_max, lag_cooccurrence_histogram,
                     load_event_log)
from .model import EdgeProbabilities, FitConfig, ModelParams, PairHistory, fit, infer_topology
from .scoring import score_windows, write_bin_scores, write_scores
from .synth import GroundTruth, SyntheticConfig, generate, reference_config

logger = logging.getLogger("funconn")

EXIT_USAGE, EXIT_INPUT, EXIT_EMPTY, EXIT_FIT = 2, 3, 4, 5


class CommandError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _bool(text: str) -> bool:
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class _Run:
    """Collects per-stage timings and writes the manifest."""

    def __init__(self, args):
        self.args = args
        self.timings: dict[str, float] = {}
        self._t = time.perf_counter()

    def stage(self, name):
        now = time.perf_counter()
        self.timings[name] = round(now - self._t, 6)
        self._t = now

    def write_manifest(self, tmp: Path, inputs, config: dict):
        args = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(self.args).items()
                if k not in ("func",)}
        manifest = {
            "tool": "funconn",
            "version": __version__,
            "command": self.args.command,
            "args": args,
            "seed": self.args.seed,
            "config": config,
            "inputs": {str(p): _sha256(p) for p in inputs},
            "outputs": sorted(p.name for p in tmp.iterdir()) + ["manifest.json"],
            "timings_s": self.timings,
        }
        with open(tmp / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _open_w(path):
    return open(path, "w", encoding="utf-8", newline="\n")


def _load_log(args):
    try:
        log = load_event_log(args.events, args.format, args.sample_period)
    except FileNotFoundError as exc:
        raise CommandError(f"cannot read {args.events}: {exc.strerror}", EXIT_INPUT) from None
    except IsADirectoryError:
        raise CommandError(f"cannot read {args.events}: is a directory", EXIT_INPUT) from None
    except EventLogError as exc:
        code = EXIT_EMPTY if "empty input" in str(exc) else EXIT_INPUT
        raise CommandError(f"{args.events}: {exc}", code) from None
    return log


# -- commands ------------------------------------------------------------------

def cmd_generate(args) -> None:
    run = _Run(args)
    try:
        if args.config:
            cfg = SyntheticConfig.read(args.config)
        else:
            cfg = reference_config()
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.n_change is not None:
            overrides["n_change"] = args.n_change
        if overrides:
            cfg = SyntheticConfig.from_mapping({**_config_dict(cfg), **overrides})
    except KeyError as exc:
        raise CommandError(f"invalid config: unknown key {exc.args[0]!r}", EXIT_USAGE) from None
    except ValueError as exc:
        raise CommandError(f"invalid config: {exc}", EXIT_USAGE) from None
    except FileNotFoundError as exc:
        raise CommandError(f"cannot read {args.config}: {exc.strerror}", EXIT_INPUT) from None
    log, gt = generate(cfg)
    run.stage("generate")
    with staged_output(args.out) as tmp:
        from .events import write_event_log
        write_event_log(log, tmp / "events.csv")
        with _open_w(tmp / "groundtruth.csv") as fh:
            gt.write(fh)
        cfg.write(tmp / "config.txt")
        run.stage("write")
        run.write_manifest(tmp, [args.config] if args.config else [], _config_dict(cfg))
    print(f"wrote {log.n_events} events for {len(log)} nodes to {args.out}")


def _config_dict(cfg) -> dict:
    from dataclasses import asdict
    return asdict(cfg)


def cmd_infer(args) -> None:
    run = _Run(args)
    if args.windows is not None and args.window_length is not None:
        raise CommandError("give at most one of --windows and --window-length", EXIT_USAGE)
    log = _load_log(args)
    if log.n_events == 0:
        raise CommandError("event log holds no events", EXIT_EMPTY)
    run.stage("load")
    try:
        spec = WindowSpec.for_record(log.T, args.windows, args.window_length)
    except ValueError as exc:
        raise CommandError(str(exc), EXIT_USAGE) from None
    hist_counts = None
    if args.tau_max is None:
        hist = lag_cooccurrence_histogram(log, args.max_lag)
        try:
            tau_max = estimate_tau_max(hist, args.tau_fraction)
        except ValueError as exc:
            raise CommandError(f"cannot estimate tau_max: {exc}", EXIT_EMPTY) from None
        hist_counts = hist.counts
    else:
        tau_max = args.tau_max
    run.stage("tau_max")
    tables = score_windows(log, spec, tau_max)
    run.stage("score")
    history = PairHistory(tables)
    run.stage("history")
    try:
        if args.params:
            params = ModelParams.read(args.params)
            fit_info = {"fitted": False}
        else:
            init = ModelParams(alpha=args.alpha0, beta=args.beta0, d=args.d0, k=args.k0,
                               th=args.th, p0=args.p0)
            cfg = FitConfig(args.lr, args.max_iter, args.tol, args.seed or 0)
            res = fit(history, cfg, init, args.decay_on_silence)
            params = res.params
            fit_info = {"fitted": True, "initial_error": res.initial_error,
                        "error": res.error, "iterations": res.n_iter}
    except FileNotFoundError as exc:
        raise CommandError(f"cannot read {args.params}: {exc.strerror}", EXIT_INPUT) from None
    except ValueError as exc:
        raise CommandError(f"parameter fitting failed: {exc}", EXIT_FIT) from None
    run.stage("fit")
    probs = EdgeProbabilities(history, params, args.decay_on_silence)
    windows = range(spec.num_windows) if args.topology_windows == "all" else [spec.num_windows - 1]
    with staged_output(args.out) as tmp:
        with _open_w(tmp / "scores.csv") as fh:
            write_scores(tables, fh, args.scores)
        if args.scores == "cooccurring":
            with _open_w(tmp / "bin_scores.csv") as fh:
                write_bin_scores(tables, fh)
        params.write(tmp / "params.txt")
        with _open_w(tmp / "probabilities.csv") as fh:
            probs.write_csv(fh, args.probabilities)
        width = len(str(spec.num_windows - 1))
        for w in windows:
            with _open_w(tmp / f"topology_w{w:0{width}d}.csv") as fh:
                infer_topology(probs, w, args.edge_threshold).write(fh)
        if hist_counts is not None:
            with _open_w(tmp / "lag_histogram.csv") as fh:
                fh.write("lag,count\n")
                fh.writelines(f"{i},{c}\n" for i, c in enumerate(hist_counts.tolist()))
        run.stage("write")
        config = {"window_length": spec.window_length, "num_windows": spec.num_windows,
                  "tau_max": tau_max, "params": _config_dict(params), **fit_info}
        run.write_manifest(tmp, [args.events] + ([args.params] if args.params else []), config)
    print(f"inferred {spec.num_windows} windows (tau_max={tau_max}) into {args.out}")


def _read_topology(path) -> tuple[int, float, list[tuple[str, str]]]:
    window, thr = -1, float("nan")
    edges = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    key, _, val = tok.partition("=")
                    if key == "window":
                        window = int(val)
                    elif key == "edge_threshold":
                        thr = float(val)
                continue
            if line == "node_a,node_b":
                continue
            a, b = line.split(",")[:2]
            edges.append((a, b))
    return window, thr, edges


def cmd_evaluate(args) -> None:
    run = _Run(args)
    try:
        gt = GroundTruth.read(args.groundtruth)
        topologies = [(p, *_read_topology(p)) for p in args.topology]
    except FileNotFoundError as exc:
        raise CommandError(f"cannot read {exc.filename}: {exc.strerror}", EXIT_INPUT) from None
    except (ValueError, KeyError) as exc:
        raise CommandError(f"malformed input: {exc}", EXIT_INPUT) from None
    spec = WindowSpec.for_record(gt.T, args.windows, args.window_length)
    universe = set(gt.nodes)
    rows = []
    for path, window, thr, edges in topologies:
        extra = {n for e in edges for n in e} - universe
        if extra:
            raise CommandError(f"{path}: nodes absent from the ground truth: {sorted(extra)[:5]}",
                               EXIT_INPUT)
        comps = connected_components(edges, universe)
        targets = [window] if window >= 0 else range(spec.num_windows)
        for w in targets:
            _, hi = spec.bounds(w)
            groups = groups_from_membership(dict(zip(gt.nodes, gt.groups_at(hi - 1).tolist())))
            rows.append((w, match_and_score(comps, groups)))
    run.stage("evaluate")
    out = Path(args.out)
    with staged_output(out.parent if str(out.parent) else ".") as tmp:
        with _open_w(tmp / out.name) as fh:
            write_report(rows, fh)
            if len(rows) > 1:
                from ._io import fmt_float
                means = [np.mean([getattr(r, k) for _, r in rows]) for k in
                         ("overall_precision", "overall_sensitivity", "overall_f1")]
                fh.write("mean," + ",".join(fmt_float(float(m)) for m in means) + "\n")
        with _open_w(tmp / f"{out.stem}_groups.csv") as fh:
            write_group_report(rows, fh)
        run.write_manifest(tmp, [args.groundtruth, *args.topology], {})
        os.replace(tmp / "manifest.json", tmp / f"{out.stem}_manifest.json")
    last = rows[-1][1]
    print(f"precision={last.overall_precision:.6g} sensitivity={last.overall_sensitivity:.6g} "
          f"f1={last.overall_f1:.6g}")


def cmd_baseline(args) -> None:
    run = _Run(args)
    log = _load_log(args)
    try:
        model = CorrelationBaseline(args.bin_width, args.z_alpha, args.paper_literal_z).fit(log)
    except ValueError as exc:
        raise CommandError(str(exc), EXIT_USAGE) from None
    snap = model.predict()
    run.stage("baseline")
    with staged_output(args.out) as tmp:
        with _open_w(tmp / "topology.csv") as fh:
            snap.write(fh)
        run.write_manifest(tmp, [args.events], {"n_bins": model.n_bins_,
                                                "sigma_z": model.sigma_z_})
    print(f"{len(snap.edges)} edges at z_alpha={args.z_alpha}")


def cmd_lag_hist(args) -> None:
    run = _Run(args)
    log = _load_log(args)
    hist = lag_cooccurrence_histogram(log, args.max_lag)
    try:
        tau = estimate_tau_max(hist, args.tau_fraction)
    except ValueError as exc:
        raise CommandError(str(exc), EXIT_EMPTY) from None
    run.stage("histogram")
    with staged_output(args.out) as tmp:
        with _open_w(tmp / "lag_histogram.csv") as fh:
            fh.write("lag,count\n")
            fh.writelines(f"{i},{c}\n" for i, c in enumerate(hist.counts.tolist()))
        with _open_w(tmp / "tau_max.txt") as fh:
            fh.write(f"tau_max={tau}\n")
        run.write_manifest(tmp, [args.events], {"tau_max": tau})
    print(f"tau_max={tau}")


def cmd_benchmark(args) -> None:
    run = _Run(args)
    try:
        spec = BenchmarkSpec.read(args.scenario)
    except FileNotFoundError as exc:
        raise CommandError(f"cannot read {args.scenario}: {exc.strerror}", EXIT_INPUT) from None
    except (ValueError, TypeError, json.JSONDecodeError) as exc:
        raise CommandError(f"invalid scenario: {exc}", EXIT_USAGE) from None
    rows = run_benchmark(spec, workers=max(1, args.threads))
    run.stage("benchmark")
    with staged_output(args.out) as tmp:
        with _open_w(tmp / "runs.csv") as fh:
            write_rows(rows, fh, spec.axis)
        with _open_w(tmp / "sweep.csv") as fh:
            write_rows(summarize(rows), fh, spec.axis)
        run.write_manifest(tmp, [args.scenario], spec_dict(spec))
    for r in summarize(rows):
        print(f"{spec.axis}={r['value']} {r['method']}: median F1 {r['best_f1_median']:.3f}")


def cmd_replay(args) -> None:
    with open(args.manifest, encoding="utf-8") as fh:
        manifest = json.load(fh)
    saved = manifest["args"]
    if args.out:
        saved["out"] = args.out
    for path, digest in manifest.get("inputs", {}).items():
        if not Path(path).exists() or _sha256(path) != digest:
            raise CommandError(f"input {path} is missing or changed since the run", EXIT_INPUT)
    parser = build_parser()
    ns = parser.parse_args([saved["command"]] + _required_positionals(saved))
    for k, v in saved.items():
        setattr(ns, k, v)
    ns.func(ns)


def _required_positionals(saved: dict) -> list[str]:
    cmd = saved["command"]
    if cmd in ("infer", "baseline", "lag-hist"):
        return [saved["events"]]
    if cmd == "benchmark":
        return [saved["scenario"]]
    if cmd == "evaluate":
        return list(saved["topology"]) + ["--groundtruth", saved["groundtruth"],
                                          "--out", saved["out"]]
    return []


# -- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--threads", type=int, default=1, help="worker processes")
    common.add_argument("--config", default=None,
                        help="key=value file supplying option defaults")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    events_in = argparse.ArgumentParser(add_help=False)
    events_in.add_argument("events", help="event log (node_id,timestamp)")
    events_in.add_argument("--format", choices=("csv", "ndjson"), default="csv",
                           help="event log format")
    events_in.add_argument("--sample-period", type=float, default=1.0,
                           help="seconds per sample")

    parser = argparse.ArgumentParser(prog="funconn", description=__doc__.splitlines()[0],
                                     formatter_class=fmt)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], formatter_class=fmt,
                       help="synthetic event log with ground truth")
    p.add_argument("--n-change", type=int, default=None,
                   help="nodes moved per change step (overrides the config)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("infer", parents=[common, events_in], formatter_class=fmt,
                       help="score, fit and infer time-varying topologies")
    p.add_argument("--windows", type=int, default=None, help="number of windows (default 100)")
    p.add_argument("--window-length", type=int, default=None, help="window length in samples")
    p.add_argument("--tau-max", type=int, default=None,
                   help="maximum lag; estimated from the lag histogram if omitted")
    p.add_argument("--tau-fraction", type=float, default=0.01,
                   help="negligible tail fraction for estimating tau_max")
    p.add_argument("--max-lag", type=int, default=300, help="histogram range for estimating tau_max")
    p.add_argument("--edge-threshold", type=float, default=0.5,
                   help="probability threshold for topology edges")
    p.add_argument("--th", type=float, default=0.5, help="classification threshold")
    p.add_argument("--p0", type=float, default=0.5, help="initial edge probability")
    p.add_argument("--params", default=None, help="use these parameters instead of fitting")
    p.add_argument("--decay-on-silence", type=_bool, default=True,
                   help="apply the decay d in windows without information")
    p.add_argument("--alpha0", type=float, default=0.1, help="initial alpha")
    p.add_argument("--beta0", type=float, default=0.1, help="initial beta")
    p.add_argument("--d0", type=float, default=0.999, help="initial d")
    p.add_argument("--k0", type=float, default=0.9, help="initial k")
    p.add_argument("--lr", type=float, default=0.01, help="learning rate")
    p.add_argument("--max-iter", type=int, default=500, help="maximum descent iterations")
    p.add_argument("--tol", type=float, default=1e-8,
                   help="stop when |dE| < tol * E(initial)")
    p.add_argument("--probabilities", choices=("all", "informative"), default="all",
                   help="write every pair each window, or tracked pairs at informative windows")
    p.add_argument("--scores", choices=("all", "cooccurring"), default="all",
                   help="write every co-active pair, or co-occurring pairs plus per-bin scores")
    p.add_argument("--topology-windows", choices=("all", "last"), default="all",
                   help="windows for which a topology file is written")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", parents=[common], formatter_class=fmt,
                       help="match topologies against ground truth")
    p.add_argument("topology", nargs="+", help="topology edge-list CSV files")
    p.add_argument("--groundtruth", required=True, help="ground-truth CSV")
    p.add_argument("--windows", type=int, default=None,
                   help="window count used for the inferred run (default 100)")
    p.add_argument("--window-length", type=int, default=None, help="window length in samples")
    p.set_defaults(func=cmd_evaluate, out="report.csv")

    p = sub.add_parser("baseline", parents=[common, events_in], formatter_class=fmt,
                       help="correlation-based static topology")
    p.add_argument("--bin-width", type=int, default=60, help="bin width in samples")
    p.add_argument("--z-alpha", type=float, default=2.33, help="threshold in units of sigma_z")
    p.add_argument("--paper-literal-z", type=_bool, default=False,
                   help="use ln(1-r)/ln(1+r) instead of atanh(r)")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("benchmark", parents=[common], formatter_class=fmt,
                       help="scenario sweep of both methods")
    p.add_argument("scenario", help="scenario JSON file")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("lag-hist", parents=[common, events_in], formatter_class=fmt,
                       help="lag co-occurrence histogram and tau_max")
    p.add_argument("--max-lag", type=int, default=300, help="largest lag counted")
    p.add_argument("--tau-fraction", type=float, default=0.01,
                   help="negligible tail fraction")
    p.set_defaults(func=cmd_lag_hist)

    p = sub.add_parser("replay", formatter_class=fmt, help="re-run a command from its manifest")
    p.add_argument("manifest", help="manifest.json written by an earlier run")
    p.add_argument("--out", default=None, help="output location (default: the original)")
    p.set_defaults(func=cmd_replay, command="replay")
    return parser


def _apply_config_defaults(parser, argv):
    """Re-parse with ``--config`` key=value entries as option defaults."""
    args = parser.parse_args(argv)
    if args.command in ("generate", "replay") or not getattr(args, "config", None):
        return args
    sub = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in sub._actions}
    try:
        values = read_kv(args.config)
    except FileNotFoundError:
        parser.exit(EXIT_INPUT, f"funconn: cannot read config {args.config}\n")
    except ValueError as exc:
        parser.exit(EXIT_USAGE, f"funconn: invalid config: {exc}\n")
    defaults = {}
    for key, raw in values.items():
        dest = key.replace("-", "_")
        if dest not in actions or dest in ("config", "help"):
            parser.exit(EXIT_USAGE, f"funconn: invalid config: unknown key {key!r}\n")
        conv = actions[dest].type or str
        try:
            defaults[dest] = conv(raw)
        except (ValueError, argparse.ArgumentTypeError):
            parser.exit(EXIT_USAGE, f"funconn: invalid config: bad value for {key!r}: {raw!r}\n")
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    args = _apply_config_defaults(parser, argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except CommandError as exc:
        print(f"funconn {args.command}: {exc}", file=sys.stderr)
        return exc.code
    return 0


if __name__ == "__main__":
    sys.exit(main())
