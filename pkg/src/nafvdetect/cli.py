"""Command line: gen, train, features, diagnose, detect, eval.

Settings resolve in order: built-in defaults, then ``--config`` JSON, then
explicit flags. Exit status is 0 on success, 1 on operational errors (bad or
missing files, failed fits) and 2 on usage errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path
from typing import Any, Sequence

from . import baseline as baseline_io
from .detector import DetectorConfig, EventKind
from .features import WeightConfigError, WeightVector, check_weights
from .generator import ScenarioConfig, ScenarioError, gen_scenario, preset, read_labels, save_dataset
from .ingest import read_flow_table
from .metrics import LabelMismatchError, evaluate
from .pipeline import detect, read_events, read_series_csv, score, train_baseline, write_events, write_features_csv
from .timeseries import ArimaSpec, diagnose

log = logging.getLogger("nafvdetect")

CONFIG_FORMAT = "nafv-config/1"
DEFAULTS: dict[str, Any] = {
    "unit_time": 0.8,
    "alpha": 25.0,
    "beta": 2,
    "window": 10,
    "rho": 0.5,
    "refit_interval": 16,
    "min_history": None,
    "weights": "equal",
    "no_filter": False,
    "seed": 0,
    "ipd_bits": 32,
    "score": "nafv",
    "order": [2, 2, 1],
    "scenario": None,
}


class UsageError(Exception):
    pass


def _global_flags() -> argparse.ArgumentParser:
    # SUPPRESS keeps a flag given before the subcommand from being reset by the
    # subparser's own copy of the same option
    p = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    g = p.add_argument_group("global options")
    g.add_argument("--config", type=Path, help="JSON config mirroring these flags")
    g.add_argument("--unit-time", type=float, dest="unit_time", help="sampling window in seconds (default 0.8)")
    g.add_argument("--alpha", type=float, help="outlier threshold on the score (default 25)")
    g.add_argument("--beta", type=int, help="consecutive outliers that start the predictor (default 2)")
    g.add_argument("--window", type=int, help="points in the predictor's sliding window (default 10)")
    g.add_argument("--rho", type=float, help="abnormal fraction of the window that raises the alarm (default 0.5)")
    g.add_argument("--weights", help="equal | pca | w1,w2,w3,w4 (default equal)")
    g.add_argument("--no-filter", dest="no_filter", action="store_true",
                   help="skip the many-to-one filter (ablation)")
    g.add_argument("--seed", type=int, help="random seed for gen (default 0)")
    g.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = argparse.ArgumentParser(prog="nafvdetect", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("gen", parents=[common], help="generate a labelled synthetic flow file")
    p.add_argument("--scenario", default=None, help="normal | flood | flashcrowd | mixed | train (default flood)")
    p.add_argument("--duration", type=float, help="override scenario duration in seconds")
    p.add_argument("--out", type=Path, required=True, help="flow CSV to write (.gz compresses)")
    p.add_argument("--labels", type=Path, required=True, help="labels CSV to write")

    p = sub.add_parser("train", parents=[common], help="train a baseline on a normal flow file")
    p.add_argument("flows", type=Path)
    p.add_argument("--out", type=Path, required=True, help="baseline JSON (bitmap written next to it as .ipd)")
    p.add_argument("--ipd-bits", type=int, dest="ipd_bits", help="bitmap width; 32 = direct IPv4 (default)")

    p = sub.add_parser("features", parents=[common], help="per-window features and scores as CSV")
    p.add_argument("flows", type=Path)
    p.add_argument("--baseline", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None, help="CSV path (default stdout)")

    p = sub.add_parser("diagnose", parents=[common], help="ACF, PACF and Ljung-Box report for a score series")
    p.add_argument("series", type=Path, help="CSV produced by 'features'")
    p.add_argument("--column", default="nafv")
    p.add_argument("--max-lag", type=int, default=20, dest="max_lag")
    p.add_argument("--out-csv", type=Path, dest="out_csv")
    p.add_argument("--out-json", type=Path, dest="out_json", help="JSON path (default stdout)")

    p = sub.add_parser("detect", parents=[common], help="run the detector and write a JSON-lines event log")
    p.add_argument("flows", type=Path)
    p.add_argument("--baseline", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None, help="event log path (default stdout)")
    p.add_argument("--windows", type=int, default=None, help="pad the series to this many windows")
    p.add_argument("--score", choices=("nafv", "weighted"), default=None,
                   help="feed the plain or the weighted score to the detector (default nafv)")

    p = sub.add_parser("eval", parents=[common], help="score an event log against window labels")
    p.add_argument("events", type=Path)
    p.add_argument("labels", type=Path)
    p.add_argument("--out", type=Path, default=None, help="metrics JSON path (default stdout)")
    return parser


def resolve_settings(args: argparse.Namespace) -> dict[str, Any]:
    settings = dict(DEFAULTS)
    config = getattr(args, "config", None)
    if config is not None:
        try:
            loaded = json.loads(config.read_text())
        except OSError as exc:
            raise OSError(f"cannot read config {config}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {config} is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise UsageError(f"config {config} must be a JSON object")
        fmt = loaded.pop("format", CONFIG_FORMAT)
        if fmt != CONFIG_FORMAT:
            raise UsageError(f"config format {fmt!r} not supported (expected {CONFIG_FORMAT!r})")
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        settings.update(loaded)
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    return settings


def _detector_config(s: dict[str, Any]) -> DetectorConfig:
    refit = s["refit_interval"]
    try:
        return DetectorConfig(
            alpha=float(s["alpha"]),
            beta=int(s["beta"]),
            w=int(s["window"]),
            rho=float(s["rho"]),
            refit_interval=math.inf if refit in (None, "inf") else float(refit),
            min_history=s["min_history"],
            order=ArimaSpec(*s["order"]),
        )
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid detector settings: {exc}") from exc


def _weights(s: dict[str, Any]) -> str | WeightVector:
    w = s["weights"]
    if isinstance(w, list):
        w = ",".join(str(v) for v in w)
    if w in ("equal", "pca"):
        return w
    try:
        vec = WeightVector.parse(str(w))
        check_weights(vec, strict=True)
    except WeightConfigError as exc:
        raise UsageError(str(exc)) from exc
    return vec


def _scenario(s: dict[str, Any], name: str | None, duration: float | None) -> ScenarioConfig:
    section = s["scenario"]
    if isinstance(section, dict):
        cfg = ScenarioConfig.from_dict(section)
    else:
        cfg = preset(name or section or "flood")
    if duration is not None:
        cfg.duration = duration
    # an explicit scenario section keeps its own unit time unless one is given
    if s["unit_time"] != DEFAULTS["unit_time"] or not isinstance(section, dict):
        cfg.unit_time = float(s["unit_time"])
    return cfg


def _write_json(obj: Any, path: Path | None) -> None:
    text = json.dumps(obj, indent=2) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        path.write_text(text)


# -- commands ----------------------------------------------------------------------


def cmd_gen(args, s) -> int:
    try:
        cfg = _scenario(s, args.scenario, args.duration)
        scenario = gen_scenario(cfg, seed=int(s["seed"]))
    except ScenarioError as exc:
        raise UsageError(str(exc)) from exc
    save_dataset(scenario, args.out, args.labels)
    counts = {label: scenario.labels.count(label) for label in sorted(set(scenario.labels))}
    log.info("wrote %d records, %d windows %s", len(scenario.table), len(scenario.labels), counts)
    return 0


def cmd_train(args, s) -> int:
    table = read_flow_table(args.flows)
    if len(table) == 0:
        raise ValueError(f"{args.flows}: no flow records to train on")
    bl = train_baseline(
        table, float(s["unit_time"]), filtered=not s["no_filter"], weights=_weights(s), bits=int(s["ipd_bits"])
    )
    baseline_io.save(bl, args.out)
    log.info("baseline: %d windows, max old users %d, mean new users %.3f, %d old users",
             bl.window_count, bl.max_old_users, bl.mean_new_users, bl.old_users.count_marked())
    return 0


def _load_baseline(args, s):
    bl = baseline_io.load(args.baseline)
    if s["no_filter"] and bl.filtered:
        raise UsageError("--no-filter given but the baseline was trained on filtered traffic; retrain with --no-filter")
    w = s["weights"]
    if isinstance(w, list) or (isinstance(w, str) and "," in w):
        # explicit vectors override what was stored at training time
        bl = bl.with_weights(_weights(s))
    if abs(float(s["unit_time"]) - bl.unit_time) > 1e-12 and s["unit_time"] != DEFAULTS["unit_time"]:
        log.warning("using the baseline's unit time %.6g s instead of %.6g s", bl.unit_time, s["unit_time"])
    return bl


def cmd_features(args, s) -> int:
    bl = _load_baseline(args, s)
    ft = score(read_flow_table(args.flows), bl)
    write_features_csv(ft, bl.unit_time, args.out if args.out is not None else "/dev/stdout")
    return 0


def cmd_diagnose(args, s) -> int:
    series = read_series_csv(args.series, args.column)
    report = diagnose(series, ArimaSpec(*s["order"]), max_lag=args.max_lag)
    if args.out_csv is not None:
        with open(args.out_csv, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["lag", "acf", "pacf", "resid_acf", "band"])
            for lag in range(report.acf.size):
                resid = report.resid_acf[lag] if lag < report.resid_acf.size else ""
                writer.writerow([lag, report.acf[lag], report.pacf[lag], resid, report.band])
    _write_json({"format": "nafv-diagnostics/1", **report.as_dict()}, args.out_json)
    return 0


def cmd_detect(args, s) -> int:
    bl = _load_baseline(args, s)
    config = _detector_config(s)
    table = read_flow_table(args.flows)
    use_weighted = (args.score or s["score"]) == "weighted"
    result = detect(table, bl, config, use_weighted=use_weighted, n_windows=args.windows)
    write_events(args.out if args.out is not None else "/dev/stdout", result.events, result.n_windows, config)
    alarms = [ev.k for ev in result.events if ev.kind == EventKind.DDOS_ALARM]
    print(f"{result.n_windows} windows, {len(alarms)} DDoS alarm(s) at {alarms}", file=sys.stderr)
    return 0


def cmd_eval(args, s) -> int:
    header, events = read_events(args.events)
    labels = read_labels(args.labels)
    metrics = evaluate(events, labels, n_windows=int(header.get("windows", len(labels))))
    _write_json(metrics.as_dict(), args.out)
    return 0


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "features": cmd_features,
    "diagnose": cmd_diagnose,
    "detect": cmd_detect,
    "eval": cmd_eval,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = resolve_settings(args)
        return COMMANDS[args.command](args, settings)
    except UsageError as exc:
        print(f"nafvdetect {args.command}: usage error: {exc}", file=sys.stderr)
        return 2
    except LabelMismatchError as exc:
        print(f"nafvdetect {args.command}: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"nafvdetect {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
