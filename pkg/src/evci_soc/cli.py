"""Command-line pipeline: gen -> train -> spoof -> detect -> eval -> report.

Every stage writes into ``<out>/<stage>/`` together with a ``manifest.json``
and reads its inputs only from sibling stage directories.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from .detector import (
    CLASSES,
    DetectorConfig,
    compute_residuals,
    detect,
    dumps_verdicts,
    evaluate,
    calibrate_threshold,
    loads_verdicts,
)
from .errors import ConfigError, EvciError, ParseError
from .injector import DEFAULT_GUARD, LABELS, build_plan, inject, read_plan, write_plan
from .ridge import (
    DEFAULT_FOLDS,
    REFERENCE_ALPHA,
    CvConfig,
    design_matrix,
    fit_least_squares,
    fit_mean,
    grid_search_cv,
    load_model,
    mse,
    predict,
    save_model,
)
from .simulator import SimConfig, config_dict, load_config, schedule_sessions, simulate, write_sessions
from .telemetry import (
    FLOAT_FMT,
    PORTS,
    SECONDS_PER_DAY,
    DeltaSocSeries,
    PortId,
    compute_delta_soc,
    load_series,
    serialize_series,
    split_dataset,
)

OUTPUT_ROOT_ENV = "EVCI_SOC_OUTPUT_ROOT"
EXIT_OK, EXIT_USAGE, EXIT_ANOMALY = 0, 1, 2

REFERENCE_PORT_MSE = {
    PortId.EV0_Terra53: 0.000194,
    PortId.EV1_TerraHP_Cord_a: 0.000217,
    PortId.EV1_TerraHP_Cord_b: 0.000180,
    PortId.EV2_TerraHP_Cord_a: 0.000324,
    PortId.EV2_TerraHP_Cord_b: 0.000129,
    PortId.EV3_TerraHP: 0.000356,
}
REFERENCE_MODEL_MSE = {
    "Linear regression (fit_intercept=false)": 1.771121117,
    "Multi-layer perceptron": 1.77119094,
    "Support vector regression": 1.77747376,
    "Random forest (230 trees)": 2.01821433,
    "Ridge regression (alpha=10)": 0.000194,
}
REFERENCE_ACCURACY = {"DecimalShift": 0.9931, "Incremental": 0.9084, "Random": 0.93}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


@dataclass
class RunManifest:
    command: str
    config_path: Optional[str]
    inputs: List[str]
    outputs: List[str]
    seed: Optional[int]
    tool_version: str = __version__
    wall_clock_s: float = 0.0
    params: Dict[str, object] = field(default_factory=dict)

    def write(self, stage_dir: Path) -> None:
        (stage_dir / "manifest.json").write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def _stage_dir(root: Path, stage: str) -> Path:
    d = root / stage
    d.mkdir(parents=True, exist_ok=True)
    return d


def _require(path: Path, what: str) -> Path:
    if not path.is_file():
        raise ConfigError(f"missing {what}: {path} (run the producing stage first)")
    return path


def _read_manifest(root: Path, stage: str) -> dict:
    path = _require(root / stage / "manifest.json", f"{stage} manifest")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed manifest {path}: {exc.msg}", exc.lineno) from None


def _ports(arg: Optional[str]) -> List[PortId]:
    if arg is None:
        return list(PORTS)
    try:
        return [PortId.parse(arg)]
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _split(root: Path):
    man = _read_manifest(root, "train")
    series = load_series(_require(root / "gen" / "telemetry.csv", "telemetry"))
    return split_dataset(series, man["params"]["train_seconds"], man["params"]["test_seconds"])


# --------------------------------------------------------------------- stages

def cmd_gen(args, root: Path) -> int:
    overrides = {"seed": args.seed}
    if args.days is not None:
        overrides["duration"] = int(round(args.days * SECONDS_PER_DAY))
    if args.config:
        cfg = load_config(args.config, **overrides)
    else:
        cfg = SimConfig(**{k: v for k, v in overrides.items() if v is not None})
    out = _stage_dir(root, "gen")
    sessions = schedule_sessions(cfg)
    series = simulate(cfg, sessions)
    serialize_series(series, out / "telemetry.csv")
    write_sessions(sessions, out / "sessions.csv")
    (out / "config.json").write_text(json.dumps(config_dict(cfg), indent=2, sort_keys=True) + "\n")
    args.manifest = RunManifest(
        "gen", args.config, [], ["telemetry.csv", "sessions.csv", "config.json"], cfg.seed,
        params={"duration": cfg.duration, "sessions": len(sessions)},
    )
    args.stage_dir = out
    print(f"generated {len(series)} s of telemetry with {len(sessions)} sessions -> {out}")
    return EXIT_OK


def cmd_train(args, root: Path) -> int:
    series = load_series(_require(root / "gen" / "telemetry.csv", "telemetry"))
    train_s = int(round(args.train_days * SECONDS_PER_DAY))
    test_s = int(round(args.test_days * SECONDS_PER_DAY))
    train, test = split_dataset(series, train_s, test_s)
    out = _stage_dir(root, "train")
    (out / "models").mkdir(exist_ok=True)
    cv = CvConfig(folds=args.folds, seed=args.seed)
    rows = []
    outputs = []
    for port in _ports(args.port):
        dtr = design_matrix(train, port, include_cs=not args.no_cs).clean()
        dte = design_matrix(test, port, include_cs=not args.no_cs).clean()
        model, report = grid_search_cv(dtr.X, dtr.y, cv, dtr.feature_names)
        test_mse = mse(dte.y, predict(model, dte.X))
        report = report.with_test_mse(test_mse)
        mean_mse = mse(dte.y, predict(fit_mean(dtr.X, dtr.y), dte.X))
        ls_mse = mse(dte.y, predict(fit_least_squares(dtr.X, dtr.y), dte.X))
        threshold = calibrate_threshold(np.abs(predict(model, dtr.X) - dtr.y), args.policy)
        save_model(model, out / "models" / f"{port.value}.model")
        (out / f"fit_report_{port.value}.csv").write_text(report.to_csv())
        outputs += [f"models/{port.value}.model", f"fit_report_{port.value}.csv"]
        rows.append([port.value, model.alpha, report.train_mse, test_mse, mean_mse, ls_mse, threshold])
        print(f"{port.value}: alpha={model.alpha:.6g} test MSE={test_mse:.3e} threshold={threshold:.3e}")
    with open(out / "summary.csv", "w", newline="") as fh:
        fh.write("port,chosen_alpha,train_mse,test_mse,mean_baseline_mse,ls_baseline_mse,threshold\n")
        for r in rows:
            fh.write(r[0] + "," + ",".join(FLOAT_FMT % v for v in r[1:]) + "\n")
    gen_seed = _read_manifest(root, "gen").get("seed")
    args.manifest = RunManifest(
        "train", None, ["../gen/telemetry.csv"], outputs + ["summary.csv"], args.seed,
        params={"train_seconds": train_s, "test_seconds": test_s, "folds": args.folds,
                "policy": args.policy, "include_cs": not args.no_cs, "gen_seed": gen_seed},
    )
    args.stage_dir = out
    return EXIT_OK


def _write_delta_csv(path: Path, deltas: List[DeltaSocSeries], labels: List[np.ndarray]) -> None:
    n = len(deltas[0])
    cols = [np.arange(n)]
    header = ["index"]
    fmts = ["%d"]
    for d, lab in zip(deltas, labels):
        header += [f"dsoc_{d.port.value}", f"mask_{d.port.value}", f"label_{d.port.value}"]
        cols += [d.values, d.transition_mask.astype(int), lab]
        fmts += [FLOAT_FMT, "%d", "%d"]
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    np.savetxt(buf, np.column_stack(cols), fmt=fmts, delimiter=",")
    # integer label codes are written as names for readability
    text = buf.getvalue().splitlines()
    out = [text[0]]
    label_cols = [3 + 3 * k for k in range(len(deltas))]
    for line in text[1:]:
        cells = line.split(",")
        for c in label_cols:
            cells[c] = LABELS[int(cells[c])]
        out.append(",".join(cells))
    path.write_text("\n".join(out) + "\n")


def read_delta_csv(path: Path) -> Dict[PortId, tuple]:
    with open(_require(path, "spoofed ΔSoC table"), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "index" or (len(header) - 1) % 3:
            raise ParseError("malformed ΔSoC table header", 1)
        ports = [PortId.parse(h[len("dsoc_"):]) for h in header[1::3]]
        vals, masks, labs = ([[] for _ in ports] for _ in range(3))
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields", lineno)
            try:
                for k in range(len(ports)):
                    vals[k].append(float(row[1 + 3 * k]))
                    masks[k].append(row[2 + 3 * k] == "1")
                    labs[k].append(LABELS.index(row[3 + 3 * k]))
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
    return {
        p: (DeltaSocSeries(p, np.array(vals[k]), np.array(masks[k], dtype=bool)), np.array(labs[k], dtype=np.int8))
        for k, p in enumerate(ports)
    }


def cmd_spoof(args, root: Path) -> int:
    _, test = _split(root)
    ports = _ports(args.port)
    clean = [compute_delta_soc(test, p) for p in PORTS]
    targets = [d for d in clean if d.port in ports]
    plan = build_plan(targets, args.per_kind, length=args.window, guard=args.guard, seed=args.seed,
                      source="gen/telemetry.csv")
    spoofed, labels = [], []
    for d in clean:
        s, lab = inject(d, plan)
        spoofed.append(s)
        labels.append(lab)
    out = _stage_dir(root, "spoof")
    write_plan(plan, out / "plan.csv")
    _write_delta_csv(out / "delta.csv", spoofed, labels)
    args.manifest = RunManifest(
        "spoof", None, ["../gen/telemetry.csv", "../train/manifest.json"], ["plan.csv", "delta.csv"], args.seed,
        params={"per_kind": args.per_kind, "window": args.window, "guard": args.guard,
                "ports": [p.value for p in ports], "events": len(plan.events)},
    )
    args.stage_dir = out
    print(f"injected {len(plan.events)} spoof windows -> {out}")
    return EXIT_OK


def _thresholds(root: Path) -> Dict[PortId, float]:
    path = _require(root / "train" / "summary.csv", "training summary")
    with open(path, newline="") as fh:
        return {PortId.parse(r["port"]): float(r["threshold"]) for r in csv.DictReader(fh)}


def cmd_detect(args, root: Path) -> int:
    _, test = _split(root)
    train_man = _read_manifest(root, "train")
    include_cs = train_man["params"].get("include_cs", True)
    table = read_delta_csv(root / "spoof" / "delta.csv")
    thresholds = _thresholds(root)
    verdicts, clean_verdicts = [], []
    used = {}
    for port in _ports(args.port):
        if port not in thresholds:
            continue
        model = load_model(_require(root / "train" / "models" / f"{port.value}.model", f"model for {port.value}"))
        pred = predict(model, design_matrix(test, port, include_cs).X)
        spoofed, _ = table[port]
        clean = compute_delta_soc(test, port)
        thr = args.threshold if args.threshold is not None else thresholds[port]
        cfg = DetectorConfig(thr, max_iter=args.window)
        used[port.value] = thr
        verdicts += detect(compute_residuals(spoofed, pred), cfg, spoofed.transition_mask)
        clean_verdicts += detect(compute_residuals(clean, pred), cfg, clean.transition_mask)
    out = _stage_dir(root, "detect")
    (out / "verdicts.csv").write_text(dumps_verdicts(verdicts))
    (out / "clean_verdicts.csv").write_text(dumps_verdicts(clean_verdicts))
    args.manifest = RunManifest(
        "detect", None, ["../gen/telemetry.csv", "../train/models", "../spoof/delta.csv"],
        ["verdicts.csv", "clean_verdicts.csv"], None,
        params={"window": args.window, "thresholds": used, "test_samples": len(test) - 1},
    )
    args.stage_dir = out
    print(f"{len(verdicts)} anomalous windows confirmed ({len(clean_verdicts)} on clean data)")
    return EXIT_ANOMALY if verdicts else EXIT_OK


def cmd_eval(args, root: Path) -> int:
    plan = read_plan(_require(root / "spoof" / "plan.csv", "spoof plan"))
    verdicts = loads_verdicts(_require(root / "detect" / "verdicts.csv", "verdicts").read_text())
    clean = loads_verdicts(_require(root / "detect" / "clean_verdicts.csv", "clean verdicts").read_text())
    dman = _read_manifest(root, "detect")
    n_ports = max(1, len(dman["params"]["thresholds"]))
    report = evaluate(verdicts, plan.events, clean, dman["params"]["test_samples"] * n_ports,
                      dman["params"]["window"])
    out = _stage_dir(root, "eval")
    (out / "report.txt").write_text(report.to_text())
    (out / "confusion.csv").write_text(report.confusion_csv())
    with open(out / "accuracy.csv", "w", newline="") as fh:
        fh.write("class,accuracy\n")
        for c in CLASSES:
            acc = report.accuracy[c]
            fh.write(f"{c},{'' if acc is None else FLOAT_FMT % acc}\n")
        fh.write(f"overall,{'' if report.overall_accuracy is None else FLOAT_FMT % report.overall_accuracy}\n")
        fh.write(f"false_positive_windows,{report.false_positive_windows}\n")
    args.manifest = RunManifest(
        "eval", None, ["../spoof/plan.csv", "../detect/verdicts.csv", "../detect/clean_verdicts.csv"],
        ["report.txt", "confusion.csv", "accuracy.csv"], None,
    )
    args.stage_dir = out
    sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_report(args, root: Path) -> int:
    with open(_require(root / "train" / "summary.csv", "training summary"), newline="") as fh:
        summary = list(csv.DictReader(fh))
    eval_text = _require(root / "eval" / "report.txt", "evaluation report").read_text()
    with open(_require(root / "eval" / "accuracy.csv", "accuracy table"), newline="") as fh:
        acc = {r["class"]: r["accuracy"] for r in csv.DictReader(fh)}
    train_man = _read_manifest(root, "train")
    lines = [f"evci_soc {__version__} run summary ({root})", ""]
    lines.append("Per-port ΔSoC regression (test split, transitions excluded)")
    lines.append(f"{'port':<20} {'alpha':>10} {'ridge MSE':>11} {'mean MSE':>11} {'LS MSE':>11} {'reference':>10}")
    for r in summary:
        port = PortId.parse(r["port"])
        lines.append(
            f"{port.value:<20} {float(r['chosen_alpha']):>10.4g} {float(r['test_mse']):>11.3e} "
            f"{float(r['mean_baseline_mse']):>11.3e} {float(r['ls_baseline_mse']):>11.3e} "
            f"{REFERENCE_PORT_MSE[port]:>10.6f}"
        )
    lines.append(f"cross-validation folds: {train_man['params']['folds']} (reference k = {DEFAULT_FOLDS}); "
                 f"reference alpha = {REFERENCE_ALPHA}")
    lines.append("")
    lines.append("Reference model comparison (fixed reference values, not recomputed here):")
    for name, value in REFERENCE_MODEL_MSE.items():
        lines.append(f"  {name:<42} MSE {value}")
    lines.append("")
    lines.append(f"{'class':<13} {'measured':>10} {'reference':>10}")
    for c in CLASSES:
        measured = "n/a" if not acc.get(c) else f"{100 * float(acc[c]):.2f}%"
        lines.append(f"{c:<13} {measured:>10} {100 * REFERENCE_ACCURACY[c]:>9.2f}%")
    lines.append("")
    lines.append(eval_text.rstrip())
    text = "\n".join(lines) + "\n"
    out = _stage_dir(root, "report")
    (out / "report.txt").write_text(text)
    args.manifest = RunManifest(
        "report", None, ["../train/summary.csv", "../eval/report.txt", "../eval/accuracy.csv"], ["report.txt"], None
    )
    args.stage_dir = out
    sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen, "train": cmd_train, "spoof": cmd_spoof,
    "detect": cmd_detect, "eval": cmd_eval, "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="evci-soc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--out", default=None,
                       help=f"run root directory (default ${OUTPUT_ROOT_ENV} or ./runs)")
        p.add_argument("--config", default=None, help="INI run config ([sim] and [bess] sections)")
        return p

    p = common(sub.add_parser("gen", help="simulate telemetry and sessions"))
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--days", type=float, default=None, help="simulated duration (default 5)")

    p = common(sub.add_parser("train", help="fit per-port ridge models with grid-search CV"))
    p.add_argument("--seed", type=int, default=0, help="fold shuffle seed")
    p.add_argument("--port", default=None)
    p.add_argument("--train-days", type=float, default=4.0)
    p.add_argument("--test-days", type=float, default=1.0)
    p.add_argument("--folds", type=int, default=DEFAULT_FOLDS)
    p.add_argument("--policy", choices=("sigma", "quantile"), default="sigma")
    p.add_argument("--no-cs", action="store_true", help="drop the charge-status feature")

    p = common(sub.add_parser("spoof", help="inject spoofing windows into the test ΔSoC"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--port", default=None)
    p.add_argument("--per-kind", type=int, default=10, help="windows per attack kind and port")
    p.add_argument("--window", type=int, default=10)
    p.add_argument("--guard", type=int, default=DEFAULT_GUARD)

    p = common(sub.add_parser("detect", help="residual-threshold detection; exit 2 on anomalies"))
    p.add_argument("--port", default=None)
    p.add_argument("--threshold", type=float, default=None, help="override calibrated thresholds")
    p.add_argument("--window", type=int, default=10)

    common(sub.add_parser("eval", help="score verdicts against the injected plan"))
    common(sub.add_parser("report", help="summarize the run next to fixed reference values"))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    root = Path(args.out or os.environ.get(OUTPUT_ROOT_ENV) or "runs")
    started = time.perf_counter()
    try:
        status = COMMANDS[args.command](args, root)
    except (UsageError, EvciError, FileNotFoundError) as exc:
        print(f"error: {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    manifest = args.manifest
    manifest.wall_clock_s = round(time.perf_counter() - started, 3)
    if manifest.config_path is None:
        manifest.config_path = args.config
    manifest.write(args.stage_dir)
    return status


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


if __name__ == "__main__":
    sys.exit(main())
