"""Command-line entry point: ``ctranatd <subcommand> [flags]``.

Every subcommand logs its resolved configuration first, writes outputs
atomically, and on failure prints a single ``error: <category>: <message>``
line and exits non-zero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from ctranatd import metrics
from ctranatd.errors import ConfigurationError, CTranATDError
from ctranatd.fileio import atomic_write
from ctranatd.models import ARCHITECTURES, ModelConfig, build, canonical_preset, load_model
from ctranatd.preprocess import WindowedDataset, build_dataset, parse_csv, write_csv
from ctranatd.synthetic import SynthConfig, generate_records
from ctranatd.training import TrainConfig, evaluate, repeated_selection, train

log = logging.getLogger("ctranatd")

PRESETS = ("dos", "ddos", "portscan")


def _fraction(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"{text} is not within [0, 1]")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"{text} must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed for every random stream")
    common.add_argument("--verbose", "-v", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="ctranatd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", parents=[common], help="write a synthetic flow-record CSV")
    p.add_argument("--records", type=int, default=12_000)
    p.add_argument("--attack", choices=PRESETS, required=True)
    p.add_argument("--attack-fraction", type=_fraction, default=0.3)
    p.add_argument("--shift-magnitude", type=float, default=3.0, help="shift in normal-traffic std units")
    p.add_argument("--shift-features", type=int, default=5)
    p.add_argument("--uav-count", type=_positive, default=4)
    p.add_argument("--out", required=True)

    p = sub.add_parser("preprocess", parents=[common], help="encode a CSV into a windowed dataset")
    p.add_argument("--input", required=True)
    p.add_argument("--mode", choices=("cicids", "synthetic"), default="synthetic")
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--val-fraction", type=float, default=0.2,
                   help="validation share of the non-test windows, held out before fitting (0: leave to train)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", parents=[common], help="train a model on the dataset's training part")
    p.add_argument("--data", required=True)
    p.add_argument("--preset", choices=PRESETS, required=True)
    p.add_argument("--arch", choices=ARCHITECTURES, default="ctranatd")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=_positive, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--patience", type=_positive, default=5)
    p.add_argument("--val-fraction", type=float, default=0.2,
                   help="used only when the dataset carries no validation windows")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--report", help="per-epoch CSV (default: <out>.report.csv)")

    p = sub.add_parser("eval", parents=[common], help="repeated-selection metrics for a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("test", "train", "all"), default="test")
    p.add_argument("--reps", type=_positive, default=100)
    p.add_argument("--fraction", type=float, default=0.8, help="share of windows per selection")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", required=True, help="metrics CSV")
    p.add_argument("--roc", help="also write ROC points to this CSV")

    p = sub.add_parser("roc", parents=[common], help="ROC points (fpr, tpr, threshold) as CSV")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("test", "train", "all"), default="test")
    p.add_argument("--out", required=True)

    p = sub.add_parser("simulate", parents=[common], help="run an SDN/ledger relay scenario")
    p.add_argument("--scenario", required=True, help="scenario JSON")
    p.add_argument("--ckpt", help="detector checkpoint (required unless --detector oracle)")
    p.add_argument("--detector", choices=("model", "oracle"), default="model")
    p.add_argument("--out", required=True, help="report JSON")
    p.add_argument("--ledger", help="export the chain as newline-delimited block records")

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient verification")
    p.add_argument("--tolerance", type=float, default=1e-4)
    return parser


def _split(ds: WindowedDataset, which: str) -> WindowedDataset:
    if which == "test":
        return ds.test_part()
    if which == "train":
        return ds.train_part()
    return ds


def _write_text(path, text: str) -> None:
    with atomic_write(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def roc_csv(curve: metrics.RocCurve) -> str:
    lines = ["fpr,tpr,threshold"]
    lines += [f"{f!r},{t!r},{th!r}" for f, t, th in curve.points()]
    return "\n".join(lines) + "\n"


def cmd_synth(args) -> None:
    cfg = SynthConfig(
        records=args.records,
        attack=canonical_preset(args.attack),
        attack_fraction=args.attack_fraction,
        shift_magnitude=args.shift_magnitude,
        shift_features=args.shift_features,
        uav_count=args.uav_count,
        seed=args.seed,
    )
    records = generate_records(cfg)
    write_csv(records, args.out)
    log.info("wrote %d records (%d abnormal) to %s", len(records), sum(r.abnormal for r in records), args.out)


def cmd_preprocess(args) -> None:
    parsed = parse_csv(args.input, args.mode)
    ds = build_dataset(
        parsed.records, seed=args.seed, test_fraction=args.test_fraction, val_fraction=args.val_fraction,
        source=str(args.input), skipped=parsed.skipped,
    )
    ds.save(args.out)
    log.info("dataset stats: %s", json.dumps(ds.stats, sort_keys=True))


def cmd_train(args) -> None:
    ds = WindowedDataset.load(args.data)
    cfg = ModelConfig.preset(args.preset, args.arch, seed=args.seed, batch_size=args.batch_size,
                             window=ds.windows.shape[1])
    tcfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
                       patience=args.patience, validation_fraction=args.val_fraction, seed=args.seed)
    log.info("model config: %s", json.dumps(cfg.to_dict(), sort_keys=True))
    model = build(cfg)
    model, report = train(model, ds.train_part(), tcfg)
    model.save(args.out, extra={"schema": ds.schema.to_dict(), "best_epoch": report.best_epoch})
    _write_text(args.report or f"{args.out}.report.csv", report.to_csv())
    log.info("trained %d epochs (best %d); checkpoint %s", report.stopped_epoch, report.best_epoch, args.out)


def cmd_eval(args) -> None:
    model, _ = load_model(args.ckpt)
    ds = _split(WindowedDataset.load(args.data), args.split)
    scores, labels = evaluate(model, ds)
    rep = repeated_selection(scores, labels, reps=args.reps, fraction=args.fraction,
                             seed=args.seed, threshold=args.threshold)
    _write_text(args.out, rep.to_csv())
    if args.roc:
        _write_text(args.roc, roc_csv(metrics.roc_curve(scores, labels)))
    log.info("mean metrics: %s", json.dumps(rep.mean, sort_keys=True))


def cmd_roc(args) -> None:
    model, _ = load_model(args.ckpt)
    scores, labels = evaluate(model, _split(WindowedDataset.load(args.data), args.split))
    _write_text(args.out, roc_csv(metrics.roc_curve(scores, labels)))


def cmd_simulate(args) -> None:
    from ctranatd.relay import OracleDetector, ScenarioConfig, run_scenario

    try:
        raw = json.loads(Path(args.scenario).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"scenario {args.scenario} is not valid JSON: {exc}") from exc
    raw.setdefault("seed", args.seed)
    if args.ckpt:
        raw["detector_checkpoint"] = args.ckpt
    cfg = ScenarioConfig.from_dict(raw)
    log.info("scenario: %s", json.dumps(cfg.__dict__, sort_keys=True))
    detector = OracleDetector() if args.detector == "oracle" else None
    report = run_scenario(cfg, detector)
    with atomic_write(args.out, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    if args.ledger:
        report.ledger.export(args.ledger)
    log.info("delivered=%d dropped=%d chain_valid=%s", report.delivered, report.dropped, report.chain_valid)


def cmd_gradcheck(args) -> int:
    from ctranatd.gradsuite import gradient_suite

    t0 = time.perf_counter()
    reports = gradient_suite(args.tolerance, args.seed)
    for name, rep in reports.items():
        print(f"{name:22s} {rep.summary()}")
    print(f"elapsed {time.perf_counter() - t0:.1f}s")
    return 0 if all(r.passed for r in reports.values()) else 1


COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "eval": cmd_eval,
    "roc": cmd_roc,
    "simulate": cmd_simulate,
    "gradcheck": cmd_gradcheck,
}


def _configure_logging(verbose: bool) -> None:
    # one handler on the package logger, replaced on every call so repeated
    # in-process invocations neither duplicate lines nor touch the root logger
    pkg = logging.getLogger("ctranatd")
    for h in [h for h in pkg.handlers if getattr(h, "_ctranatd_cli", False)]:
        pkg.removeHandler(h)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    handler._ctranatd_cli = True  # type: ignore[attr-defined]
    pkg.addHandler(handler)
    pkg.setLevel(logging.DEBUG if verbose else logging.INFO)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.verbose)
    resolved = {k: v for k, v in vars(args).items()}
    log.info("resolved configuration: %s", json.dumps(resolved, sort_keys=True))
    try:
        status = COMMANDS[args.command](args)
    except CTranATDError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: invalid-argument: {exc}", file=sys.stderr)
        return 1
    return int(status or 0)


if __name__ == "__main__":
    sys.exit(main())
