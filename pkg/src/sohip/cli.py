"""Command line: ``sohip run`` and ``sohip sweep``."""
from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import statistics
import sys
import tempfile
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, parse_config
from .data import label_skew
from .exceptions import NonFiniteError, SoHipError
from .federation import build_shards, run_experiment

log = logging.getLogger(__name__)

SUMMARY_HEADER = ("mode", "variant", "n_seeds", "final_acc_mean", "final_acc_std", "final_loss_mean",
                  "final_loss_std")
SWEEP_HEADER = ("value", "mean_acc", "std_acc", "n_seeds", "label_skew", "n_diverged")

# short axis names accepted alongside the config field names
AXES = {
    "classes_per_agent": "classes_per_agent",
    "alpha": "alpha",
    "m": "memory_dim",
    "memory_dim": "memory_dim",
    "C": "participation",
    "participation": "participation",
    "lr": "lr",
}


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def sample_std(values) -> float:
    return statistics.stdev(values) if len(values) > 1 else float("nan")


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x) -> str:
    return repr(float(x))


def run(cfg: ExperimentConfig) -> list[Path]:
    """Run every seed; write per-seed metrics and a mean/std summary. Returns written paths."""
    out = Path(cfg.output_dir)
    written: list[Path] = []
    finals, losses = [], []
    try:
        for seed in cfg.seeds:
            transcript = None
            if cfg.transcript:
                name = "run.transcript" if len(cfg.seeds) == 1 else f"run_seed{seed}.transcript"
                transcript = out / name
                out.mkdir(parents=True, exist_ok=True)
                written.append(transcript)
            metrics = run_experiment(cfg, seed, transcript=transcript)
            path = out / f"metrics_seed{seed}.csv"
            write_atomic(path, metrics.to_csv())
            written.append(path)
            finals.append(metrics.final_accuracy)
            losses.append(metrics.records[-1].mean_train_loss)
            log.info("seed %d: final mean test accuracy %.4f", seed, metrics.final_accuracy)
        row = [cfg.mode, cfg.variant, len(finals), _fmt(np.mean(finals)), _fmt(sample_std(finals)),
               _fmt(np.mean(losses)), _fmt(sample_std(losses))]
        path = out / "summary.csv"
        write_atomic(path, _csv(SUMMARY_HEADER, [row]))
        written.append(path)
    except BaseException:
        for p in written:
            p.unlink(missing_ok=True)
        raise
    return written


def sweep_points(axis: str, values, base: ExperimentConfig) -> list[ExperimentConfig]:
    if axis not in AXES:
        raise SoHipError(f"unknown sweep axis {axis!r}; choose from {sorted(AXES)}")
    name = AXES[axis]
    extra = {}
    if name == "alpha":
        extra["partition"] = "dirichlet"
    elif name == "classes_per_agent":
        extra["partition"] = "pathological"
    return [base.replace(**{name: v}, **extra) for v in values]


def sweep(axis: str, values, base: ExperimentConfig) -> Path:
    """One run per value and seed; writes ``sweep_<axis>.csv`` in the output dir.

    Seeds whose training diverges are counted in ``n_diverged`` and left out
    of the mean; ``n_seeds`` counts the runs that finished.
    """
    if not values:
        raise SoHipError("sweep needs at least one value")
    rows = []
    for value, cfg in zip(values, sweep_points(axis, values, base)):
        accs, skews, diverged = [], [], 0
        for seed in cfg.seeds:
            shards = build_shards(cfg, seed)
            skews.append(label_skew(shards, shards[0].train.num_classes))
            try:
                accs.append(run_experiment(cfg, seed, shards=shards).final_accuracy)
            except NonFiniteError as exc:
                # a diverging point (large lr) is a result of the sweep, not a reason to drop the others
                log.warning("%s=%s seed %d diverged: %s", axis, value, seed, exc)
                diverged += 1
        mean = np.mean(accs) if accs else float("nan")
        std = sample_std(accs) if accs else float("nan")
        rows.append([value, _fmt(mean), _fmt(std), len(accs), _fmt(np.mean(skews)), diverged])
        log.info("%s=%s: mean accuracy %.4f", axis, value, mean)
    path = Path(base.output_dir) / f"sweep_{axis}.csv"
    write_atomic(path, _csv(SWEEP_HEADER, rows))
    return path


def _parse_value(text: str):
    try:
        v = float(text)
    except ValueError:
        return text
    return int(v) if v.is_integer() and "." not in text and "e" not in text.lower() else v


def _overrides(args) -> dict:
    out = {}
    for item in args.set or []:
        if "=" not in item:
            raise SoHipError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    for key in ("mode", "variant", "output_dir"):
        if getattr(args, key, None) is not None:
            out[key] = getattr(args, key)
    if getattr(args, "seed", None) is not None:
        out["seeds"] = ",".join(str(s) for s in args.seed)
    if getattr(args, "transcript", False):
        out["transcript"] = True
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sohip", description="Memory-exchange collaborative learning simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--seed", type=int, action="append", help="seed to run (repeatable); overrides seeds")
        sp.add_argument("--mode", choices=("sohip", "standalone"))
        sp.add_argument("--variant", choices=("full", "a", "b", "c", "d"))
        sp.add_argument("--output-dir", dest="output_dir")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")

    r = sub.add_parser("run", help="run one configuration over its seeds")
    common(r)
    r.add_argument("--transcript", action="store_true", help="dump wire frames to run.transcript")

    s = sub.add_parser("sweep", help="run a configuration across values of one axis")
    common(s)
    s.add_argument("--axis", required=True, choices=sorted(AXES))
    s.add_argument("--values", required=True, help="comma-separated values")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = parse_config(args.config, _overrides(args))
        if args.command == "run":
            for path in run(cfg):
                print(path)
        else:
            values = [_parse_value(v) for v in args.values.split(",") if v.strip()]
            print(sweep(args.axis, values, cfg))
    except (SoHipError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
