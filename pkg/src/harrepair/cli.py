"""Command-line entry point: ``harrepair <command> ...``.

Stages communicate through files, so each can be rerun on its own::

    harrepair synth-gen raw/ --subjects 8 --corrupt phone
    harrepair inspect raw/
    harrepair repair raw/ repaired/
    harrepair preprocess repaired/ windows/
    harrepair train windows/phone_windows.npz model/
    harrepair evaluate model/model.npz windows/watch_windows.npz
    harrepair cross-eval windows/phone_windows.npz windows/watch_windows.npz report/

``HARREPAIR_DATA`` and ``HARREPAIR_OUT`` supply the input and output paths
when they are omitted on the command line.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from filelock import FileLock, Timeout

from harrepair import classifier, preprocess, synth
from harrepair.ingest import DEVICES, Dataset, find_raw_files, load_dataset, write_dataset_tree
from harrepair.orientation import IndeterminateOrientation, detect_case
from harrepair.pipeline import repair_dataset
from harrepair.resample import dataset_totals, estimate_rate, write_totals_csv

logger = logging.getLogger("harrepair")

ENV_DATA = "HARREPAIR_DATA"
ENV_OUT = "HARREPAIR_OUT"


class CommandError(Exception):
    pass


@dataclass
class RunConfig:
    input: Path | None = None
    output: Path | None = None
    target_hz: float = 20.0
    trim_seconds: float = 15.0
    window_seconds: float = 5.0
    stride_seconds: float = 1.0
    repair_window_seconds: float = 10.0
    classifier_config: Path | None = None
    seed: int = 0
    policy: str = "skip_and_count"

    def __post_init__(self):
        for name in ("target_hz", "window_seconds", "stride_seconds", "repair_window_seconds"):
            if not getattr(self, name) > 0:
                raise CommandError(f"{name.replace('_', '-')} must be positive")
        if self.trim_seconds < 0:
            raise CommandError("trim-seconds must be non-negative")
        if self.stride_seconds > self.window_seconds:
            raise CommandError("stride must not exceed the window length")

    @classmethod
    def from_args(cls, args) -> "RunConfig":
        return cls(
            input=_path(getattr(args, "input", None), ENV_DATA),
            output=_path(getattr(args, "output", None), ENV_OUT),
            target_hz=getattr(args, "target_hz", 20.0),
            trim_seconds=getattr(args, "trim_seconds", 15.0),
            window_seconds=getattr(args, "window_seconds", 5.0),
            stride_seconds=getattr(args, "stride_seconds", 1.0),
            repair_window_seconds=getattr(args, "repair_window", 10.0),
            classifier_config=getattr(args, "config", None),
            seed=getattr(args, "seed", 0),
            policy=getattr(args, "policy", "skip_and_count"),
        )

    def cnn_config(self, **overrides) -> classifier.CnnConfig:
        base = {} if self.classifier_config is None else json.loads(Path(self.classifier_config).read_text())
        base["seed"] = self.seed
        base.update({k: v for k, v in overrides.items() if v is not None})
        return classifier.CnnConfig.from_dict(base)


def _path(value, env):
    value = value or os.environ.get(env)
    return Path(value) if value else None


def _require(path: Path | None, what: str, producer: str) -> Path:
    if path is None:
        raise CommandError(f"no {what} given")
    if not path.exists():
        raise CommandError(f"{path} not found; produce it with `harrepair {producer}`")
    return path


def _lock(out: Path) -> FileLock:
    out.mkdir(parents=True, exist_ok=True)
    return FileLock(str(out / ".harrepair.lock"), timeout=0)


def _load(cfg: RunConfig, producer="synth-gen"):
    src = _require(cfg.input, "input dataset", producer)
    files = find_raw_files(src)
    if not files:
        raise CommandError(f"no raw .txt files under {src}")
    dataset, report = load_dataset(files, policy=cfg.policy)
    if report.lines_skipped:
        logger.warning("skipped %d malformed line(s)", report.lines_skipped)
    return dataset, report


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def cmd_inspect(cfg: RunConfig, args) -> int:
    dataset, report = _load(cfg)
    rows = []
    for t in dataset:
        try:
            est = estimate_rate(t)
            raw, snapped = f"{est.raw_hz:.3f}", f"{est.snapped_hz:g}"
            w = max(1, int(round(cfg.repair_window_seconds * est.snapped_hz)))
        except ValueError:
            raw = snapped = ""
            w = len(t)
        cases = Counter()
        if t.sensor == "accel":
            for s in range(0, len(t), w):
                try:
                    cases[str(detect_case(t.values[s : s + w]))] += 1
                except IndeterminateOrientation:
                    cases["indeterminate"] += 1
        summary = " ".join(f"{c}:{n}" for c, n in cases.most_common())
        rows.append([t.subject_id, t.activity, t.device, t.sensor, len(t), raw, snapped, summary])
    header = ["subject", "activity", "device", "sensor", "samples", "raw_hz", "snapped_hz", "orientation"]
    missing = [
        [dev, sen, s, a] for dev, sen in dataset.streams() for s, a in dataset.missing_pairs(dev, sen)
    ]
    totals = dataset_totals(dataset)
    for r in totals:
        print(f"raw/{r.device}/{r.sensor}: {r.samples:,}")
    print(f"{len(missing)} missing (subject, activity) pair(s)")
    if cfg.output:
        cfg.output.mkdir(parents=True, exist_ok=True)
        _write_csv(cfg.output / "inspect.csv", header, rows)
        _write_csv(cfg.output / "missing_pairs.csv", ["device", "sensor", "subject", "activity"], missing)
        write_totals_csv(cfg.output / "totals.csv", totals)
        report.write_json(cfg.output / "ingest_report.json")
    else:
        w = csv.writer(sys.stdout)
        w.writerow(header)
        w.writerows(rows)
    return 0


def _write_excerpts(path: Path, before, after, seconds: float) -> None:
    """Long-format signal excerpts (first ``seconds`` of each track) for plotting."""
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject", "activity", "device", "sensor", "stage", "t_seconds", "x", "y", "z"])
        for stage, ds in (("original", before), ("repaired", after)):
            for t in ds:
                sec = t.seconds
                for i in np.flatnonzero(sec < seconds):
                    w.writerow([*t.key, stage, f"{sec[i]:.4f}", *(f"{v:.6f}" for v in t.values[i])])


def _repair_common(cfg: RunConfig, orient: bool, producer: str, excerpt_seconds: float = 0.0) -> int:
    dataset, report = _load(cfg)
    out = cfg.output
    if out is None:
        raise CommandError("no output directory given")
    with _lock(out):
        res = repair_dataset(dataset, cfg.target_hz, cfg.repair_window_seconds, resample=True, orient=orient)
        write_dataset_tree(res.dataset, out / "data")
        report.write_json(out / "ingest_report.json")
        write_totals_csv(out / "totals.csv", dataset_totals(dataset), dataset_totals(res.dataset, rate_hz=cfg.target_hz))
        rate_rows = [[*k, f"{e.raw_hz:.4f}", f"{e.snapped_hz:g}", f"{e.delta_dispersion:.6f}"] for k, e in sorted(res.rates.items())]
        _write_csv(out / "rates.csv", ["subject", "activity", "device", "sensor", "raw_hz", "snapped_hz", "delta_iqr_s"], rate_rows)
        if orient:
            log_path = out / "repair_log.csv"
            log_path.unlink(missing_ok=True)
            for key in sorted(res.logs):
                res.logs[key].write_csv(log_path, append=True)
        if excerpt_seconds:
            _write_excerpts(out / "excerpts.csv", dataset, res.dataset, excerpt_seconds)
    for key, msg in res.failures:
        print(f"failed {key}: {msg}", file=sys.stderr)
    print(f"{producer}: {len(res.dataset)} track(s) written to {out / 'data'}, {len(res.failures)} failure(s)")
    return 1 if res.failures else 0


def cmd_repair(cfg: RunConfig, args) -> int:
    return _repair_common(cfg, orient=True, producer="repair", excerpt_seconds=args.excerpt_seconds)


def cmd_resample(cfg: RunConfig, args) -> int:
    return _repair_common(cfg, orient=False, producer="resample", excerpt_seconds=args.excerpt_seconds)


def cmd_preprocess(cfg: RunConfig, args) -> int:
    dataset, _ = _load(cfg, producer="repair")
    if cfg.output is None:
        raise CommandError("no output directory given")
    with _lock(cfg.output):
        for device in args.devices:
            ws = preprocess.build_windowset(
                dataset, device, "accel", cfg.trim_seconds, cfg.window_seconds, cfg.stride_seconds, args.rate or cfg.target_hz
            )
            path = cfg.output / f"{device}_windows.npz"
            ws.save(path)
            print(f"{device}: {len(ws)} window(s) from {len(ws.subject_ids())} subject(s) -> {path}")
    return 0


def _write_curve(path: Path, curve) -> None:
    keys = list(curve[0]) if curve else ["epoch", "loss", "accuracy"]
    _write_csv(path, keys, [[row.get(k, "") for k in keys] for row in curve])


def cmd_train(cfg: RunConfig, args) -> int:
    src = _require(cfg.input, "window set", "preprocess")
    ws = preprocess.WindowSet.load(src)
    config = cfg.cnn_config(epochs=args.epochs, input_length=ws.window_length)
    if cfg.output is None:
        raise CommandError("no output directory given")
    validation = None
    if args.split:
        sizes = tuple(int(x) for x in args.split.split(","))
        plan = preprocess.make_split(ws.subject_ids(), sizes, cfg.seed)
        train_set, validation = ws.for_subjects(plan.train), ws.for_subjects(plan.validation)
        test_set = ws.for_subjects(plan.test)
    else:
        train_set, test_set = ws, None
    with _lock(cfg.output):
        model, curve = classifier.train(config, train_set, validation)
        classifier.save_model(model, cfg.output / "model.npz")
        _write_curve(cfg.output / "curve.csv", curve)
        summary = {"train_windows": len(train_set), "epochs_run": len(curve), "final_loss": curve[-1]["loss"]}
        if test_set is not None and len(test_set):
            res = classifier.evaluate(model, test_set)
            summary.update(test_micro_f1=res.micro_f1, test_accuracy=res.accuracy)
        (cfg.output / "train_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary))
    return 0


def cmd_evaluate(cfg: RunConfig, args) -> int:
    ckpt = _require(Path(args.checkpoint), "checkpoint", "train")
    ws = preprocess.WindowSet.load(_require(Path(args.windows), "window set", "preprocess"))
    model = classifier.load_model(ckpt)
    res = classifier.evaluate(model, ws)
    doc = {
        "micro_f1": res.micro_f1,
        "accuracy": res.accuracy,
        "note": "micro-F1 equals accuracy for single-label multiclass",
        "n": res.n,
        "class_names": list(ws.class_names),
        "confusion": res.confusion.tolist(),
    }
    if cfg.output:
        cfg.output.mkdir(parents=True, exist_ok=True)
        (cfg.output / "evaluation.json").write_text(json.dumps(doc, indent=2) + "\n")
    print(json.dumps({k: doc[k] for k in ("micro_f1", "accuracy", "n")}))
    return 0


def cmd_cross_eval(cfg: RunConfig, args) -> int:
    phone = preprocess.WindowSet.load(_require(Path(args.phone), "phone window set", "preprocess"))
    watch = preprocess.WindowSet.load(_require(Path(args.watch), "watch window set", "preprocess"))
    if cfg.output is None:
        raise CommandError("no output directory given")
    config = cfg.cnn_config(epochs=args.epochs, input_length=phone.window_length)
    with _lock(cfg.output):
        report = classifier.cross_eval(phone, watch, config, diagonal=args.diagonal)
        report.write_table(cfg.output / "cross_eval.csv")
        report.write_confusions(cfg.output / "confusion.csv")
        report.write_per_subject(cfg.output / "per_subject.csv")
        report.write_curves(cfg.output / "curves.csv")
    grid = report.grid()
    print("train\\test  phone   watch")
    for name, row in zip(classifier.DEVICE_ORDER, grid):
        print(f"{name:10s}  " + "  ".join("  -  " if np.isnan(v) else f"{v:.3f}" for v in row))
    return 0


def cmd_synth_gen(cfg: RunConfig, args) -> int:
    out = cfg.output
    if out is None:
        raise CommandError("no output directory given")
    subjects = range(args.first_subject, args.first_subject + args.subjects)
    activities = tuple(args.activities)
    with _lock(out):
        datasets, truth = [], {}
        rng = np.random.default_rng([cfg.seed, 7])
        for device in args.devices:
            ds = synth.make_dataset(subjects, activities, args.duration, 20.0, device, "accel", cfg.seed)
            if device in args.corrupt:
                tracks = []
                for t in ds:
                    spec = synth.random_spec(rng, args.duration, cfg.repair_window_seconds)
                    truth[t.key] = spec
                    tracks.append(synth.corrupt(t, spec))
                ds = Dataset.from_tracks(tracks)
            datasets.extend(ds)
        files = write_dataset_tree(Dataset.from_tracks(datasets), out)
        synth.write_truth(out / "truth.json", truth)
    print(f"synth-gen: {len(datasets)} track(s) in {len(files)} file(s) under {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="harrepair", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def io(sp, out=True, out_required=False):
        sp.add_argument("input", nargs="?", help=f"input path (default ${ENV_DATA})")
        if out:
            sp.add_argument("output", nargs="?", help=f"output directory (default ${ENV_OUT})")
        sp.add_argument("--policy", choices=["skip_and_count", "strict"], default="skip_and_count")

    sp = sub.add_parser("inspect", help="per-track counts, rates, orientation and missing pairs")
    io(sp)
    sp.add_argument("--repair-window", type=float, default=10.0)
    sp.set_defaults(func=cmd_inspect)

    for name, func, hlp in (
        ("repair", cmd_repair, "resample to the target rate and repair orientation"),
        ("resample", cmd_resample, "resample only"),
    ):
        sp = sub.add_parser(name, help=hlp)
        io(sp)
        sp.add_argument("--target-hz", type=float, default=20.0)
        sp.add_argument("--repair-window", type=float, default=10.0)
        sp.add_argument("--excerpt-seconds", type=float, default=0.0, help="also write excerpts.csv with this much of every track")
        sp.set_defaults(func=func)

    sp = sub.add_parser("preprocess", help="trim and window accelerometer tracks")
    io(sp)
    sp.add_argument("--trim-seconds", type=float, default=15.0)
    sp.add_argument("--window-seconds", type=float, default=5.0)
    sp.add_argument("--stride-seconds", type=float, default=1.0)
    sp.add_argument("--rate", type=float, default=None, help="sample rate assumed for windowing (default 20)")
    sp.add_argument("--devices", nargs="+", default=list(DEVICES), choices=DEVICES)
    sp.set_defaults(func=cmd_preprocess)

    sp = sub.add_parser("train", help="train the CNN on a window set")
    sp.add_argument("input", nargs="?")
    sp.add_argument("output", nargs="?")
    sp.add_argument("--config", type=Path, help="JSON file with classifier settings")
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--split", default=None, help="train,validation,test subject counts, e.g. 41,5,5")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="micro-F1 of a checkpoint on a window set")
    sp.add_argument("checkpoint")
    sp.add_argument("windows")
    sp.add_argument("output", nargs="?")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("cross-eval", help="2x2 phone/watch cross-hardware table")
    sp.add_argument("phone")
    sp.add_argument("watch")
    sp.add_argument("output", nargs="?")
    sp.add_argument("--config", type=Path)
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--diagonal", choices=["loo", "skip"], default="loo")
    sp.set_defaults(func=cmd_cross_eval)

    sp = sub.add_parser("synth-gen", help="write a synthetic raw dataset with known defects")
    sp.add_argument("output", nargs="?")
    sp.add_argument("--subjects", type=int, default=51)
    sp.add_argument("--first-subject", type=int, default=1600)
    sp.add_argument("--activities", default="ABCDE")
    sp.add_argument("--duration", type=float, default=180.0)
    sp.add_argument("--devices", nargs="+", default=list(DEVICES), choices=DEVICES)
    sp.add_argument("--corrupt", nargs="*", default=[], choices=DEVICES, help="devices that get orientation/rate defects")
    sp.add_argument("--repair-window", type=float, default=10.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_synth_gen)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.from_args(args)
        return args.func(cfg, args)
    except Timeout:
        print("error: another harrepair command holds the output directory lock", file=sys.stderr)
    except (CommandError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
