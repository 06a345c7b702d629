"""``flowmine`` command line: synth, preprocess, train, eval, score.

Data goes to files (or stdout with ``-``); statistics and diagnostics go to
stderr.  Exit status is 0 on success, 1 on data or file errors and 2 on
usage errors.  Log verbosity comes from ``FLOWMINE_LOG`` (e.g. ``DEBUG``).
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from . import detectors as det
from .errors import FlowmineError
from .evaluation import (
    ConfusionMatrix,
    dump_report,
    kfold_split,
    metrics_report,
    roc,
)
from .ingestion import (
    FORMATS,
    ReadStats,
    SnapshotWriter,
    read_packets,
    read_snapshots,
    sniff,
    write_packets,
)
from .snapshot_engine import DEFAULT_WINDOW, NORMAL, AttackTable, EngineConfig, Snapshot, SnapshotEngine
from .synth import DEFAULT_SEED, Kind, SynthProfile, attack_table, generate

log = logging.getLogger("flowmine")

SCORE_CHUNK = 1024


class DataError(FlowmineError):
    pass


@contextlib.contextmanager
def _out(path: Optional[str]):
    if path is None or path == "-":
        yield sys.stdout
        sys.stdout.flush()
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            yield fh


@contextlib.contextmanager
def _in(path: str):
    if path == "-":
        yield sys.stdin
    else:
        with open(path, encoding="utf-8") as fh:
            yield fh


def _require_file(path: Optional[str], what: str) -> None:
    if path is None or path == "-":
        return
    if not Path(path).is_file():
        raise DataError(f"{what} not found: {path}")


def _require_dir_for(path: Optional[str]) -> None:
    if path is None or path == "-":
        return
    parent = Path(path).resolve().parent
    if not parent.is_dir():
        raise DataError(f"output directory does not exist: {parent}")


def _data_range(text: str) -> tuple[int, int]:
    lo, _, hi = text.partition(":")
    try:
        lo_i = int(lo)
        hi_i = int(hi) if hi else lo_i
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N or LO:HI, got {text!r}") from None
    if lo_i < 0 or hi_i < lo_i:
        raise argparse.ArgumentTypeError(f"bad range {text!r}")
    return lo_i, hi_i


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1: {text!r}")
    return v


def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0: {text!r}")
    return v


def _stats_line(stats: dict) -> None:
    print(" ".join(f"{k}={v}" for k, v in stats.items()), file=sys.stderr)


# --- snapshot sources ---------------------------------------------------------


def _engine_from_args(args) -> SnapshotEngine:
    table = AttackTable.from_csv(args.attack_table) if args.attack_table else None
    return SnapshotEngine(EngineConfig(window=args.window, attack_table=table,
                                       evict_timeout=args.evict_timeout))


def _snapshot_stream(path: str, args, fh) -> Iterator[Snapshot]:
    """Snapshots from a snapshot file, or computed online from a packet CSV."""
    kind = "packets" if path == "-" and getattr(args, "packets", False) else (
        sniff(path) if path != "-" else "dense")
    if kind == "packets":
        engine = _engine_from_args(args)
        yield from engine.run(read_packets(fh, on_error=args.on_error))
        _stats_line(engine.stats.as_dict())
    else:
        yield from read_snapshots(fh)


def _load_dataset(path: str, label_mode: str) -> det.LabeledDataset:
    with _in(path) as fh:
        ds = det.LabeledDataset.from_snapshots(read_snapshots(fh))
    if len(ds) == 0:
        raise DataError(f"{path}: no snapshots")
    if label_mode == "binary":
        ds = ds.binary()
    return ds


# --- subcommands ------------------------------------------------------------


def cmd_synth(args) -> int:
    _require_dir_for(args.out)
    _require_dir_for(args.attack_table_out)
    profile = SynthProfile(kind=Kind(args.profile), flow_count=args.flows,
                           data_packets=args.data_packets, concurrency=args.concurrency,
                           background=args.background, stray_fraction=args.stray,
                           rate=args.rate).validate()
    with _out(args.out) as fh:
        n = write_packets(fh, generate(profile, args.seed))
    if args.attack_table_out:
        attack_table(profile).to_csv(args.attack_table_out)
    _stats_line({"packets": n, "flows": args.flows, "profile": args.profile, "seed": args.seed})
    return 0


def cmd_preprocess(args) -> int:
    _require_file(args.input, "packet file")
    _require_file(args.attack_table, "attack table")
    _require_dir_for(args.out)
    engine = _engine_from_args(args)
    read_stats = ReadStats()
    with _in(args.input) as src, _out(args.out) as dst:
        writer = SnapshotWriter(dst, args.format)
        for snap in engine.run(read_packets(src, on_error=args.on_error, stats=read_stats)):
            writer.write(snap)
    stats = engine.stats.as_dict()
    if read_stats.skipped:
        stats["skipped_rows"] = read_stats.skipped
    _stats_line(stats)
    return 0


def _fit(ds: det.LabeledDataset, args):
    if args.detector == "knn":
        if args.balance != "none":
            ds = det.balance(ds, args.balance, args.seed)
        if args.k > len(ds):
            raise DataError(f"k={args.k} exceeds the {len(ds)} training snapshots")
        return det.knn_fit(ds, args.k)
    normal = ds.X[ds.y == NORMAL]
    if len(normal) == 0:
        raise DataError("outlier detectors train on Normal snapshots and none were found")
    if args.detector == "mnd":
        return det.mnd_fit(normal, ridge=args.ridge, contamination=args.contamination)
    if args.detector == "pca":
        return det.pca_fit(normal, k=args.components, variance=args.variance,
                           contamination=args.contamination)
    return det.hbos_fit(normal, bins=args.bins, contamination=args.contamination)


def cmd_train(args) -> int:
    _require_file(args.input, "snapshot file")
    _require_dir_for(args.out)
    ds = _load_dataset(args.input, args.labels)
    model = _fit(ds, args)
    det.save_model(model, args.out)
    _stats_line({"detector": model.kind, "samples": len(ds), **ds.counts()})
    return 0


def _evaluate(model, ds: det.LabeledDataset) -> tuple[ConfusionMatrix, Optional[np.ndarray]]:
    if isinstance(model, det.KnnModel):
        if set(model.labels) == set(det.BINARY_LABELS):
            ds = ds.binary()
        pred = model.predict(ds.X)
        labels = model.labels + tuple(sorted(set(ds.y.tolist()) - set(model.labels)))
        return ConfusionMatrix.from_predictions(ds.y.tolist(), pred, labels), None
    scores = model.score(ds.X)
    truth = ds.binary().y.tolist()
    pred = [det.ATTACK if flag else NORMAL for flag in scores > model.threshold]
    return ConfusionMatrix.from_predictions(truth, pred, det.BINARY_LABELS), scores


def cmd_eval(args) -> int:
    _require_file(args.input, "snapshot file")
    if args.cv is None:
        if args.model is None:
            raise DataError("eval needs --model, or --cv to cross-validate")
        _require_file(args.model, "model file")
    _require_dir_for(args.out)
    _require_dir_for(args.roc_out)
    ds = _load_dataset(args.input, args.labels)
    extra = {}
    if args.cv is not None:
        cm, scores, truth = None, [], []
        for train_idx, test_idx in kfold_split(ds.y, args.cv, args.seed):
            model = _fit(ds.subset(train_idx), args)
            fold_cm, fold_scores = _evaluate(model, ds.subset(test_idx))
            cm = fold_cm if cm is None else cm + fold_cm
            if fold_scores is not None:
                scores.append(fold_scores)
                truth.extend(ds.subset(test_idx).binary().y.tolist())
        extra.update(folds=args.cv, detector=args.detector)
        scores = np.concatenate(scores) if scores else None
    else:
        model = det.load_model(args.model)
        cm, scores = _evaluate(model, ds)
        truth = ds.binary().y.tolist()
        extra.update(detector=model.kind)
    auc = None
    if scores is not None:
        curve = roc(scores, truth)
        auc = curve.auc
        if args.roc_out:
            curve.to_csv(args.roc_out)
    with _out(args.out) as fh:
        dump_report(metrics_report(cm, auc, **extra), fh)
    return 0


def cmd_score(args) -> int:
    _require_file(args.model, "model file")
    _require_file(args.input, "input file")
    _require_file(args.attack_table, "attack table")
    _require_dir_for(args.out)
    model = det.load_model(args.model)
    is_knn = isinstance(model, det.KnnModel)
    with _in(args.input) as src, _out(args.out) as dst:
        dst.write("packet_index,timestamp,label," + ("prediction" if is_knn else "score") + "\n")
        meta: list[tuple[int, float, str]] = []
        rows = np.empty((SCORE_CHUNK, det.N_RELATIONS))

        def flush() -> None:
            if not meta:
                return
            X = rows[:len(meta)]
            out = model.predict(X) if is_knn else ["%.17g" % s for s in model.score(X)]
            dst.write("".join(f"{i},{'%.17g' % t},{lab},{o}\n" for (i, t, lab), o in zip(meta, out)))
            meta.clear()

        for snap in _snapshot_stream(args.input, args, src):
            rows[len(meta)] = snap.flat()
            meta.append((snap.packet_index, snap.timestamp, snap.label))
            if len(meta) == SCORE_CHUNK:
                flush()
        flush()
    return 0


# --- parser -----------------------------------------------------------------


def _add_engine_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("-l", "--window", type=_positive_int, default=DEFAULT_WINDOW,
                   help="transitions per snapshot (default %(default)s)")
    p.add_argument("--attack-table", help="CSV ip,attack_type[,start_ts,end_ts]")
    p.add_argument("--evict-timeout", type=_positive_float, default=None,
                   help="drop flows idle this many seconds (off by default)")
    p.add_argument("--on-error", choices=("raise", "skip"), default="raise",
                   help="malformed packet rows: fail or skip and count")


def _add_detector_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--detector", choices=det.DETECTORS, default="knn")
    p.add_argument("--k", type=_positive_int, default=det.DEFAULT_K, help="KNN neighbours")
    p.add_argument("--ridge", type=_positive_float, default=det.DEFAULT_RIDGE, help="MND covariance ridge")
    p.add_argument("--bins", type=_positive_int, default=det.DEFAULT_BINS, help="HBOS bins per dimension")
    p.add_argument("--variance", type=_positive_float, default=det.DEFAULT_VARIANCE,
                   help="PCA retained variance fraction")
    p.add_argument("--components", type=_positive_int, default=None, help="PCA component count")
    p.add_argument("--contamination", type=_positive_float, default=det.DEFAULT_CONTAMINATION,
                   help="training fraction above the outlier threshold")
    p.add_argument("--balance", choices=("over", "under", "none"), default="none",
                   help="binary KNN class balancing")
    p.add_argument("--labels", choices=("binary", "multi"), default="binary",
                   help="label space: Normal/Attack or every attack type")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowmine", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic packet CSV")
    p.add_argument("--profile", choices=[k.value for k in Kind], default="normal")
    p.add_argument("--flows", type=int, default=100)
    p.add_argument("--data-packets", type=_data_range, default=(2, 12), metavar="N|LO:HI")
    p.add_argument("--concurrency", type=_positive_int, default=8)
    p.add_argument("--background", type=float, default=0.0,
                   help="probability that a flow of an attack profile is normal")
    p.add_argument("--stray", type=float, default=0.0, help="fraction of packets outside any flow")
    p.add_argument("--rate", type=_positive_float, default=2000.0, help="mean packets per second")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("-o", "--out", default="-")
    p.add_argument("--attack-table-out", help="also write the attacker hosts as an attack table")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="packet CSV -> snapshot file")
    p.add_argument("input")
    p.add_argument("-o", "--out", default="-")
    p.add_argument("--format", choices=FORMATS, default="dense")
    _add_engine_flags(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="snapshot file -> saved model")
    p.add_argument("input")
    p.add_argument("-o", "--out", required=True)
    _add_detector_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="model + snapshot file -> metrics JSON")
    p.add_argument("input")
    p.add_argument("--model")
    p.add_argument("--cv", type=_positive_int, default=None,
                   help="cross-validate the detector with this many folds instead of loading a model")
    p.add_argument("-o", "--out", default="-")
    p.add_argument("--roc-out", help="write ROC points as CSV fpr,tpr")
    _add_detector_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("score", help="model + snapshots or packets -> per-snapshot scores")
    p.add_argument("input", help="snapshot file or packet CSV (computed online)")
    p.add_argument("--model", required=True)
    p.add_argument("-o", "--out", default="-")
    p.add_argument("--packets", action="store_true", help="treat stdin input as a packet CSV")
    _add_engine_flags(p)
    p.set_defaults(func=cmd_score)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("FLOWMINE_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FlowmineError, OSError) as exc:
        print(f"flowmine {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"flowmine {args.command}: error: {exc}", file=sys.stderr)
        return 1


run = main

if __name__ == "__main__":
    sys.exit(main())
