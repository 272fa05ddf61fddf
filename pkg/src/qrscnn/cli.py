"""Command-line entry point: ``qrscnn {generate,train,detect,eval,sweep}``.

Exit codes: 0 success, 2 missing input, 3 training diverged, 64 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

from . import cnn, dataset, evaluate, training
from .config import RunConfig, load_config
from .errors import QrsError, TrainingDiverged
from .postprocess import PP_LEVELS
from .preprocess import rescale_annotations, resample
from .signal_io import load_record, save_annotations

EXIT_OK = 0
EXIT_MISSING = 2
EXIT_DIVERGED = 3
EXIT_USAGE = 64

log = logging.getLogger("qrscnn")


class UsageError(Exception):
    pass


class MissingInput(Exception):
    def __init__(self, paths):
        self.paths = [str(p) for p in paths]
        super().__init__("missing input: " + ", ".join(self.paths))


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _global_flags() -> argparse.ArgumentParser:
    # SUPPRESS lets the flags appear before or after the subcommand
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=argparse.SUPPRESS, help="JSON run configuration")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    p.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    p.add_argument("--pp", choices=PP_LEVELS, default=argparse.SUPPRESS,
                   help="post-processing level")
    p.add_argument("--tol-ms", type=float, default=argparse.SUPPRESS,
                   help="beat matching tolerance in milliseconds")
    p.add_argument("--depth", type=int, default=argparse.SUPPRESS, help="total conv layers")
    p.add_argument("--channels", type=int, default=argparse.SUPPRESS, help="feature maps per layer")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    return p


def build_parser() -> Parser:
    common = _global_flags()
    parser = Parser(prog="qrscnn", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    g = sub.add_parser("generate", parents=[common], help="write a synthetic corpus")
    g.add_argument("-n", "--n-records", type=int, default=10)

    t = sub.add_parser("train", parents=[common], help="train fold models")
    t.add_argument("--data", help="manifest file or corpus directory")
    t.add_argument("--folds", type=int)
    t.add_argument("--no-cv", action="store_true", help="single 80/20 subject split")

    d = sub.add_parser("detect", parents=[common], help="detect R-peaks in one record")
    d.add_argument("--model", required=True)
    d.add_argument("--record", required=True)
    d.add_argument("--fs", type=int, help="sampling rate for CSV records")
    d.add_argument("--dump-stream", action="store_true", help="also write the 0/1 stream")

    e = sub.add_parser("eval", parents=[common], help="score models on a corpus")
    e.add_argument("--data")
    e.add_argument("--models", nargs="+", help="model files (default: all in --model-dir)")
    e.add_argument("--model-dir")
    e.add_argument("--held-out", action="store_true",
                   help="score each fold model only on its validation subjects (needs folds.json)")

    s = sub.add_parser("sweep", parents=[common], help="depth x post-processing sweep")
    s.add_argument("--data")
    s.add_argument("--depths", required=True, help="comma separated, e.g. 2,4,8")
    s.add_argument("--models-root", help="directory with depth<d>/model_fold*.qrscnn")
    s.add_argument("--folds", type=int)
    s.add_argument("--no-cv", action="store_true")
    s.add_argument("--timing-runs", type=int, default=30)
    return parser


# --------------------------------------------------------------------------
# Helpers
# --------------------------------------------------------------------------


def effective_config(args) -> RunConfig:
    overrides: dict = {"model": {}, "train": {}}
    if "seed" in args:
        overrides["seed"] = args.seed
        overrides["model"]["seed"] = args.seed
        overrides["train"]["seed"] = args.seed
    if "pp" in args:
        overrides["pp_level"] = args.pp
    if "tol_ms" in args:
        overrides["tol_ms"] = args.tol_ms
    if "depth" in args:
        overrides["model"]["depth"] = args.depth
    if "channels" in args:
        overrides["model"]["channels"] = args.channels
    if getattr(args, "folds", None):
        overrides["train"]["k_folds"] = args.folds
    try:
        return load_config(getattr(args, "config", None), overrides)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None


def output_dir(args, cfg: RunConfig) -> Path:
    out = getattr(args, "out", None) or cfg.paths.output_dir
    if out is None:
        out = Path("runs") / time.strftime("%Y%m%d-%H%M%S")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def resolve_manifest(args, cfg: RunConfig) -> Path:
    data = getattr(args, "data", None) or cfg.paths.data_dir
    if data is None:
        raise UsageError("no dataset given (--data or paths.data_dir)")
    path = Path(data)
    if path.is_dir():
        path = path / dataset.MANIFEST_NAME
    if not path.exists():
        raise MissingInput([path])
    missing = [p for p in dataset.manifest_files(path) if not p.exists()]
    if missing:
        raise MissingInput(missing)
    return path


def folds_for(subjects, cfg: RunConfig, no_cv: bool):
    if no_cv:
        return [training.holdout_split(subjects, 0.2, cfg.train.seed)]
    if cfg.train.k_folds < 2:
        raise UsageError("cross-validation needs --folds >= 2 (use --no-cv for a single split)")
    return training.make_folds(subjects, cfg.train.k_folds, cfg.train.seed)


def train_models(pairs, cfg: RunConfig, out: Path, no_cv: bool):
    by_subject = dataset.training_segments_by_subject(
        pairs, cfg.working_fs, cfg.mask_half_width_ms, cfg.window_s, cfg.train_hop_s)
    folds = folds_for(list(by_subject), cfg, no_cv)

    def report(split, history):
        print(f"fold {split.fold_index}: best val loss {history.best_val_loss:.6f} "
              f"at epoch {history.best_epoch} ({len(history)} epochs"
              f"{', stopped early' if history.stopped_early else ''})")

    results = training.train_folds(by_subject, cfg.model, cfg.train, folds=folds, progress=report)
    out.mkdir(parents=True, exist_ok=True)
    for r in results:
        i = r.split.fold_index
        cnn.save_model(r.model, out / f"model_fold{i}.qrscnn")
        r.history.to_csv(out / f"history_fold{i}.csv")
    folds_doc = {
        str(r.split.fold_index): {
            "train_subjects": sorted(r.split.train_subjects),
            "val_subjects": sorted(r.split.val_subjects),
        }
        for r in results
    }
    (out / "folds.json").write_text(json.dumps(folds_doc, indent=2, sort_keys=True) + "\n")
    return results


def model_files(model_dir: Path) -> list[Path]:
    return sorted(Path(model_dir).glob("model_fold*.qrscnn"))


def fold_index(path: Path) -> str:
    return path.stem.removeprefix("model_fold")


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def cmd_generate(args, cfg: RunConfig) -> int:
    if args.n_records < 0:
        raise UsageError("--n-records must be >= 0")
    out = output_dir(args, cfg)
    pairs = dataset.synth_corpus(args.n_records, cfg.synth, cfg.seed)
    manifest = dataset.write_corpus(pairs, out, extra={"seed": cfg.seed, "synth": asdict(cfg.synth)})
    cfg.dump(out / "config.json")
    print(f"wrote {len(pairs)} records and {manifest}")
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    if args.no_cv and args.folds not in (None, 1):
        raise UsageError("--no-cv trains a single model; drop --folds or use --folds 1")
    manifest = resolve_manifest(args, cfg)
    out = output_dir(args, cfg)
    pairs = dataset.load_corpus(manifest)
    cfg.dump(out / "config.json")
    results = train_models(pairs, cfg, out, args.no_cv)
    print(f"wrote {len(results)} model(s) to {out}")
    return EXIT_OK


def cmd_detect(args, cfg: RunConfig) -> int:
    missing = [p for p in (args.model, args.record) if not Path(p).exists()]
    if missing:
        raise MissingInput(missing)
    model = cnn.load_model(args.model)
    record = load_record(args.record, fs=args.fs)
    out = output_dir(args, cfg)
    det = evaluate.detect_record(record, model, cfg.pp_level, cfg.working_fs, cfg.window_s,
                                 cfg.peak_method)
    ann_path = save_annotations(det.peaks, out / f"{record.record_id}.ann")
    if args.dump_stream:
        (out / f"{record.record_id}.bits").write_text(det.refined.to_text() + "\n")
    print(f"{record.record_id}: {len(det.peaks)} R-peaks at {cfg.working_fs} Hz -> {ann_path}")
    return EXIT_OK


def _eval_sets(args, cfg, pairs):
    """``[(label, model, records, refs)]`` for the requested models."""
    model_dir = Path(args.model_dir) if args.model_dir else None
    if args.models:
        paths = [Path(p) for p in args.models]
    elif model_dir is not None:
        paths = model_files(model_dir)
        if not paths:
            raise MissingInput([model_dir / "model_fold*.qrscnn"])
    else:
        raise UsageError("give --models or --model-dir")
    missing = [p for p in paths if not p.exists()]
    folds_path = (model_dir or paths[0].parent) / "folds.json"
    if args.held_out and not folds_path.exists():
        missing.append(folds_path)
    if missing:
        raise MissingInput(missing)

    folds = json.loads(folds_path.read_text()) if args.held_out else None
    sets = []
    for p in paths:
        chosen = pairs
        if folds is not None:
            val = set(folds[fold_index(p)]["val_subjects"])
            chosen = [(r, a) for r, a in pairs if r.subject_id in val]
        sets.append((p.name, cnn.load_model(p), [r for r, _ in chosen], [a for _, a in chosen]))
    return sets


def cmd_eval(args, cfg: RunConfig) -> int:
    manifest = resolve_manifest(args, cfg)
    pairs = dataset.load_corpus(manifest)
    sets = _eval_sets(args, cfg, pairs)
    out = output_dir(args, cfg)
    cfg.dump(out / "config.json")
    levels = [args.pp] if "pp" in args else list(PP_LEVELS)

    summary = []
    with (out / "records.jsonl").open("w") as fh:
        for level in levels:
            report = evaluate.evaluate_folds(
                [(m, recs, refs) for _, m, recs, refs in sets], level, cfg.tol_ms,
                working_fs=cfg.working_fs, window_s=cfg.window_s, peak_method=cfg.peak_method)
            for (label, *_), reps in zip(sets, report.per_record):
                for rep in reps:
                    fh.write(json.dumps({"model": label, "pp_level": level, **rep.to_dict()}) + "\n")
            agg = report.aggregate
            summary.append((level, agg))
            print(f"{level:>9}: F1 {agg.f1:.4f}  PPV {agg.ppv:.4f}  Se {agg.sensitivity:.4f}  "
                  f"(tp {agg.tp}, fp {agg.fp}, fn {agg.fn})")
    with (out / "summary.csv").open("w") as fh:
        fh.write("pp_level,ppv,sensitivity,f1,tp,fp,fn\n")
        for level, a in summary:
            fh.write(f"{level},{a.ppv!r},{a.sensitivity!r},{a.f1!r},{a.tp},{a.fp},{a.fn}\n")
    return EXIT_OK


def cmd_sweep(args, cfg: RunConfig) -> int:
    try:
        depths = sorted({int(d) for d in args.depths.split(",") if d.strip()})
    except ValueError:
        raise UsageError(f"--depths must be comma separated integers, got {args.depths!r}") from None
    if not depths or any(not cnn.MIN_DEPTH <= d <= cnn.MAX_DEPTH for d in depths):
        raise UsageError(f"depths must lie in [{cnn.MIN_DEPTH}, {cnn.MAX_DEPTH}]")
    manifest = resolve_manifest(args, cfg)
    if args.models_root:
        root = Path(args.models_root)
        missing = [root / f"depth{d}" for d in depths if not model_files(root / f"depth{d}")]
        if missing:
            raise MissingInput(missing)
    out = output_dir(args, cfg)
    pairs = dataset.load_corpus(manifest)
    cfg.dump(out / "config.json")

    models_by_depth = {}
    for d in depths:
        if args.models_root:
            paths = model_files(Path(args.models_root) / f"depth{d}")
            models_by_depth[d] = [cnn.load_model(p) for p in paths]
        else:
            print(f"training depth {d}")
            dcfg = load_config(None, {**cfg.to_dict(), "model": {**asdict(cfg.model), "depth": d}})
            models_by_depth[d] = [r.model for r in train_models(pairs, dcfg, out / f"depth{d}", args.no_cv)]

    rows = evaluate.complexity_sweep(
        models_by_depth, PP_LEVELS, [r for r, _ in pairs], [a for _, a in pairs], cfg.tol_ms,
        cfg.working_fs, args.timing_runs)
    path = evaluate.write_sweep_csv(rows, out / "sweep.csv")
    for cx, ev in rows:
        print(f"depth {cx.depth:>2} {cx.pp_level:>9}: params {cx.params:>6} macs {cx.macs_per_segment:>8} "
              f"latency {cx.latency_us_median:8.1f} us  F1 {ev.f1:.4f}")
    print(f"wrote {path}")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "detect": cmd_detect,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = effective_config(args)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"qrscnn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MissingInput as exc:
        for p in exc.paths:
            print(f"qrscnn: missing input: {p}", file=sys.stderr)
        return EXIT_MISSING
    except TrainingDiverged as exc:
        print(f"qrscnn: training diverged in fold {exc.fold}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (QrsError, OSError) as exc:
        print(f"qrscnn: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
