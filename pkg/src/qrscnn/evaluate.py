"""Beat matching, PPV / sensitivity / F1 scoring, and the depth x post-processing sweep."""

from __future__ import annotations

import csv
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import cnn
from .postprocess import PP_LEVELS, apply_pp, localize_peaks, stitch
from .preprocess import WINDOW_S, WORKING_FS, resample, rescale_annotations, segment_test
from .signal_io import AnnotationSet, EcgRecord

DEFAULT_TOL_MS = 75.0

SWEEP_COLUMNS = [
    "depth", "channels", "params", "macs", "pp_level", "latency_us_median",
    "ppv", "sensitivity", "f1", "tp", "fp", "fn",
]


@dataclass
class MatchResult:
    tp: int
    fp: int
    fn: int
    pairs: list[tuple[int, int]] = field(default_factory=list)


@dataclass
class EvalReport:
    record_id: str
    ppv: float
    sensitivity: float
    f1: float
    tolerance_ms: float
    tp: int = 0
    fp: int = 0
    fn: int = 0
    zero_beat: bool = False

    @property
    def n_detected(self) -> int:
        return self.tp + self.fp

    @classmethod
    def from_counts(cls, record_id, tp, fp, fn, tolerance_ms) -> "EvalReport":
        ppv = tp / (tp + fp) if tp + fp else 0.0
        se = tp / (tp + fn) if tp + fn else 0.0
        return cls(record_id, ppv, se, f1_score(ppv, se), tolerance_ms, tp, fp, fn,
                   zero_beat=(tp + fn == 0))

    def to_dict(self) -> dict:
        return {**asdict(self), "n_detected": self.n_detected}


@dataclass
class ComplexityReport:
    depth: int
    channels: int
    params: int
    macs_per_segment: int
    latency_us_median: float
    pp_level: str


def match_beats(detected, reference, tol_ms=DEFAULT_TOL_MS, fs=WORKING_FS) -> MatchResult:
    """Greedy chronological one-to-one matching within ``round(tol_ms * fs / 1000)`` samples."""
    d = np.asarray(getattr(detected, "peaks", detected), dtype=np.int64)
    r = np.asarray(getattr(reference, "peaks", reference), dtype=np.int64)
    w = int(round(tol_ms * fs / 1000.0))
    i = j = 0
    pairs = []
    while i < d.size and j < r.size:
        if abs(d[i] - r[j]) <= w:
            pairs.append((int(d[i]), int(r[j])))
            i += 1
            j += 1
        elif d[i] < r[j]:
            i += 1
        else:
            j += 1
    tp = len(pairs)
    return MatchResult(tp=tp, fp=int(d.size) - tp, fn=int(r.size) - tp, pairs=pairs)


def f1_score(ppv: float, sensitivity: float) -> float:
    if ppv + sensitivity == 0:
        return 0.0
    return 2.0 * ppv * sensitivity / (ppv + sensitivity)


# --------------------------------------------------------------------------
# Detection pipeline
# --------------------------------------------------------------------------


@dataclass
class Detection:
    peaks: AnnotationSet
    raw: object  # PredictionStream straight from the model
    refined: object  # after post-processing
    record: EcgRecord  # at the working rate


def predict_stream(record: EcgRecord, predictor, window_s=WINDOW_S):
    """Run ``predictor`` over non-overlapping windows and stitch the masks.

    ``predictor`` is a :class:`cnn.CnnModel` or any callable mapping a
    :class:`Segment` to a binary mask of window length.
    """
    segments = segment_test(record, window=int(window_s * record.fs))
    if isinstance(predictor, cnn.CnnModel):
        masks = cnn.predict_mask(predictor, np.stack([s.signal for s in segments]))
    else:
        masks = [predictor(s) for s in segments]
    return stitch(
        [(s.start, m, s.valid_len) for s, m in zip(segments, masks)],
        length=len(record), record_id=record.record_id, fs=record.fs,
    )


def detect_record(record: EcgRecord, predictor, pp_level="advanced", working_fs=WORKING_FS,
                  window_s=WINDOW_S, peak_method="argmax") -> Detection:
    """Full inference path: resample, window, predict, stitch, refine, localize."""
    rec = resample(record, working_fs) if record.fs != working_fs else record
    raw = predict_stream(rec, predictor, window_s)
    refined = apply_pp(raw, pp_level, fs=rec.fs)
    peaks = localize_peaks(refined, rec.samples, record_id=rec.record_id, method=peak_method)
    return Detection(peaks, raw, refined, rec)


def evaluate_record(record, reference, predictor, pp_level="advanced", tol_ms=DEFAULT_TOL_MS,
                    working_fs=WORKING_FS, **kw) -> EvalReport:
    det = detect_record(record, predictor, pp_level, working_fs, **kw)
    if record.fs != working_fs:
        reference = rescale_annotations(reference, record.fs, working_fs, length=len(det.record))
    m = match_beats(det.peaks, reference, tol_ms, working_fs)
    return EvalReport.from_counts(record.record_id, m.tp, m.fp, m.fn, tol_ms)


def pool_reports(reports, record_id="pooled", tol_ms=DEFAULT_TOL_MS) -> EvalReport:
    """Micro-average: sum TP/FP/FN, then score."""
    tp = sum(r.tp for r in reports)
    fp = sum(r.fp for r in reports)
    fn = sum(r.fn for r in reports)
    return EvalReport.from_counts(record_id, tp, fp, fn, tol_ms)


def average_reports(per_model, record_id="dataset", tol_ms=DEFAULT_TOL_MS) -> EvalReport:
    """Mean of per-model scores; counts are totals over models."""
    out = pool_reports(per_model, record_id, tol_ms)
    out.ppv = float(np.mean([r.ppv for r in per_model]))
    out.sensitivity = float(np.mean([r.sensitivity for r in per_model]))
    out.f1 = float(np.mean([r.f1 for r in per_model]))
    return out


@dataclass
class DatasetReport:
    aggregate: EvalReport
    per_model: list[EvalReport]
    per_record: list[list[EvalReport]]


def evaluate_dataset(records, references, models, pp_level="advanced", tol_ms=DEFAULT_TOL_MS,
                     **kw) -> DatasetReport:
    """Score every model on every record; the dataset F1 is the mean over models."""
    if not models:
        raise ValueError("need at least one model")
    return evaluate_folds([(m, records, references) for m in models], pp_level, tol_ms, **kw)


def evaluate_folds(fold_sets, pp_level="advanced", tol_ms=DEFAULT_TOL_MS, **kw) -> DatasetReport:
    """Like :func:`evaluate_dataset`, but each model has its own record set.

    ``fold_sets`` is a sequence of ``(model, records, references)``, e.g. each
    fold model with its held-out subjects.
    """
    per_model, per_record = [], []
    for i, (model, records, references) in enumerate(fold_sets):
        reps = [evaluate_record(rec, ref, model, pp_level, tol_ms, **kw)
                for rec, ref in zip(records, references)]
        per_record.append(reps)
        per_model.append(pool_reports(reps, f"model{i}", tol_ms))
    return DatasetReport(average_reports(per_model, "dataset", tol_ms), per_model, per_record)


# --------------------------------------------------------------------------
# Complexity sweep
# --------------------------------------------------------------------------


def time_segment_latency(model, segments, pp_level, fs=WORKING_FS, runs=30, warmup=5) -> float:
    """Median microseconds for predict + post-process of one window."""
    runs = max(runs, 30)
    total = warmup + runs
    samples = []
    for i in range(total):
        seg = segments[i % len(segments)]
        t0 = time.perf_counter_ns()
        apply_pp(cnn.predict_mask(model, seg.signal), pp_level, fs=fs)
        dt = time.perf_counter_ns() - t0
        if i >= warmup:
            samples.append(dt / 1000.0)
    return float(statistics.median(samples))


def complexity_sweep(models_by_depth: dict, pp_levels, records, references, tol_ms=DEFAULT_TOL_MS,
                     working_fs=WORKING_FS, timing_runs=30):
    """One ``(ComplexityReport, EvalReport)`` per depth x post-processing level.

    ``models_by_depth`` maps depth to a list of fold models. Latency is timed
    on the first model of each depth.
    """
    recs = [resample(r, working_fs) if r.fs != working_fs else r for r in records]
    window = WINDOW_S * working_fs
    timing_segments = [s for r in recs for s in segment_test(r, window)]
    rows = []
    for depth in sorted(models_by_depth):
        models = models_by_depth[depth]
        cfg = models[0].config
        for level in pp_levels:
            if level not in PP_LEVELS:
                raise ValueError(f"unknown post-processing level {level!r}")
            latency = time_segment_latency(models[0], timing_segments, level, working_fs, timing_runs)
            ds = evaluate_dataset(records, references, models, level, tol_ms, working_fs=working_fs)
            rows.append((
                ComplexityReport(depth, cfg.channels, cnn.count_params(cfg),
                                 cnn.count_macs(cfg, window), latency, level),
                ds.aggregate,
            ))
    return rows


def sweep_row(cx: ComplexityReport, ev: EvalReport) -> dict:
    return {
        "depth": cx.depth, "channels": cx.channels, "params": cx.params,
        "macs": cx.macs_per_segment, "pp_level": cx.pp_level,
        "latency_us_median": f"{cx.latency_us_median:.1f}",
        "ppv": repr(ev.ppv), "sensitivity": repr(ev.sensitivity), "f1": repr(ev.f1),
        "tp": ev.tp, "fp": ev.fp, "fn": ev.fn,
    }


def write_sweep_csv(rows, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
        w.writeheader()
        for cx, ev in rows:
            w.writerow(sweep_row(cx, ev))
    return path
