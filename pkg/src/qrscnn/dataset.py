"""Synthetic corpora, manifest files and per-subject training windows."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .preprocess import (
    MASK_HALF_WIDTH_MS,
    TRAIN_HOP_S,
    WINDOW_S,
    WORKING_FS,
    make_mask,
    prepare_record,
    segment_train,
)
from .signal_io import (
    SynthParams,
    load_annotations,
    load_record,
    save_annotations,
    save_record,
    synth_ecg,
)

MANIFEST_NAME = "manifest.json"


@dataclass
class CorpusSpec:
    """How to draw a synthetic corpus: per-record heart rate is uniform in
    ``[hr_min, hr_max]`` and each record gets its own derived seed."""

    duration_s: float = 60.0
    fs: int = 100
    hr_min: float = 50.0
    hr_max: float = 110.0
    hr_jitter_pct: float = 0.05
    qrs_width_ms: float = 60.0
    qrs_amplitude: float = 1.0
    noise_snr_db: float = 10.0
    baseline_wander_amplitude: float = 0.15


def synth_corpus(n_records: int, spec: CorpusSpec | None = None, seed: int = 0):
    """``n_records`` synthetic ``(EcgRecord, AnnotationSet)`` pairs, one subject each."""
    spec = spec or CorpusSpec()
    rng = np.random.default_rng(seed)
    hrs = rng.uniform(spec.hr_min, spec.hr_max, size=n_records)
    seeds = rng.integers(0, 2**63 - 1, size=n_records)
    out = []
    for i in range(n_records):
        rid = f"syn{i:03d}"
        params = SynthParams(
            duration_s=spec.duration_s, fs=spec.fs, mean_hr_bpm=float(hrs[i]),
            hr_jitter_pct=spec.hr_jitter_pct, qrs_width_ms=spec.qrs_width_ms,
            qrs_amplitude=spec.qrs_amplitude, noise_snr_db=spec.noise_snr_db,
            baseline_wander_amplitude=spec.baseline_wander_amplitude, seed=int(seeds[i]),
        )
        out.append(synth_ecg(params, record_id=rid))
    return out


def write_corpus(pairs, out_dir, extra=None) -> Path:
    """Write ``.f32`` + sidecar + ``.ann`` per record and a manifest; returns its path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = {}
    for rec, ann in pairs:
        save_record(rec, out_dir / f"{rec.record_id}.f32")
        save_annotations(ann, out_dir / f"{rec.record_id}.ann")
        entries[rec.record_id] = {
            "subject_id": rec.subject_id,
            "signal": f"{rec.record_id}.f32",
            "header": f"{rec.record_id}.json",
            "annotations": f"{rec.record_id}.ann",
        }
    manifest = {"records": entries}
    if extra:
        manifest.update(extra)
    path = out_dir / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def manifest_files(manifest_path) -> list[Path]:
    """Every file the manifest refers to (used to report missing inputs up front)."""
    manifest_path = Path(manifest_path)
    data = json.loads(manifest_path.read_text())
    base = manifest_path.parent
    files = []
    for entry in data["records"].values():
        files.append(base / entry["signal"])
        files.append(base / entry["annotations"])
    return files


def load_corpus(manifest_path):
    """Load every ``(EcgRecord, AnnotationSet)`` listed in a manifest, sorted by id."""
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / MANIFEST_NAME
    data = json.loads(manifest_path.read_text())
    base = manifest_path.parent
    pairs = []
    for rid in sorted(data["records"]):
        entry = data["records"][rid]
        rec = load_record(base / entry["signal"], fs=entry.get("fs"), record_id=rid,
                          subject_id=entry.get("subject_id", rid))
        ann = load_annotations(base / entry["annotations"], record_id=rid)
        ann.check_bounds(len(rec))
        pairs.append((rec, ann))
    return pairs


def training_segments_by_subject(pairs, working_fs=WORKING_FS, half_width_ms=MASK_HALF_WIDTH_MS,
                                 window_s=WINDOW_S, hop_s=TRAIN_HOP_S) -> dict:
    """Resample, mask and window every record; group the windows by subject."""
    by_subject: dict[str, list] = {}
    for rec, ann in pairs:
        rec_w, ann_w = prepare_record(rec, ann, working_fs)
        mask = make_mask(ann_w, len(rec_w), working_fs, half_width_ms)
        segs = segment_train(rec_w, mask, window=int(window_s * working_fs), hop=int(hop_s * working_fs))
        by_subject.setdefault(rec.subject_id, []).extend(segs)
    return by_subject


def corpus_spec_from_dict(data: dict) -> CorpusSpec:
    return replace(CorpusSpec(), **data)


def corpus_spec_to_dict(spec: CorpusSpec) -> dict:
    return asdict(spec)
