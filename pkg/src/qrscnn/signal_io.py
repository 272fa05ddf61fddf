"""ECG record and annotation files, plus a seeded synthetic ECG generator.

Three on-disk formats are supported:

* ``.csv`` signal: one decimal float per line.
* ``.f32`` signal: raw little-endian binary32 with a ``<name>.json`` sidecar
  holding ``record_id``, ``subject_id``, ``fs`` and ``n_samples``.
* ``.ann`` annotations: one non-negative integer sample index per line.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    EmptyRecord,
    MalformedBinary,
    NegativeIndex,
    NonFiniteSample,
    ParseError,
    ShapeMismatch,
)

WANDER_HZ = 0.3
FIRST_BEAT_S = 0.5


class UnsortedAnnotations(UserWarning):
    """Annotation file was not in increasing order (it has been sorted)."""


@dataclass
class EcgRecord:
    record_id: str
    subject_id: str
    fs: int
    samples: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.fs <= 0:
            raise ValueError(f"fs must be positive, got {self.fs}")
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise EmptyRecord(f"record {self.record_id!r} has no samples")

    def __len__(self):
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.fs


@dataclass
class AnnotationSet:
    record_id: str
    peaks: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        self.peaks = np.asarray(self.peaks, dtype=np.int64).reshape(-1)

    def __len__(self):
        return self.peaks.size

    def check_bounds(self, length: int) -> None:
        """Raise if the peaks are not strictly increasing within ``[0, length)``."""
        p = self.peaks
        if p.size and (p[0] < 0 or p[-1] >= length or np.any(np.diff(p) <= 0)):
            raise ValueError(
                f"annotations of {self.record_id!r} are not strictly increasing "
                f"within [0, {length})"
            )


@dataclass
class SynthParams:
    duration_s: float = 60.0
    fs: int = 100
    mean_hr_bpm: float = 72.0
    hr_jitter_pct: float = 0.05
    qrs_width_ms: float = 60.0
    qrs_amplitude: float = 1.0
    noise_snr_db: float = 10.0
    baseline_wander_amplitude: float = 0.15
    seed: int = 0

    def validate(self) -> None:
        if not 30 <= self.mean_hr_bpm <= 220:
            raise ValueError(f"mean_hr_bpm must lie in [30, 220], got {self.mean_hr_bpm}")
        if not self.duration_s > 0:
            raise ValueError("duration_s must be positive")
        if self.fs < 100:
            raise ValueError(f"fs must be at least 100 Hz, got {self.fs}")
        if not 0 <= self.hr_jitter_pct < 1:
            raise ValueError("hr_jitter_pct must lie in [0, 1)")
        if not self.qrs_width_ms > 0:
            raise ValueError("qrs_width_ms must be positive")


# --------------------------------------------------------------------------
# Signals
# --------------------------------------------------------------------------


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def load_record(path, fs=None, record_id=None, subject_id=None) -> EcgRecord:
    """Load a single-channel record from ``.csv`` or ``.f32``.

    For ``.f32`` files any argument left as ``None`` is taken from the JSON
    sidecar. For CSV files ``fs`` is required; ids default to the file stem.
    """
    path = Path(path)
    if path.suffix == ".f32":
        raw = path.read_bytes()
        if len(raw) % 4:
            raise MalformedBinary(f"{path}: {len(raw)} bytes is not a multiple of 4")
        samples = np.frombuffer(raw, dtype="<f4").astype(np.float64)
        meta = {}
        side = sidecar_path(path)
        if side.exists():
            meta = json.loads(side.read_text())
            if "n_samples" in meta and meta["n_samples"] != samples.size:
                raise ShapeMismatch(
                    f"{side}: header says {meta['n_samples']} samples, file has {samples.size}"
                )
        fs = fs if fs is not None else meta.get("fs")
        record_id = record_id if record_id is not None else meta.get("record_id", path.stem)
        subject_id = subject_id if subject_id is not None else meta.get("subject_id", record_id)
    else:
        values = []
        with path.open() as fh:
            for line_no, line in enumerate(fh, start=1):
                token = line.strip()
                if not token:
                    continue
                try:
                    values.append(float(token))
                except ValueError:
                    raise ParseError(path, line_no, token) from None
        samples = np.asarray(values, dtype=np.float64)
        record_id = record_id if record_id is not None else path.stem
        subject_id = subject_id if subject_id is not None else record_id
    if fs is None:
        raise ValueError(f"{path}: sampling rate not given and no sidecar found")
    if samples.size == 0:
        raise EmptyRecord(f"{path}: no samples")
    if not np.all(np.isfinite(samples)):
        bad = int(np.flatnonzero(~np.isfinite(samples))[0])
        raise NonFiniteSample(f"{path}: non-finite value at sample {bad}")
    return EcgRecord(record_id=record_id, subject_id=subject_id, fs=int(fs), samples=samples)


def save_record(record: EcgRecord, path) -> Path:
    """Write ``record`` as ``.f32`` (+ sidecar) or ``.csv`` depending on suffix."""
    path = Path(path)
    if path.suffix == ".f32":
        path.write_bytes(record.samples.astype("<f4").tobytes())
        header = {
            "record_id": record.record_id,
            "subject_id": record.subject_id,
            "fs": record.fs,
            "n_samples": int(record.samples.size),
        }
        sidecar_path(path).write_text(json.dumps(header, indent=2) + "\n")
    else:
        path.write_text("".join(f"{x:.7g}\n" for x in record.samples))
    return path


# --------------------------------------------------------------------------
# Annotations
# --------------------------------------------------------------------------


def load_annotations(path, record_id=None) -> AnnotationSet:
    """Read an ``.ann`` file; unsorted input is sorted with a warning."""
    path = Path(path)
    peaks = []
    with path.open() as fh:
        for line_no, line in enumerate(fh, start=1):
            token = line.strip()
            if not token:
                continue
            try:
                value = int(token)
            except ValueError:
                raise ParseError(path, line_no, token) from None
            if value < 0:
                raise NegativeIndex(f"{path}:{line_no}: negative sample index {value}")
            peaks.append(value)
    arr = np.asarray(peaks, dtype=np.int64)
    if arr.size > 1 and np.any(np.diff(arr) < 0):
        warnings.warn(f"{path}: annotations were not sorted", UnsortedAnnotations, stacklevel=2)
    arr = np.unique(arr)
    return AnnotationSet(record_id=record_id if record_id is not None else path.stem, peaks=arr)


def save_annotations(ann: AnnotationSet, path) -> Path:
    path = Path(path)
    path.write_text("".join(f"{int(p)}\n" for p in ann.peaks))
    return path


# --------------------------------------------------------------------------
# Synthetic ECG
# --------------------------------------------------------------------------


def beat_schedule(duration_s, mean_hr_bpm, hr_jitter_pct=0.0, rng=None):
    """Beat times in seconds, starting at 0.5 s and strictly before ``duration_s``."""
    rr = 60.0 / mean_hr_bpm
    times = []
    if hr_jitter_pct == 0:
        k = 0
        while (t := FIRST_BEAT_S + k * rr) < duration_s:
            times.append(t)
            k += 1
        return np.asarray(times)
    t = FIRST_BEAT_S
    while t < duration_s:
        times.append(t)
        t += rr * (1.0 + rng.uniform(-hr_jitter_pct, hr_jitter_pct))
    return np.asarray(times)


def synth_ecg(params: SynthParams, record_id="synth", subject_id=None):
    """Generate a noisy Gaussian-bump ECG and its ground-truth R-peak indices.

    Each beat is a Gaussian bump of full width at half maximum
    ``qrs_width_ms`` centred on an integer sample. The clean signal (bumps plus
    a 0.3 Hz baseline wander) is corrupted by white Gaussian noise at
    ``noise_snr_db``; pass ``math.inf`` for a noise-free record.
    """
    params.validate()
    rng = np.random.default_rng(params.seed)
    fs = params.fs
    n = int(round(params.duration_s * fs))
    times = beat_schedule(params.duration_s, params.mean_hr_bpm, params.hr_jitter_pct, rng)
    peaks = np.unique(np.clip(np.round(times * fs).astype(np.int64), 0, n - 1))

    t = np.arange(n)
    sigma = params.qrs_width_ms * 1e-3 * fs / (2.0 * math.sqrt(2.0 * math.log(2.0)))
    half_span = int(math.ceil(6 * sigma))
    clean = np.zeros(n)
    for p in peaks:
        lo, hi = max(0, p - half_span), min(n, p + half_span + 1)
        clean[lo:hi] += params.qrs_amplitude * np.exp(-0.5 * ((t[lo:hi] - p) / sigma) ** 2)

    phase = rng.uniform(0.0, 2.0 * math.pi)
    clean += params.baseline_wander_amplitude * np.sin(2.0 * math.pi * WANDER_HZ * t / fs + phase)

    signal = clean
    if math.isfinite(params.noise_snr_db):
        power = float(np.mean(clean**2))
        noise_std = math.sqrt(power / 10.0 ** (params.noise_snr_db / 10.0))
        signal = clean + noise_std * rng.standard_normal(n)

    subject_id = subject_id if subject_id is not None else record_id
    record = EcgRecord(record_id=record_id, subject_id=subject_id, fs=fs, samples=signal)
    return record, AnnotationSet(record_id=record_id, peaks=peaks)
