"""Resampling, windowing, per-window z-scoring and QRS mask generation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

from .signal_io import AnnotationSet, EcgRecord
from .errors import EmptyRecord

WORKING_FS = 100
WINDOW_S = 3
TRAIN_HOP_S = 1
MASK_HALF_WIDTH_MS = 50.0

FIR_TAPS = 51
FIR_CUTOFF_RATIO = 0.45
STD_FLOOR = 1e-8


@dataclass
class Segment:
    """One fixed-length window of a record.

    ``valid_len`` is shorter than ``len(signal)`` only for the zero-padded
    tail window of a test segmentation. ``mask`` is ``None`` for test windows.
    """

    record_id: str
    start: int
    signal: np.ndarray
    mask: np.ndarray | None = None
    valid_len: int | None = None

    def __post_init__(self):
        if self.valid_len is None:
            self.valid_len = len(self.signal)


def resample(record: EcgRecord, target_fs: int) -> EcgRecord:
    """Bring ``record`` to ``target_fs``.

    Downsampling low-passes with a 51-tap Hamming FIR (cutoff at 0.45 of the
    new rate) run forward and backward, then linearly interpolates.
    """
    if target_fs <= 0:
        raise ValueError(f"target_fs must be positive, got {target_fs}")
    x = np.asarray(record.samples, dtype=np.float64)
    if x.size == 0:
        raise EmptyRecord(f"record {record.record_id!r} has no samples")
    fs_in = record.fs
    if fs_in == target_fs:
        return EcgRecord(record.record_id, record.subject_id, target_fs, x.copy())

    if target_fs < fs_in and x.size > 1:
        taps = sps.firwin(FIR_TAPS, FIR_CUTOFF_RATIO * target_fs, window="hamming", fs=fs_in)
        x = sps.filtfilt(taps, [1.0], x, padlen=min(3 * FIR_TAPS, x.size - 1))

    n_out = max(1, int(round(x.size * target_fs / fs_in)))
    positions = np.arange(n_out) * (fs_in / target_fs)
    y = np.interp(positions, np.arange(x.size), x)
    return EcgRecord(record.record_id, record.subject_id, target_fs, y)


def rescale_annotations(ann: AnnotationSet, fs_in, fs_out, length=None) -> AnnotationSet:
    """Map peak indices to a new sampling rate, clipping to ``length - 1``."""
    scaled = np.round(ann.peaks * (fs_out / fs_in)).astype(np.int64)
    if length is not None:
        scaled = np.clip(scaled, 0, length - 1)
    # order-preserving dedup; input is already sorted
    keep = np.ones(scaled.size, dtype=bool)
    keep[1:] = scaled[1:] != scaled[:-1]
    return AnnotationSet(ann.record_id, scaled[keep])


def make_mask(ann: AnnotationSet, length: int, fs, half_width_ms=MASK_HALF_WIDTH_MS) -> np.ndarray:
    """Binary QRS mask: ones within ``round(half_width_ms * fs / 1000)`` of every peak."""
    h = int(round(half_width_ms * 1e-3 * fs))
    # difference array: +1 at window start, -1 one past the end
    edges = np.zeros(length + 1, dtype=np.int64)
    lo = np.clip(ann.peaks - h, 0, length)
    hi = np.clip(ann.peaks + h + 1, 0, length)
    np.add.at(edges, lo, 1)
    np.add.at(edges, hi, -1)
    return (np.cumsum(edges[:-1]) > 0).astype(np.uint8)


def normalize(x) -> np.ndarray:
    """Standard score with the population std; near-constant input maps to zeros."""
    x = np.asarray(x, dtype=np.float64)
    std = x.std()
    if std < STD_FLOOR:
        return np.zeros_like(x)
    return (x - x.mean()) / std


def segment_train(record: EcgRecord, mask, window=None, hop=None) -> list[Segment]:
    """Overlapping training windows; windows past the record end are dropped."""
    window = window or WINDOW_S * record.fs
    hop = hop or TRAIN_HOP_S * record.fs
    mask = np.asarray(mask)
    if mask.size != len(record):
        raise ValueError(f"mask length {mask.size} != record length {len(record)}")
    out = []
    for start in range(0, len(record) - window + 1, hop):
        out.append(
            Segment(
                record_id=record.record_id,
                start=start,
                signal=normalize(record.samples[start : start + window]),
                mask=mask[start : start + window].copy(),
            )
        )
    return out


def segment_test(record: EcgRecord, window=None) -> list[Segment]:
    """Non-overlapping windows; the tail is normalized then zero-padded."""
    window = window or WINDOW_S * record.fs
    out = []
    for start in range(0, len(record), window):
        chunk = record.samples[start : start + window]
        sig = np.zeros(window)
        sig[: chunk.size] = normalize(chunk)
        out.append(Segment(record.record_id, start, sig, valid_len=chunk.size))
    return out


def prepare_record(record: EcgRecord, ann: AnnotationSet, working_fs=WORKING_FS):
    """Resample a record and carry its annotations along to ``working_fs``."""
    rec = resample(record, working_fs)
    return rec, rescale_annotations(ann, record.fs, working_fs, length=len(rec))
