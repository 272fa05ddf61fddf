"""Refinement of binary prediction streams and R-peak localization.

Three escalating levels are provided:

``minimal``
    salt-and-pepper filter: fill isolated zeros inside runs of ones
    (``11011``, ``1101``) and erase isolated ones inside runs of zeros
    (``00100``, ``0010``), repeated to a fixed point.
``moderate``
    ``minimal``, then drop runs of ones shorter than 64 ms.
``advanced``
    ``moderate``, then resolve candidates closer than 200 ms by dropping the
    weaker (shorter) one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TilingViolation
from .signal_io import AnnotationSet

PP_LEVELS = ("none", "minimal", "moderate", "advanced")

ONES_PATTERNS = ((b"\x01\x01\x00\x01\x01", 2), (b"\x01\x01\x00\x01", 2))
ZEROS_PATTERNS = ((b"\x00\x00\x01\x00\x00", 2), (b"\x00\x00\x01\x00", 2))

MIN_QRS_MS = 64.0
MIN_RR_MS = 200.0


@dataclass
class PredictionStream:
    record_id: str
    bits: np.ndarray
    fs: int = 100

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.uint8)

    def __len__(self):
        return self.bits.size

    def to_text(self) -> str:
        return "".join("1" if b else "0" for b in self.bits)

    @classmethod
    def from_text(cls, text: str, record_id="stream", fs=100) -> "PredictionStream":
        return cls(record_id, np.frombuffer(text.strip().encode(), dtype=np.uint8) - ord("0"), fs)


@dataclass(frozen=True)
class QrsCandidate:
    start: int
    length: int

    @property
    def center(self) -> int:
        return self.start + self.length // 2

    @property
    def stop(self) -> int:
        return self.start + self.length


def min_run_samples(fs) -> int:
    return int(round(MIN_QRS_MS * 1e-3 * fs))


def min_rr_samples(fs) -> int:
    return int(round(MIN_RR_MS * 1e-3 * fs))


def stitch(parts, length=None, record_id="stream", fs=100) -> PredictionStream:
    """Join per-window masks into one record-length stream.

    ``parts`` is an iterable of ``(start, mask, valid_len)``; the windows must
    tile ``[0, length)`` in order with no gap or overlap.
    """
    chunks, expected = [], 0
    for start, mask, valid_len in sorted(parts, key=lambda p: p[0]):
        if start != expected:
            kind = "overlap" if start < expected else "gap"
            raise TilingViolation(f"{kind} at sample {start} (expected {expected})")
        chunks.append(np.asarray(mask, dtype=np.uint8)[:valid_len])
        expected = start + valid_len
    if length is not None and expected != length:
        raise TilingViolation(f"windows cover {expected} samples, record has {length}")
    bits = np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.uint8)
    return PredictionStream(record_id, bits, fs)


def _bits(stream):
    return stream.bits if isinstance(stream, PredictionStream) else np.asarray(stream, dtype=np.uint8)


def _wrap(like, bits):
    if isinstance(like, PredictionStream):
        return PredictionStream(like.record_id, bits, like.fs)
    return bits


def _sweep(buf: bytearray, pattern: bytes, hole: int) -> bool:
    """One left-to-right pass flipping the hole of every match, in place."""
    changed = False
    i = buf.find(pattern)
    while i >= 0:
        buf[i + hole] ^= 1
        changed = True
        i = buf.find(pattern, i + 1)
    return changed


def salt_and_pepper(bits) -> np.ndarray:
    buf = bytearray(np.asarray(bits, dtype=np.uint8).tobytes())
    changed = True
    while changed:
        changed = False
        for pattern, hole in ONES_PATTERNS + ZEROS_PATTERNS:
            changed |= _sweep(buf, pattern, hole)
    return np.frombuffer(bytes(buf), dtype=np.uint8).copy()


def find_candidates(bits) -> list[QrsCandidate]:
    """Runs of consecutive ones; a run's length is its confidence score."""
    b = np.asarray(bits, dtype=np.int8)
    edges = np.diff(np.concatenate(([0], b, [0])))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)
    return [QrsCandidate(int(s), int(e - s)) for s, e in zip(starts, stops)]


def _render(candidates, length) -> np.ndarray:
    out = np.zeros(length, dtype=np.uint8)
    for c in candidates:
        out[c.start : c.stop] = 1
    return out


def pp_minimal(stream):
    return _wrap(stream, salt_and_pepper(_bits(stream)))


def pp_moderate(stream, fs=None):
    fs = fs or getattr(stream, "fs", 100)
    bits = salt_and_pepper(_bits(stream))
    min_len = min_run_samples(fs)
    kept = [c for c in find_candidates(bits) if c.length >= min_len]
    return _wrap(stream, _render(kept, bits.size))


def resolve_rr_conflicts(candidates, min_distance) -> list[QrsCandidate]:
    """Drop the weaker member of the leftmost too-close pair until none remain.

    Equal confidence drops the later candidate. Pairs left of ``i`` never need
    rechecking: removals only widen the gaps between surviving neighbours.
    """
    cands = list(candidates)
    i = 0
    while i < len(cands) - 1:
        left, right = cands[i], cands[i + 1]
        if right.center - left.center < min_distance:
            del cands[i + 1 if right.length <= left.length else i]
        else:
            i += 1
    return cands


def pp_advanced(stream, fs=None):
    fs = fs or getattr(stream, "fs", 100)
    bits = _bits(pp_moderate(_bits(stream), fs=fs))
    kept = resolve_rr_conflicts(find_candidates(bits), min_rr_samples(fs))
    return _wrap(stream, _render(kept, bits.size))


def apply_pp(stream, level: str, fs=None):
    """Apply refinement ``level`` (one of :data:`PP_LEVELS`)."""
    if level == "none":
        return stream
    if level == "minimal":
        return pp_minimal(stream)
    if level == "moderate":
        return pp_moderate(stream, fs=fs)
    if level == "advanced":
        return pp_advanced(stream, fs=fs)
    raise ValueError(f"unknown post-processing level {level!r}; expected one of {PP_LEVELS}")


def localize_peaks(stream, signal, record_id=None, method="argmax") -> AnnotationSet:
    """One R-peak per run of ones.

    ``method="argmax"`` picks the sample of largest absolute amplitude inside
    the run (earliest on ties); ``"midpoint"`` picks the run centre.
    """
    bits = _bits(stream)
    x = np.abs(np.asarray(getattr(signal, "samples", signal), dtype=np.float64))
    if x.size != bits.size:
        raise ValueError(f"stream length {bits.size} != signal length {x.size}")
    peaks = []
    for c in find_candidates(bits):
        if method == "midpoint":
            peaks.append(c.center)
        else:
            peaks.append(c.start + int(np.argmax(x[c.start : c.stop])))
    if record_id is None:
        record_id = getattr(stream, "record_id", None) or getattr(signal, "record_id", "stream")
    return AnnotationSet(record_id, np.asarray(peaks, dtype=np.int64))
