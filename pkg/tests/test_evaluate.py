import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from qrscnn import cnn
from qrscnn.evaluate import (
    SWEEP_COLUMNS,
    EvalReport,
    complexity_sweep,
    detect_record,
    evaluate_dataset,
    evaluate_record,
    f1_score,
    match_beats,
    pool_reports,
    write_sweep_csv,
)
from qrscnn.preprocess import make_mask, resample, rescale_annotations
from qrscnn.signal_io import AnnotationSet, EcgRecord, SynthParams, synth_ecg


def optimal_tp(detected, reference, w):
    if not len(detected) or not len(reference):
        return 0
    adj = np.abs(np.subtract.outer(np.asarray(detected), np.asarray(reference))) <= w
    m = maximum_bipartite_matching(csr_matrix(adj.astype(np.int8)), perm_type="column")
    return int(np.sum(m >= 0))


def mask_oracle(record, ann, fs=100):
    """Predictor that returns the ground-truth mask slice for each window."""
    full = make_mask(ann, len(record), fs)

    def predict(seg):
        out = np.zeros(len(seg.signal), dtype=np.uint8)
        out[: seg.valid_len] = full[seg.start : seg.start + seg.valid_len]
        return out

    return predict


# -- matching ------------------------------------------------------------------------


def test_match_identity():
    ref = AnnotationSet("r", [10, 90, 200, 310])
    m = match_beats(ref, ref, 75, 100)
    assert (m.tp, m.fp, m.fn) == (4, 0, 0)


def test_match_window_boundary():
    ref = np.array([100, 300, 500])
    w = round(75 * 100 / 1000)
    assert match_beats(ref + w, ref, 75, 100).tp == 3
    m = match_beats(ref + w + 1, ref, 75, 100)
    assert (m.tp, m.fp, m.fn) == (0, 3, 3)


def test_match_one_to_one():
    m = match_beats([100, 104], [102], 70, 100)  # w = 7
    assert (m.tp, m.fp, m.fn) == (1, 1, 0)
    assert m.pairs == [(100, 102)]


@settings(max_examples=2000, deadline=None)
@given(st.lists(st.integers(0, 2000), max_size=30, unique=True),
       st.lists(st.integers(0, 2000), max_size=30, unique=True),
       st.integers(0, 20))
def test_match_count_identities(det, ref, w):
    det, ref = sorted(det), sorted(ref)
    m = match_beats(det, ref, tol_ms=w * 10, fs=100)
    assert m.tp == len(m.pairs)
    assert m.tp + m.fp == len(det)
    assert m.tp + m.fn == len(ref)
    assert len({d for d, _ in m.pairs}) == m.tp == len({r for _, r in m.pairs})
    assert all(abs(d - r) <= w for d, r in m.pairs)


def test_match_agrees_with_optimal_when_beats_well_separated():
    rng = np.random.default_rng(0)
    agree = total = 0
    w = 8
    for _ in range(2000):
        ref = np.cumsum(rng.integers(2 * w + 1, 60, size=rng.integers(0, 15)))
        hit = ref[rng.random(ref.size) < 0.85]
        det = np.unique(np.concatenate([
            hit + rng.integers(-w - 3, w + 4, size=hit.size),
            rng.integers(0, 700, size=rng.integers(0, 4)),
        ]))
        total += 1
        agree += match_beats(det, ref, 80, 100).tp == optimal_tp(det, ref, w)
    assert agree / total >= 0.99


# -- F1 -------------------------------------------------------------------------------


def test_f1_values():
    assert f1_score(1.0, 1.0) == 1.0
    assert f1_score(0.9, 0.8) == pytest.approx(0.8470588235294118, abs=1e-12)
    assert f1_score(0.0, 0.0) == 0.0


@settings(max_examples=500, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_f1_symmetric_monotone(p, s, bump):
    assert f1_score(p, s) == pytest.approx(f1_score(s, p), abs=1e-15)
    hi = min(1.0, p + bump)
    assert f1_score(hi, s) >= f1_score(p, s) - 1e-15


def test_report_zero_denominators():
    r = EvalReport.from_counts("x", 0, 0, 0, 75)
    assert (r.ppv, r.sensitivity, r.f1, r.zero_beat) == (0.0, 0.0, 0.0, True)


def test_pooling():
    a = EvalReport.from_counts("a", 9, 1, 1, 75)
    b = EvalReport.from_counts("b", 0, 0, 10, 75)
    pooled = pool_reports([a, b])
    assert pooled.ppv == pytest.approx(0.9)
    assert pooled.sensitivity == pytest.approx(0.45)


# -- record / dataset evaluation -------------------------------------------------------------


@pytest.fixture(scope="module")
def clean_pairs():
    out = []
    for i, hr in enumerate([48, 75, 131]):
        params = SynthParams(duration_s=37, fs=100, mean_hr_bpm=hr, hr_jitter_pct=0,
                             noise_snr_db=math.inf, baseline_wander_amplitude=0.0, seed=i)
        out.append(synth_ecg(params, record_id=f"c{i}"))
    return out


def test_oracle_mask_gives_perfect_f1(clean_pairs):
    for rec, ann in clean_pairs:
        r = evaluate_record(rec, ann, mask_oracle(rec, ann), "advanced", 75)
        assert (r.f1, r.fp, r.fn) == (1.0, 0, 0)


def test_detect_peaks_exact_with_oracle(clean_pairs):
    rec, ann = clean_pairs[1]
    det = detect_record(rec, mask_oracle(rec, ann), "advanced")
    np.testing.assert_array_equal(det.peaks.peaks, ann.peaks)


def test_all_zero_model(clean_pairs):
    rec, ann = clean_pairs[0]
    zero = cnn.init_model(cnn.ModelConfig())
    for p in zero.parameters():
        p[...] = 0
    r = evaluate_record(rec, ann, zero, "advanced", 75)
    assert (r.f1, r.tp, r.fn) == (0.0, 0, len(ann))


def test_empty_reference_and_detection():
    rec = EcgRecord("flat", "flat", 100, np.zeros(500))
    r = evaluate_record(rec, AnnotationSet("flat", []), lambda s: np.zeros(300, np.uint8))
    assert (r.ppv, r.sensitivity, r.f1, r.zero_beat) == (0.0, 0.0, 0.0, True)


def test_evaluate_record_resamples_to_working_rate():
    params = SynthParams(duration_s=20, fs=360, mean_hr_bpm=70, hr_jitter_pct=0,
                         noise_snr_db=math.inf, baseline_wander_amplitude=0.0, seed=3)
    rec, ann = synth_ecg(params)
    rec100 = resample(rec, 100)
    ann100 = rescale_annotations(ann, 360, 100, length=len(rec100))
    r = evaluate_record(rec, ann, mask_oracle(rec100, ann100), "advanced", 75)
    assert r.f1 == 1.0


def test_dataset_single_model_single_record(clean_pairs):
    rec, ann = clean_pairs[2]
    model = cnn.init_model(cnn.ModelConfig(seed=5))
    single = evaluate_record(rec, ann, model, "minimal", 75)
    ds = evaluate_dataset([rec], [ann], [model], "minimal", 75)
    assert (ds.aggregate.f1, ds.aggregate.ppv, ds.aggregate.sensitivity) == (single.f1, single.ppv, single.sensitivity)


def test_dataset_identical_models(clean_pairs):
    recs = [r for r, _ in clean_pairs]
    anns = [a for _, a in clean_pairs]
    model = cnn.init_model(cnn.ModelConfig(seed=6))
    one = evaluate_dataset(recs, anns, [model], "moderate")
    five = evaluate_dataset(recs, anns, [model] * 5, "moderate")
    assert five.aggregate.f1 == pytest.approx(one.aggregate.f1, abs=1e-15)
    assert len(five.per_model) == 5


def test_dataset_needs_models():
    with pytest.raises(ValueError):
        evaluate_dataset([], [], [])


# -- sweep ------------------------------------------------------------------------------------


def test_sweep_rows_and_csv(tmp_path, clean_pairs):
    models = {d: [cnn.init_model(cnn.ModelConfig(depth=d, seed=d))] for d in (2, 4)}
    levels = ["none", "minimal", "moderate", "advanced"]
    rows = complexity_sweep(models, levels, [r for r, _ in clean_pairs[:1]], [a for _, a in clean_pairs[:1]])
    assert len(rows) == 8
    assert [cx.pp_level for cx, _ in rows] == levels * 2
    macs = [cx.macs_per_segment for cx, _ in rows]
    assert macs[0] == 16800 and macs[4] > macs[0]
    assert all(cx.latency_us_median > 0 for cx, _ in rows)
    path = write_sweep_csv(rows, tmp_path / "sweep.csv")
    with path.open() as fh:
        reader = csv.DictReader(fh)
        assert reader.fieldnames == SWEEP_COLUMNS
        assert len(list(reader)) == 8


def test_sweep_none_level_is_raw_stream(clean_pairs):
    rec, ann = clean_pairs[0]
    model = cnn.init_model(cnn.ModelConfig(seed=1))
    rows = complexity_sweep({2: [model]}, ["none"], [rec], [ann])
    raw = detect_record(rec, model, "none")
    assert rows[0][1].tp + rows[0][1].fp == len(raw.peaks)
