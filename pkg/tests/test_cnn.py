import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qrscnn import cnn
from qrscnn.errors import BadMagic, DepthOutOfRange, MissingCache, ShapeMismatch, TruncatedFile

from gradcheck import analytic_grads, max_relative_error, naive_conv1d, numeric_grads, random_case


def zero_model(depth=3, channels=4):
    m = cnn.init_model(cnn.ModelConfig(depth=depth, channels=channels))
    for p in m.parameters():
        p[...] = 0.0
    return m


# -- structure ------------------------------------------------------------------


def test_min_depth_structure():
    m = cnn.init_model(cnn.ModelConfig(depth=2, channels=8))
    assert [l.weights.shape for l in m.layers] == [(8, 1, 5), (2, 8, 1)]
    assert all(not l.bias.any() for l in m.layers)


def test_interior_layers():
    m = cnn.init_model(cnn.ModelConfig(depth=5, channels=3, kernel_len=7))
    assert [l.weights.shape for l in m.layers] == [(3, 1, 7)] + [(3, 3, 7)] * 3 + [(2, 3, 1)]


@pytest.mark.parametrize("depth", [1, 0, 65])
def test_depth_out_of_range(depth):
    with pytest.raises(DepthOutOfRange):
        cnn.init_model(cnn.ModelConfig(depth=depth))


def test_even_kernel_rejected():
    with pytest.raises(ValueError):
        cnn.init_model(cnn.ModelConfig(kernel_len=4))


def test_init_deterministic_and_bounded():
    cfg = cnn.ModelConfig(depth=6, channels=8, seed=11)
    a, b = cnn.init_model(cfg), cnn.init_model(cfg)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert pa.tobytes() == pb.tobytes()
    for layer in a.layers:
        _, in_ch, k = layer.weights.shape
        assert np.abs(layer.weights).max() <= np.sqrt(6 / (in_ch * k))
        # exactly representable in binary32
        np.testing.assert_array_equal(layer.weights, layer.weights.astype(np.float32))


def test_different_seeds_differ():
    a = cnn.init_model(cnn.ModelConfig(seed=1))
    b = cnn.init_model(cnn.ModelConfig(seed=2))
    assert not np.array_equal(a.layers[0].weights, b.layers[0].weights)


# -- convolution ------------------------------------------------------------------


def test_identity_kernel():
    x = np.random.default_rng(0).normal(size=(1, 20))
    layer = cnn.ConvLayer(np.array([[[0, 0, 1, 0, 0]]], dtype=float), np.zeros(1))
    np.testing.assert_array_equal(cnn.conv1d_forward(x, layer), x)


def test_bias_only():
    layer = cnn.ConvLayer(np.random.default_rng(0).normal(size=(3, 2, 5)), np.array([0.5, -1.0, 2.0]))
    out = cnn.conv1d_forward(np.zeros((2, 9)), layer)
    np.testing.assert_array_equal(out, np.repeat([[0.5], [-1.0], [2.0]], 9, axis=1))


def test_conv_matches_naive_small():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1, 8))
    layer = cnn.ConvLayer(rng.normal(size=(2, 1, 5)), rng.normal(size=2))
    np.testing.assert_allclose(cnn.conv1d_forward(x, layer), naive_conv1d(x, layer.weights, layer.bias), atol=1e-6)


def test_conv_batched_equals_per_sample():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(4, 3, 17))
    layer = cnn.ConvLayer(rng.normal(size=(5, 3, 3)), rng.normal(size=5))
    batched = cnn.conv1d_forward(x, layer)
    for i in range(4):
        np.testing.assert_allclose(batched[i], cnn.conv1d_forward(x[i], layer), atol=1e-12)


def test_conv_shape_mismatch():
    layer = cnn.ConvLayer(np.zeros((2, 3, 5)), np.zeros(2))
    with pytest.raises(ShapeMismatch):
        cnn.conv1d_forward(np.zeros((2, 10)), layer)


# -- forward / predict ------------------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(depth=st.integers(2, 64), length=st.integers(1, 300))
def test_forward_shape_preserved(depth, length):
    m = cnn.init_model(cnn.ModelConfig(depth=depth, channels=2))
    x = np.random.default_rng(length).normal(size=length)
    assert cnn.forward(m, x).shape == (2, length)


def test_forward_batched_shape():
    m = cnn.init_model(cnn.ModelConfig(depth=4))
    assert cnn.forward(m, np.zeros((3, 300))).shape == (3, 2, 300)


def test_zero_model_logits_zero_and_mask_zero():
    m = zero_model()
    x = np.random.default_rng(0).normal(size=300)
    assert not cnn.forward(m, x).any()
    assert not cnn.predict_mask(m, x).any()


def test_forward_bit_stable():
    m = cnn.init_model(cnn.ModelConfig(depth=7, seed=3))
    x = np.random.default_rng(9).normal(size=300)
    assert cnn.forward(m, x).tobytes() == cnn.forward(m, x).tobytes()


def test_predict_all_ones_when_class1_dominates():
    m = zero_model(depth=2)
    m.layers[-1].bias[:] = [0.0, 1.0]
    assert cnn.predict_mask(m, np.zeros(50)).all()


def test_predict_step_edge_hand_trace():
    # low conv: y[t] = x[t+1] - x[t]; after ReLU only the rising edge survives.
    # scoring: class0 = 0.5, class1 = h, so class 1 wins where h > 0.5.
    m = cnn.CnnModel(
        cnn.ModelConfig(depth=2, channels=1),
        [
            cnn.ConvLayer(np.array([[[0.0, 0.0, -1.0, 1.0, 0.0]]]), np.zeros(1)),
            cnn.ConvLayer(np.array([[[0.0]], [[1.0]]]), np.array([0.5, 0.0])),
        ],
    )
    x = np.array([0, 0, 0, 0, 1, 1, 1, 1], dtype=float)
    np.testing.assert_array_equal(cnn.predict_mask(m, x), [0, 0, 0, 1, 0, 0, 0, 0])


# -- loss ---------------------------------------------------------------------------


def test_uniform_logits_loss_ln2():
    loss, _ = cnn.softmax_cross_entropy(np.zeros((2, 10)), np.ones(10), 10)
    assert loss == pytest.approx(np.log(2), abs=1e-12)


def test_saturated_logits_loss():
    mask = (np.arange(40) % 3 == 0).astype(np.uint8)
    logits = np.where(mask == 1, [[-10.0], [10.0]], [[10.0], [-10.0]])
    loss, _ = cnn.softmax_cross_entropy(logits, mask, 40)
    assert loss < 1e-8


def test_loss_extreme_logits_finite():
    logits = np.array([[1e4, -1e4], [-1e4, 1e4]])
    loss, d = cnn.softmax_cross_entropy(logits, [1, 1], 2)
    assert np.isfinite(loss) and np.all(np.isfinite(d))


def test_loss_valid_len_zero():
    with pytest.raises(ValueError):
        cnn.softmax_cross_entropy(np.zeros((2, 5)), np.zeros(5), 0)


@pytest.mark.parametrize("valid", [30, 17])
def test_dlogits_finite_differences(valid):
    rng = np.random.default_rng(valid)
    logits = rng.normal(scale=2.0, size=(2, 30))
    mask = (rng.random(30) < 0.5).astype(np.uint8)
    _, d = cnn.softmax_cross_entropy(logits, mask, valid)
    eps = 1e-4
    num = np.zeros_like(logits)
    for idx in np.ndindex(logits.shape):
        up, down = logits.copy(), logits.copy()
        up[idx] += eps
        down[idx] -= eps
        num[idx] = (cnn.softmax_cross_entropy(up, mask, valid)[0]
                    - cnn.softmax_cross_entropy(down, mask, valid)[0]) / (2 * eps)
    denom = np.maximum(np.maximum(np.abs(d), np.abs(num)), 1e-6)
    assert np.max(np.abs(d - num) / denom) < 1e-4
    assert not d[:, valid:].any()


# -- backward -------------------------------------------------------------------------


def test_depth2_gradient_check_len8():
    model, x, mask = random_case(depth=2, channels=8, length=8, seed=0)
    a = analytic_grads(model, x, mask, 8)
    n = numeric_grads(model, x, mask, 8)
    assert max_relative_error(a, n) < 1e-4


def test_gradient_check_batched_partial_valid():
    model, _, _ = random_case(depth=3, channels=3, length=12, seed=5)
    rng = np.random.default_rng(5)
    x = rng.normal(size=(3, 12))
    mask = (rng.random((3, 12)) < 0.4).astype(np.uint8)
    valid = np.array([12, 7, 3])
    a = analytic_grads(model, x, mask, valid)
    n = numeric_grads(model, x, mask, valid)
    assert max_relative_error(a, n) < 1e-4


def test_zero_dlogits_zero_grads():
    m = cnn.init_model(cnn.ModelConfig(depth=4))
    _, cache = cnn.forward(m, np.random.default_rng(0).normal(size=50), train=True)
    for dw, db in cnn.backward(m, cache, np.zeros((2, 50))):
        assert not dw.any() and not db.any()


def test_duplicate_batch_equals_single():
    model, x, mask = random_case(depth=4, channels=5, length=300, seed=8)
    single = analytic_grads(model, x, mask, 300)
    double = analytic_grads(model, np.stack([x, x]), np.stack([mask, mask]), np.array([300, 300]))
    for s, d in zip(single, double):
        assert s.tobytes() == d.tobytes()


def test_backward_without_cache():
    m = cnn.init_model(cnn.ModelConfig())
    with pytest.raises(MissingCache):
        cnn.backward(m, None, np.zeros((2, 10)))


# -- complexity counters -----------------------------------------------------------------


def test_first_layer_params():
    assert cnn.count_params(cnn.ModelConfig(depth=2, channels=8)) == 1 * 8 * 5 + 8 + 8 * 2 * 1 + 2


def test_depth2_macs():
    assert cnn.count_macs(cnn.ModelConfig(depth=2, channels=8), 300) == 16800


@pytest.mark.parametrize("channels", [1, 4, 8, 16])
def test_params_interior_slope(channels):
    counts = [cnn.count_params(cnn.ModelConfig(depth=d, channels=channels)) for d in range(2, 65)]
    assert np.all(np.diff(counts) == channels * channels * 5 + channels)


def test_counts_match_actual_arrays():
    m = cnn.init_model(cnn.ModelConfig(depth=9, channels=6))
    assert cnn.count_params(m) == sum(p.size for p in m.parameters())


# -- serialization -------------------------------------------------------------------------


def test_save_load_bit_exact(tmp_path):
    m = cnn.init_model(cnn.ModelConfig(depth=5, channels=6, seed=4))
    m.layers[2].bias[:] = np.float32(0.123)
    got = cnn.load_model(cnn.save_model(m, tmp_path / "m.qrscnn"))
    assert got.config == m.config
    for a, b in zip(m.parameters(), got.parameters()):
        assert a.tobytes() == b.tobytes()
    x = np.random.default_rng(1).normal(size=300)
    np.testing.assert_array_equal(cnn.predict_mask(m, x), cnn.predict_mask(got, x))


def test_file_layout(tmp_path):
    m = cnn.init_model(cnn.ModelConfig(depth=2, channels=2))
    raw = cnn.save_model(m, tmp_path / "m.qrscnn").read_bytes()
    assert raw[:8] == b"QRSCNN1\x00"
    hlen = int.from_bytes(raw[8:12], "little")
    assert len(raw) == 12 + hlen + 4 * cnn.count_params(m)


def test_bad_magic(tmp_path):
    p = cnn.save_model(cnn.init_model(cnn.ModelConfig()), tmp_path / "m.qrscnn")
    raw = bytearray(p.read_bytes())
    raw[0] = ord("X")
    p.write_bytes(bytes(raw))
    with pytest.raises(BadMagic):
        cnn.load_model(p)


def test_truncated(tmp_path):
    p = cnn.save_model(cnn.init_model(cnn.ModelConfig()), tmp_path / "m.qrscnn")
    p.write_bytes(p.read_bytes()[:-3])
    with pytest.raises(TruncatedFile):
        cnn.load_model(p)


def test_header_depth_disagrees_with_layers(tmp_path):
    m = cnn.init_model(cnn.ModelConfig(depth=2, channels=4))
    m.config = cnn.ModelConfig(depth=3, channels=4)  # header says 3, two layers serialized
    p = cnn.save_model(m, tmp_path / "m.qrscnn")
    with pytest.raises(ShapeMismatch):
        cnn.load_model(p)


def test_trailing_bytes(tmp_path):
    p = cnn.save_model(cnn.init_model(cnn.ModelConfig()), tmp_path / "m.qrscnn")
    p.write_bytes(p.read_bytes() + b"\x00\x00\x00\x00")
    with pytest.raises(ShapeMismatch):
        cnn.load_model(p)
