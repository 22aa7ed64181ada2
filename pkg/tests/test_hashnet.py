import math

import numpy as np
import pytest

from drh.errors import (
    DimensionMismatch,
    DivergenceDetected,
    EmptyTrainingSet,
    MalformedHeader,
)
from drh.hashnet import (
    HashCode,
    HashLayerParams,
    TrainConfig,
    binarize,
    encode,
    encode_words,
    forward,
    gradients,
    load_params,
    loss,
    pack_bits,
    save_params,
    train,
    unpack_bits,
)

from conftest import bit_at


def scalar_forward(w, b, x):
    """Independent scalar-loop evaluation of the layer."""
    out = np.empty(w.shape[0])
    for i in range(w.shape[0]):
        z = b[i]
        for j in range(w.shape[1]):
            z += w[i, j] * x[j]
        out[i] = 1.0 / (1.0 + math.exp(-z))
    return out


def formula_loss(w, b, x_rows, y_rows, alpha, beta, eta):
    """From-definition objective, summed sample by sample."""
    total = 0.0
    for x, y in zip(x_rows, y_rows):
        h = scalar_forward(w, b, x)
        total += 0.5 * np.sum((y - h) ** 2) - 0.5 * alpha * np.sum(h * h)
    return total + 0.5 * beta * np.sum(w * w) + 0.5 * eta * np.sum(b * b)


class TestForward:
    def test_zero_params_give_half(self):
        params = HashLayerParams(np.zeros((5, 3)), np.zeros(5))
        assert np.allclose(forward(params, np.ones(3)), 0.5)

    def test_saturation_limit(self):
        params = HashLayerParams(np.zeros((2, 3)), np.array([60.0, -60.0]))
        h = forward(params, np.zeros(3))
        assert h[0] == pytest.approx(1.0, abs=1e-12)
        assert h[1] == pytest.approx(0.0, abs=1e-12)
        assert np.all((h > 0.0) | (h == pytest.approx(0.0, abs=1e-15)))

    def test_matches_scalar_oracle(self, rng):
        w = rng.standard_normal((8, 4))
        b = rng.standard_normal(8)
        x = rng.standard_normal(4)
        params = HashLayerParams(w, b)
        assert np.allclose(forward(params, x), scalar_forward(w, b, x), rtol=1e-12)

    def test_dimension_mismatch(self, rng):
        params = HashLayerParams(rng.standard_normal((4, 3)), np.zeros(4))
        with pytest.raises(DimensionMismatch):
            forward(params, np.zeros(5))


class TestBinarize:
    def test_boundary_inclusive(self):
        code = binarize(np.array([0.5]))
        assert bit_at(code, 0) == 1

    def test_two_values(self):
        code = binarize(np.array([0.4999, 0.9]))
        assert (bit_at(code, 0), bit_at(code, 1)) == (0, 1)

    def test_random_130_bits_vs_per_bit_oracle(self, rng):
        h = rng.uniform(0, 1, 130)
        code = binarize(h)
        assert code.bits_len == 130
        assert code.words.shape == (3,)
        for i in range(130):
            assert bit_at(code, i) == int(h[i] >= 0.5)
        # pad bits beyond 130 are zero
        assert int(code.words[2]) >> (130 - 128) == 0

    def test_pack_unpack_inverse(self, rng):
        bits = rng.integers(0, 2, 97).astype(bool)
        code = HashCode(97, pack_bits(bits))
        assert np.array_equal(unpack_bits(code), bits)


class TestLoss:
    def test_saturated_binary_outputs_zero_penalty(self):
        # biases at +/-60 drive h to exactly 0/1 in float64
        params = HashLayerParams(np.zeros((4, 2)), np.array([60.0, -60.0, 60.0, -60.0]))
        cfg = TrainConfig(bits=4, alpha=0.0, beta=0.0, eta=0.0)
        batch = np.zeros((3, 2))
        assert loss(params, batch, cfg) == pytest.approx(0.0, abs=1e-20)

    def test_hand_arithmetic_single_bit(self):
        # h = 0.5, y = 1 -> 0.5 * 0.25 = 0.125
        params = HashLayerParams(np.zeros((1, 2)), np.zeros(1))
        cfg = TrainConfig(bits=1, alpha=0.0, beta=0.0, eta=0.0)
        assert loss(params, np.zeros((1, 2)), cfg) == pytest.approx(0.125)

    def test_matches_formula_oracle(self, rng):
        w = rng.standard_normal((6, 4))
        b = rng.standard_normal(6)
        x = rng.standard_normal((5, 4))
        params = HashLayerParams(w, b)
        cfg = TrainConfig(bits=6, alpha=1.7, beta=0.3, eta=0.05)
        y = np.stack([(scalar_forward(w, b, row) >= 0.5).astype(float) for row in x])
        assert loss(params, x, cfg) == pytest.approx(
            formula_loss(w, b, x, y, 1.7, 0.3, 0.05), rel=1e-12
        )

    def test_empty_batch_rejected(self):
        params = HashLayerParams(np.zeros((2, 2)), np.zeros(2))
        with pytest.raises(EmptyTrainingSet):
            loss(params, np.empty((0, 2)), TrainConfig(bits=2))


def fd_gradients(params, batch, cfg, codes, eps=1e-6):
    """Central finite differences of the objective with frozen targets."""
    dw = np.zeros_like(params.w)
    db = np.zeros_like(params.b)
    for idx in np.ndindex(params.w.shape):
        params.w[idx] += eps
        up = loss(params, batch, cfg, codes)
        params.w[idx] -= 2 * eps
        down = loss(params, batch, cfg, codes)
        params.w[idx] += eps
        dw[idx] = (up - down) / (2 * eps)
    for i in range(params.b.shape[0]):
        params.b[i] += eps
        up = loss(params, batch, cfg, codes)
        params.b[i] -= 2 * eps
        down = loss(params, batch, cfg, codes)
        params.b[i] += eps
        db[i] = (up - down) / (2 * eps)
    return dw, db


def rel_err(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


class TestGradients:
    def test_zero_data_term_leaves_regularizers(self):
        # saturated positive pre-activations: h == y == 1 exactly in float64
        w = np.full((3, 2), 10.0)
        params = HashLayerParams(w, np.full(3, 30.0))
        cfg = TrainConfig(bits=3, alpha=0.0, beta=0.25, eta=0.5)
        batch = np.ones((4, 2))
        dw, db = gradients(params, batch, cfg)
        assert np.array_equal(dw, 0.25 * params.w)
        assert np.array_equal(db, 0.5 * params.b)

    def test_single_sample_structure(self, rng):
        w = rng.standard_normal((4, 3))
        b = rng.standard_normal(4)
        x = rng.standard_normal(3)
        params = HashLayerParams(w.copy(), b.copy())
        cfg = TrainConfig(bits=4, alpha=0.0, beta=0.0, eta=0.0)
        z = w @ x + b
        h = 1.0 / (1.0 + np.exp(-z))
        y = (h >= 0.5).astype(float)
        g = (h - y) * h * (1 - h)
        dw, db = gradients(params, x[None, :], cfg)
        assert np.allclose(dw, np.outer(g, x), rtol=1e-12)
        assert np.allclose(db, g, rtol=1e-12)

    def test_finite_difference_agreement(self, rng):
        w = rng.standard_normal((4, 3)) * 0.5
        b = rng.standard_normal(4) * 0.1
        x = rng.standard_normal((5, 3))
        params = HashLayerParams(w, b)
        cfg = TrainConfig(bits=4, alpha=2.5, beta=0.01, eta=0.02)
        codes = (np.stack([scalar_forward(w, b, r) for r in x]) >= 0.5).astype(float)
        dw, db = gradients(params, x, cfg, codes)
        fw, fb = fd_gradients(params, x, cfg, codes)
        assert rel_err(dw, fw) < 1e-4
        assert rel_err(db, fb) < 1e-4


class TestTrain:
    def test_zero_learning_rate_keeps_initialization(self, rng):
        data = rng.standard_normal((20, 5))
        cfg = TrainConfig(bits=8, learning_rate=0.0, epochs=3, seed=9)
        result = train(data, cfg)
        init = np.random.default_rng(9).normal(0.0, cfg.init_stddev, size=(8, 5))
        assert np.array_equal(result.params.w, init)
        assert np.array_equal(result.params.b, np.zeros(8))

    def test_fixed_seed_bit_identical(self, rng):
        data = rng.standard_normal((50, 6))
        cfg = TrainConfig(bits=16, epochs=4, seed=3)
        r1, r2 = train(data, cfg), train(data, cfg)
        assert np.array_equal(r1.params.w, r2.params.w)
        assert np.array_equal(r1.params.b, r2.params.b)
        assert r1.epoch_losses == r2.epoch_losses

    def test_loss_trace_length(self, rng):
        data = rng.standard_normal((30, 4))
        result = train(data, TrainConfig(bits=8, epochs=5, seed=0))
        assert len(result.epoch_losses) == 5

    def test_empty_training_set(self):
        with pytest.raises(EmptyTrainingSet):
            train(np.empty((0, 4)), TrainConfig(bits=4))

    def test_divergence_detected(self, rng):
        data = rng.standard_normal((16, 4)) * 1e3
        cfg = TrainConfig(bits=4, learning_rate=1e12, epochs=60, seed=0, alpha=100.0)
        with pytest.raises(DivergenceDetected):
            train(data, cfg)


class TestEncode:
    def test_zero_params_all_ones(self):
        params = HashLayerParams(np.zeros((9, 2)), np.zeros(9))
        code = encode(params, np.zeros(2))
        assert code.popcount() == 9

    def test_equals_binarize_of_forward(self, rng):
        params = HashLayerParams(rng.standard_normal((7, 3)), rng.standard_normal(7))
        x = rng.standard_normal(3)
        assert encode(params, x) == binarize(forward(params, x))

    def test_encode_words_matches_per_row(self, rng):
        params = HashLayerParams(rng.standard_normal((70, 4)), rng.standard_normal(70))
        batch = rng.standard_normal((6, 4))
        words = encode_words(params, batch)
        for i in range(6):
            assert np.array_equal(words[i], encode(params, batch[i]).words)


class TestModelFile:
    def test_round_trip(self, tmp_path, rng):
        w = rng.standard_normal((12, 5)).astype(np.float32).astype(np.float64)
        b = rng.standard_normal(12).astype(np.float32).astype(np.float64)
        params = HashLayerParams(w, b)
        path = tmp_path / "m.drhm"
        save_params(params, path)
        back = load_params(path)
        assert np.array_equal(back.w, params.w)
        assert np.array_equal(back.b, params.b)

    def test_write_read_write_idempotent(self, tmp_path, rng):
        params = HashLayerParams(rng.standard_normal((6, 3)), rng.standard_normal(6))
        p1, p2 = tmp_path / "a.drhm", tmp_path / "b.drhm"
        save_params(params, p1)
        save_params(load_params(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_corrupted_magic(self, tmp_path):
        path = tmp_path / "bad.drhm"
        path.write_bytes(b"XXXX" + b"\x00" * 32)
        with pytest.raises(MalformedHeader):
            load_params(path)
