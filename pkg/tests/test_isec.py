"""Positional encoding, masked attention, the MHA block, and the segment encoder."""

import numpy as np
import pytest

from complaintnet.data_model import EmbeddingSequence
from complaintnet.isec import (
    AttentionConfig,
    IsecEncoder,
    LayerNorm,
    MultiHeadBlock,
    attention_weights,
    isec_forward,
    positional_encoding,
    self_attention,
)

TINY = AttentionConfig(dim=8, num_heads=2, dropout_rate=0.0)


def fd_grad(f, arr, h=1e-6):
    """Central finite differences of scalar f w.r.t. every entry of arr (in place)."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        plus = f()
        flat[i] = orig - h
        minus = f()
        flat[i] = orig
        gflat[i] = (plus - minus) / (2 * h)
    return grad


class TestPositionalEncoding:
    def test_position_zero(self):
        pe = positional_encoding(3, 8)
        np.testing.assert_allclose(pe[0, 0::2], 0.0)
        np.testing.assert_allclose(pe[0, 1::2], 1.0)

    def test_first_position_first_column(self):
        pe = positional_encoding(2, 4)
        assert pe[1, 0] == pytest.approx(0.8414710, abs=1e-7)  # sin(1)

    def test_range_bound(self):
        pe = positional_encoding(100, 512)
        assert np.all(pe >= -1.0) and np.all(pe <= 1.0)

    def test_odd_dim_rejected(self):
        with pytest.raises(ValueError, match="even"):
            positional_encoding(4, 7)

    def test_deterministic(self):
        np.testing.assert_array_equal(positional_encoding(5, 16), positional_encoding(5, 16))


class TestSelfAttention:
    def test_single_token_identity(self):
        q = np.array([[1.0, 2.0]])
        v = np.array([[3.0, -1.0]])
        np.testing.assert_allclose(self_attention(q, q, v), v)

    def test_identical_tokens_average(self):
        q = np.ones((2, 2))
        v = np.array([[1.0, 0.0], [0.0, 1.0]])
        out = self_attention(q, q, v)
        np.testing.assert_allclose(out, [[0.5, 0.5], [0.5, 0.5]])

    def test_hand_computed_weights(self):
        # scores = I / sqrt(2); row softmax = [e^(1/sqrt 2), 1] normalized.
        q = np.eye(2)
        v = np.eye(2)
        out = self_attention(q, q, v)
        w = np.exp(1 / np.sqrt(2)) / (np.exp(1 / np.sqrt(2)) + 1.0)
        assert w == pytest.approx(0.6698, abs=1e-4)
        np.testing.assert_allclose(out[0], [w, 1 - w], atol=1e-12)

    def test_masked_key_gets_zero_weight(self):
        rng = np.random.default_rng(0)
        q = rng.normal(size=(3, 4))
        weights = attention_weights(q, q, np.array([True, True, False]))
        np.testing.assert_allclose(weights[:, 2], 0.0)
        np.testing.assert_allclose(weights.sum(axis=1), 1.0, atol=1e-12)

    def test_all_masked_rejected(self):
        q = np.ones((2, 2))
        with pytest.raises(ValueError, match="at least one valid"):
            self_attention(q, q, q, np.array([False, False]))

    def test_rows_form_simplex(self):
        rng = np.random.default_rng(1)
        q = rng.normal(size=(6, 4)) * 5
        k = rng.normal(size=(6, 4)) * 5
        mask = np.array([True, True, False, True, False, True])
        w = attention_weights(q, k, mask)
        assert np.all(w >= 0)
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-6)


class TestLayerNorm:
    def test_forward_normalizes(self):
        ln = LayerNorm(4)
        x = np.array([[1.0, 2.0, 3.0, 4.0]])
        y = ln.forward(x)
        assert y.mean() == pytest.approx(0.0, abs=1e-12)

    def test_backward_matches_fd(self):
        rng = np.random.default_rng(2)
        ln = LayerNorm(6)
        ln.gain[:] = rng.normal(size=6)
        ln.bias[:] = rng.normal(size=6)
        x = rng.normal(size=(3, 6))
        r = rng.normal(size=(3, 6))

        def loss():
            return float((ln.forward(x) * r).sum())

        loss()  # populate cache
        dx = ln.backward(r)
        np.testing.assert_allclose(dx, fd_grad(loss, x), atol=1e-8)
        ln.zero_grads()
        loss()
        ln.backward(r)
        np.testing.assert_allclose(ln.d_gain, fd_grad(loss, ln.gain), atol=1e-8)
        np.testing.assert_allclose(ln.d_bias, fd_grad(loss, ln.bias), atol=1e-8)


class TestMultiHeadBlock:
    def test_output_shape(self):
        rng = np.random.default_rng(3)
        block = MultiHeadBlock(TINY, rng)
        x = rng.normal(size=(5, 8))
        y = block.forward(x, np.ones(5, dtype=bool))
        assert y.shape == (5, 8)

    def test_zero_weights_reduce_to_layernorm(self):
        rng = np.random.default_rng(4)
        block = MultiHeadBlock(TINY, rng)
        block.w_q[...] = 0.0
        block.w_k[...] = 0.0
        block.w_v[...] = 0.0
        block.w_o[...] = 0.0
        x = rng.normal(size=(4, 8))
        y = block.forward(x, np.ones(4, dtype=bool))
        ref = LayerNorm(8).forward(x)
        np.testing.assert_allclose(y, ref, atol=1e-12)

    def test_masked_positions_inert(self):
        rng = np.random.default_rng(5)
        block = MultiHeadBlock(TINY, rng)
        x = rng.normal(size=(4, 8))
        mask = np.array([True, True, True, False])
        y1 = block.forward(x, mask)
        x2 = x.copy()
        x2[3] += rng.normal(size=8) * 10
        y2 = block.forward(x2, mask)
        assert np.max(np.abs(y1[:3] - y2[:3])) <= 1e-6

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(6)
        block = MultiHeadBlock(TINY, rng)
        x = rng.normal(size=(5, 8))
        mask = np.array([True, True, False, True, True])
        perm = np.array([3, 0, 4, 1, 2])
        y = block.forward(x, mask)
        y_perm = block.forward(x[perm], mask[perm])
        np.testing.assert_allclose(y_perm, y[perm], atol=1e-10)

    def test_backward_matches_fd(self):
        rng = np.random.default_rng(7)
        block = MultiHeadBlock(TINY, rng)
        x = rng.normal(size=(3, 8))
        mask = np.array([True, True, False])
        r = rng.normal(size=(3, 8))

        def loss():
            return float((block.forward(x, mask) * r).sum())

        loss()
        dx = block.backward(r)
        np.testing.assert_allclose(dx, fd_grad(loss, x), atol=1e-7)
        for name, p in block.params("b").items():
            block.zero_grads()
            loss()
            block.backward(r)
            analytic = block.grads("b")[name]
            np.testing.assert_allclose(analytic, fd_grad(loss, p), atol=1e-7, err_msg=name)

    def test_dropout_reproducible_and_off_at_eval(self):
        rng = np.random.default_rng(8)
        cfg = AttentionConfig(dim=8, num_heads=2, dropout_rate=0.5)
        block = MultiHeadBlock(cfg, rng)
        x = rng.normal(size=(4, 8))
        mask = np.ones(4, dtype=bool)
        a = block.forward(x, mask, training=True, rng=np.random.default_rng(42))
        b = block.forward(x, mask, training=True, rng=np.random.default_rng(42))
        c = block.forward(x, mask, training=True, rng=np.random.default_rng(43))
        np.testing.assert_array_equal(a, b)
        assert np.max(np.abs(a - c)) > 0
        e1 = block.forward(x, mask, training=False)
        e2 = block.forward(x, mask, training=False)
        np.testing.assert_array_equal(e1, e2)


class TestIsecEncoder:
    def test_output_gains_cls_row(self):
        rng = np.random.default_rng(9)
        enc = IsecEncoder(TINY, rng)
        seq = EmbeddingSequence.full(rng.normal(size=(5, 8)))
        y, mask = isec_forward(seq, enc)
        assert y.shape == (6, 8)
        assert mask.shape == (6,)
        assert mask[0]

    def test_deterministic_without_dropout(self):
        rng = np.random.default_rng(10)
        enc = IsecEncoder(TINY, rng)
        x = rng.normal(size=(3, 8))
        mask = np.ones(3, dtype=bool)
        y1, _ = enc.forward(x, mask)
        y2, _ = enc.forward(x, mask)
        np.testing.assert_array_equal(y1, y2)

    def test_masked_image_rows_inert_through_encoder(self):
        rng = np.random.default_rng(11)
        enc = IsecEncoder(TINY, rng)
        x = rng.normal(size=(4, 8))
        mask = np.array([True, True, False, False])
        y1, _ = enc.forward(x, mask)
        x2 = x.copy()
        x2[2:] = rng.normal(size=(2, 8)) * 50
        y2, _ = enc.forward(x2, mask)
        # valid outputs: CLS + first two tokens
        assert np.max(np.abs(y1[:3] - y2[:3])) <= 1e-6

    def test_gradients_match_fd(self):
        rng = np.random.default_rng(12)
        enc = IsecEncoder(TINY, rng)
        x = rng.normal(size=(3, 8))
        mask = np.ones(3, dtype=bool)
        r = rng.normal(size=(4, 8))

        def loss():
            y, _ = enc.forward(x, mask)
            return float((y * r).sum())

        for name, p in enc.params().items():
            enc.zero_grads()
            loss()
            enc.backward(r)
            analytic = enc.grads()[name].copy()
            fd = fd_grad(loss, p)
            denom = np.maximum(np.maximum(np.abs(fd), np.abs(analytic)), 1e-6)
            rel = np.max(np.abs(fd - analytic) / denom)
            assert rel < 1e-4, f"{name}: rel err {rel}"

    def test_input_gradient_flows_to_image_rows(self):
        rng = np.random.default_rng(13)
        enc = IsecEncoder(TINY, rng)
        x = rng.normal(size=(3, 8))
        mask = np.ones(3, dtype=bool)
        r = rng.normal(size=(4, 8))

        def loss():
            y, _ = enc.forward(x, mask)
            return float((y * r).sum())

        loss()
        d_image = enc.backward(r)
        np.testing.assert_allclose(d_image, fd_grad(loss, x), atol=1e-7)
