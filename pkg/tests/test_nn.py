import os

import numpy as np
import pytest

from ransim.nn import (
    LSTM, AdamState, CheckpointError, FeedForward, LayerNorm, Linear,
    MultiHeadAttention, Tensor, adam_step, attention, cross_entropy, dropout,
    ffn, grad_check, load_params, lstm_cell, mse, multi_head,
    positional_encoding, save_params, softmax, xavier_uniform,
)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


class TestAttention:
    def test_single_step_returns_v(self):
        q = Tensor(np.array([[1.0, 2.0]]))
        k = Tensor(np.array([[0.3, -0.5]]))
        v = Tensor(np.array([[7.0, 8.0, 9.0]]))
        out = attention(q, k, v)
        assert np.allclose(out.data, v.data)

    def test_identical_keys_average_v(self):
        q = Tensor(np.random.default_rng(0).normal(size=(3, 2)))
        k = Tensor(np.tile(np.array([[0.4, 0.1]]), (5, 1)))
        v = Tensor(np.random.default_rng(1).normal(size=(5, 2)))
        out = attention(q, k, v)
        assert np.allclose(out.data, v.data.mean(axis=0))

    def test_two_by_one_uniform(self):
        q = Tensor(np.zeros((2, 1)))
        k = Tensor(np.zeros((2, 1)))
        v = Tensor(np.array([[1.0], [3.0]]))
        out = attention(q, k, v)
        assert np.allclose(out.data, [[2.0], [2.0]])

    def test_softmax_rows_sum_to_one(self):
        x = Tensor(np.random.default_rng(2).normal(size=(4, 6)) * 10)
        s = softmax(x)
        assert np.allclose(s.data.sum(axis=-1), 1.0, atol=1e-12)

    def test_output_is_convex_combination(self):
        rng = np.random.default_rng(3)
        q, k = Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(5, 4)))
        v = Tensor(rng.normal(size=(5, 2)))
        out = attention(q, k, v)
        lo, hi = v.data.min(axis=0), v.data.max(axis=0)
        assert (out.data >= lo - 1e-12).all() and (out.data <= hi + 1e-12).all()

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            attention(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))),
                      Tensor(np.zeros((2, 4))))


class TestMultiHead:
    def test_one_head_identity_wo_equals_attention(self):
        rng = np.random.default_rng(4)
        x = Tensor(rng.normal(size=(1, 3, 4)))
        eye = Tensor(np.eye(4))
        out = multi_head(x, eye, eye, eye, eye, heads=1)
        ref = attention(x, x, x)
        assert np.allclose(out.data, ref.data)

    def test_zero_projections_give_zero(self):
        x = Tensor(np.random.default_rng(5).normal(size=(2, 3, 4)))
        z = Tensor(np.zeros((4, 4)))
        wo = Tensor(np.random.default_rng(6).normal(size=(4, 4)))
        out = multi_head(x, z, z, z, wo, heads=2)
        assert np.allclose(out.data, 0.0)

    def test_two_heads_match_hand_unroll(self):
        rng = np.random.default_rng(7)
        d, h = 4, 2
        x = rng.normal(size=(1, 2, d))
        wq, wk, wv, wo = (rng.normal(size=(d, d)) for _ in range(4))
        out = multi_head(Tensor(x), Tensor(wq), Tensor(wk), Tensor(wv),
                         Tensor(wo), heads=h)

        # straight-line reference: slice projected matrices per head
        q, k, v = x[0] @ wq, x[0] @ wk, x[0] @ wv
        heads = []
        for i in range(h):
            sl = slice(i * d // h, (i + 1) * d // h)
            s = q[:, sl] @ k[:, sl].T / np.sqrt(d // h)
            e = np.exp(s - s.max(axis=1, keepdims=True))
            a = e / e.sum(axis=1, keepdims=True)
            heads.append(a @ v[:, sl])
        ref = np.concatenate(heads, axis=1) @ wo
        assert np.allclose(out.data[0], ref)

    def test_indivisible_heads_rejected(self):
        rng = np.random.default_rng(8)
        with pytest.raises(ValueError):
            MultiHeadAttention(6, 4, rng)


class TestFfn:
    def test_zero_input_zero_bias(self):
        z = Tensor(np.zeros((2, 3)))
        w1, b1 = Tensor(np.ones((3, 4))), Tensor(np.zeros(4))
        w2, b2 = Tensor(np.ones((4, 3))), Tensor(np.zeros(3))
        assert np.allclose(ffn(z, w1, b1, w2, b2).data, 0.0)

    def test_relu_kill_leaves_b2(self):
        z = Tensor(np.ones((2, 3)))
        w1 = Tensor(-np.ones((3, 4)))
        b1 = Tensor(np.zeros(4))
        w2 = Tensor(np.ones((4, 3)))
        b2 = Tensor(np.array([0.5, -1.0, 2.0]))
        out = ffn(z, w1, b1, w2, b2)
        assert np.allclose(out.data, b2.data)

    def test_random_case_matches_straight_line(self):
        rng = np.random.default_rng(9)
        z = rng.normal(size=(2, 4))
        w1, b1 = rng.normal(size=(4, 6)), rng.normal(size=6)
        w2, b2 = rng.normal(size=(6, 2)), rng.normal(size=2)
        out = ffn(Tensor(z), Tensor(w1), Tensor(b1), Tensor(w2), Tensor(b2))
        ref = np.maximum(z @ w1 + b1, 0.0) @ w2 + b2
        assert np.allclose(out.data, ref)


class TestLstmCell:
    def zeros(self, d_in=3, hidden=2):
        x = Tensor(np.zeros((1, d_in)))
        h = Tensor(np.zeros((1, hidden)))
        c = Tensor(np.zeros((1, hidden)))
        wx = Tensor(np.zeros((d_in, 4 * hidden)))
        wh = Tensor(np.zeros((hidden, 4 * hidden)))
        b = Tensor(np.zeros(4 * hidden))
        return x, h, c, wx, wh, b

    def test_all_zero_weights(self):
        x, h, c, wx, wh, b = self.zeros()
        h2, c2 = lstm_cell(x, h, c, wx, wh, b)
        assert np.allclose(c2.data, 0.0)
        assert np.allclose(h2.data, 0.0)

    def test_saturated_forget_gate_holds_memory(self):
        x, h, c, wx, wh, b = self.zeros()
        c = Tensor(np.array([[0.7, -0.2]]))
        bias = np.zeros(8)
        bias[0:2] = -50.0   # input gate shut
        bias[2:4] = 50.0    # forget gate open
        h2, c2 = lstm_cell(x, h, c, wx, wh, Tensor(bias))
        assert np.allclose(c2.data, c.data, atol=1e-12)

    def test_random_case_matches_straight_line(self):
        rng = np.random.default_rng(10)
        d_in, hidden = 3, 2
        x, h, c = (rng.normal(size=(1, n)) for n in (d_in, hidden, hidden))
        wx = rng.normal(size=(d_in, 4 * hidden))
        wh = rng.normal(size=(hidden, 4 * hidden))
        b = rng.normal(size=4 * hidden)
        h2, c2 = lstm_cell(Tensor(x), Tensor(h), Tensor(c), Tensor(wx),
                           Tensor(wh), Tensor(b))
        z = x @ wx + h @ wh + b
        i, f = sigmoid(z[:, 0:2]), sigmoid(z[:, 2:4])
        g, o = np.tanh(z[:, 4:6]), sigmoid(z[:, 6:8])
        c_ref = f * c + i * g
        h_ref = o * np.tanh(c_ref)
        assert np.allclose(c2.data, c_ref)
        assert np.allclose(h2.data, h_ref)


class TestAdam:
    def test_zero_grad_no_change(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        state = AdamState({"p": p}, lr=0.1)
        p.grad = np.zeros(2)
        adam_step(state)
        assert np.allclose(p.data, [1.0, -2.0])

    def test_first_step_is_lr_times_sign(self):
        p = Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True)
        state = AdamState({"p": p}, lr=0.01)
        g = np.array([3.0, -0.2, 1e-3])
        p.grad = g.copy()
        before = p.data.copy()
        adam_step(state)
        delta = p.data - before
        # bias-corrected first step: m_hat = g, v_hat = g^2
        assert np.allclose(delta, -0.01 * np.sign(g), atol=0.01 * 1e-4)

    def test_step_magnitude_nonincreasing_for_constant_grad(self):
        p = Tensor(np.array([0.0]), requires_grad=True)
        state = AdamState({"p": p}, lr=0.01)
        p.grad = np.array([2.0])
        x0 = p.data.copy()
        adam_step(state)
        d1 = abs(p.data - x0)
        x1 = p.data.copy()
        p.grad = np.array([2.0])
        adam_step(state)
        d2 = abs(p.data - x1)
        assert d2 <= d1 * (1 + 1e-3)


class TestLosses:
    def test_mse_identity_zero(self):
        x = Tensor(np.random.default_rng(11).normal(size=(3, 2)))
        assert mse(x, x.data).item() == 0.0

    def test_uniform_cross_entropy_is_log_classes(self):
        logits = Tensor(np.zeros((5, 4)))
        loss = cross_entropy(logits, np.zeros(5, dtype=int))
        assert loss.item() == pytest.approx(np.log(4.0))

    def test_huge_logit_stable(self):
        loss = cross_entropy(Tensor(np.array([[1e6, 0.0]])), np.array([0]))
        assert np.isfinite(loss.item())
        assert loss.item() < 1e-6

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            cross_entropy(Tensor(np.zeros((1, 2))), np.array([2]))


class TestGradCheck:
    def test_quadratic_is_exact(self):
        x = Tensor(np.array([1.0, -2.0, 0.3]), requires_grad=True)
        err = grad_check(lambda: (x * x).sum(), {"x": x})
        assert err < 1e-8

    def test_linear_layer(self):
        rng = np.random.default_rng(12)
        lin = Linear(3, 2, rng)
        x = np.array([[0.2, -0.4, 1.1], [0.9, 0.1, -0.6]])
        err = grad_check(lambda: (lin(Tensor(x)) ** 2).sum(),
                         lin.params("lin"))
        assert err < 1e-4

    def test_layer_norm(self):
        rng = np.random.default_rng(13)
        ln = LayerNorm(4)
        x = Tensor(rng.normal(size=(2, 4)), requires_grad=True)
        # weighted sum keeps the x-gradient well away from zero
        w = Tensor(rng.normal(size=(2, 4)))
        params = {**ln.params("ln"), "x": x}
        err = grad_check(lambda: (ln(x) * w).sum(), params)
        assert err < 1e-4

    def test_multi_head_attention(self):
        rng = np.random.default_rng(14)
        mha = MultiHeadAttention(4, 2, rng)
        x = Tensor(rng.normal(size=(1, 3, 4)), requires_grad=True)
        params = {**mha.params("mha"), "x": x}
        err = grad_check(lambda: (mha(x) ** 2).sum(), params)
        assert err < 1e-4

    def test_feed_forward_gelu(self):
        rng = np.random.default_rng(15)
        ff = FeedForward(3, 5, rng)
        x = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        params = {**ff.params("ff"), "x": x}
        err = grad_check(lambda: (ff(x) ** 2).sum(), params)
        assert err < 1e-4

    def test_lstm(self):
        rng = np.random.default_rng(16)
        net = LSTM(2, 3, num_layers=2, rng=rng)
        x = Tensor(rng.normal(size=(2, 3, 2)), requires_grad=True)
        params = {**net.params("lstm"), "x": x}
        err = grad_check(lambda: (net(x) ** 2).sum(), params)
        assert err < 1e-4

    def test_cross_entropy_grad(self):
        rng = np.random.default_rng(17)
        logits = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        labels = np.array([0, 2, 1, 2])
        err = grad_check(lambda: cross_entropy(logits, labels),
                         {"logits": logits})
        assert err < 1e-4

    def test_softmax_grad(self):
        rng = np.random.default_rng(18)
        x = Tensor(rng.normal(size=(2, 4)), requires_grad=True)
        w = Tensor(rng.normal(size=(2, 4)))
        err = grad_check(lambda: (softmax(x) * w).sum(), {"x": x})
        assert err < 1e-4


class TestDropout:
    def test_identity_at_inference(self):
        x = Tensor(np.random.default_rng(19).normal(size=(3, 3)))
        out = dropout(x, 0.5, np.random.default_rng(0), train=False)
        assert out is x

    def test_identity_at_p_zero(self):
        x = Tensor(np.ones((2, 2)))
        out = dropout(x, 0.0, np.random.default_rng(0), train=True)
        assert out is x

    def test_scaling_preserves_mean(self):
        rng = np.random.default_rng(20)
        x = Tensor(np.ones((200, 200)))
        out = dropout(x, 0.3, rng, train=True)
        assert out.data.mean() == pytest.approx(1.0, rel=0.02)


class TestPositionalEncoding:
    def test_shape_and_range(self):
        pe = positional_encoding(10, 64)
        assert pe.shape == (10, 64)
        assert (np.abs(pe) <= 1.0).all()

    def test_position_zero(self):
        pe = positional_encoding(4, 8)
        assert np.allclose(pe[0, 0::2], 0.0)
        assert np.allclose(pe[0, 1::2], 1.0)

    def test_first_pair_is_unit_frequency(self):
        pe = positional_encoding(5, 8)
        assert np.allclose(pe[:, 0], np.sin(np.arange(5)))
        assert np.allclose(pe[:, 1], np.cos(np.arange(5)))


class TestCheckpoint:
    def roundtrip(self, tmp_path, params):
        path = os.path.join(tmp_path, "model.ckpt")
        save_params(path, params)
        return path, load_params(path)

    def test_roundtrip_exact(self, tmp_path):
        rng = np.random.default_rng(21)
        params = {"a.w": rng.normal(size=(3, 4)), "b": rng.normal(size=5)}
        _, loaded = self.roundtrip(tmp_path, params)
        assert set(loaded) == {"a.w", "b"}
        for k in params:
            assert (loaded[k] == params[k]).all()

    def test_tensor_values_accepted(self, tmp_path):
        t = Tensor(np.arange(6, dtype=float).reshape(2, 3),
                   requires_grad=True)
        _, loaded = self.roundtrip(tmp_path, {"t": t})
        assert (loaded["t"] == t.data).all()

    def test_corruption_detected(self, tmp_path):
        path, _ = self.roundtrip(
            tmp_path, {"w": np.ones((2, 2))})
        blob = bytearray(open(path, "rb").read())
        blob[20] ^= 0xFF
        open(path, "wb").write(bytes(blob))
        with pytest.raises(CheckpointError):
            load_params(path)

    def test_wrong_magic_rejected(self, tmp_path):
        path = os.path.join(tmp_path, "bad.ckpt")
        open(path, "wb").write(b"NOPE" + b"\x00" * 32)
        with pytest.raises(CheckpointError):
            load_params(path)

    def test_unknown_version_rejected(self, tmp_path):
        path, _ = self.roundtrip(tmp_path, {"w": np.ones(2)})
        blob = bytearray(open(path, "rb").read())
        import struct
        import zlib
        body = blob[4:-4]
        body[0:2] = struct.pack("<H", 99)
        crc = zlib.crc32(bytes(body))
        open(path, "wb").write(b"MSMU" + bytes(body) + struct.pack("<I", crc))
        with pytest.raises(CheckpointError):
            load_params(path)


def test_xavier_bounds():
    rng = np.random.default_rng(22)
    w = xavier_uniform(rng, 30, 50)
    lim = np.sqrt(6.0 / 80)
    assert w.shape == (30, 50)
    assert (np.abs(w) <= lim).all()
