import numpy as np
import pytest

from phrcbench.nn import autodiff as ad
from phrcbench.nn.checkpoint import load_checkpoint, save_checkpoint
from phrcbench.nn.layers import (
    AttnMask,
    AttnParams,
    attention,
    block_forward,
    multi_head,
    positional_encoding,
)
from phrcbench.nn.optim import AdamState, adam_step
from phrcbench.nn.params import ConfigError, NetConfig, ParamStore, ParamTensor
from _util import fd_check

rng = np.random.default_rng(3)


class TestPositionalEncoding:
    def test_row_zero_alternates(self):
        pe = positional_encoding(3, 10)
        np.testing.assert_array_equal(pe[0], np.tile([0.0, 1.0], 5))

    def test_scalar_values(self):
        pe = positional_encoding(2, 6)
        assert pe[1, 0] == pytest.approx(np.sin(1.0))
        assert pe[1, 1] == pytest.approx(np.cos(1.0))
        assert pe[1, 2] == pytest.approx(np.sin(1.0 / 10000.0 ** (2.0 / 6.0)))

    def test_range(self):
        pe = positional_encoding(50, 16)
        assert np.all(np.abs(pe) <= 1.0)

    def test_odd_width_rejected(self):
        with pytest.raises(ConfigError):
            positional_encoding(4, 7)


class TestAttention:
    def test_single_key_returns_value(self):
        v = np.array([[1.0, 2.0, 3.0]])
        out = attention(rng.standard_normal((1, 4)), rng.standard_normal((1, 4)), v)
        np.testing.assert_allclose(out.data, v)

    def test_sharp_match_approaches_values(self):
        # orthonormal queries/keys at scale 50: explicit softmax oracle
        scale = 50.0
        q = np.eye(3) * scale
        k = np.eye(3) * scale
        v = rng.standard_normal((3, 5))
        scores = (q @ k.T) / np.sqrt(3.0)
        w = np.exp(scores - scores.max(axis=1, keepdims=True))
        w /= w.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(attention(q, k, v).data, w @ v, atol=1e-12)
        np.testing.assert_allclose(attention(q, k, v).data, v, atol=1e-6)

    def test_causal_first_row_sees_only_first_value(self):
        x = rng.standard_normal((3, 4))
        v = rng.standard_normal((3, 4))
        out = attention(x, x, v, AttnMask.causal(3))
        np.testing.assert_allclose(out.data[0], v[0], atol=1e-14)

    def test_causal_invariance_bit_exact(self):
        mask = AttnMask.causal(4)
        q = rng.standard_normal((4, 4))
        v = rng.standard_normal((4, 4))
        base = attention(q, q, v, mask).data.copy()
        q2, v2 = q.copy(), v.copy()
        q2[3] += 5.0
        v2[3] -= 2.0
        bumped = attention(ad.Tensor(q2), ad.Tensor(q2), ad.Tensor(v2), mask).data
        assert np.array_equal(base[:3], bumped[:3])

    def test_gradients(self):
        q = rng.standard_normal((3, 4))
        k = rng.standard_normal((5, 4))
        v = rng.standard_normal((5, 2))
        fd_check(lambda *t: ad.mean_all(attention(*t)), [q, k, v], probes=15)


def _identity_attn_params(d):
    eye = lambda: ad.Tensor(np.eye(d))
    return AttnParams(heads=[(eye(), eye(), eye())], wo=ad.Tensor(np.eye(d)), bo=ad.Tensor(np.zeros(d)))


def _random_attn_params(d, n_heads, rng, zero_v=False):
    d_k = d // n_heads
    heads = []
    for _ in range(n_heads):
        wv = np.zeros((d, d_k)) if zero_v else rng.standard_normal((d, d_k))
        heads.append((ad.Tensor(rng.standard_normal((d, d_k))),
                      ad.Tensor(rng.standard_normal((d, d_k))),
                      ad.Tensor(wv)))
    return AttnParams(heads=heads, wo=ad.Tensor(rng.standard_normal((d, d))), bo=ad.Tensor(np.zeros(d)))


class TestMultiHead:
    def test_single_identity_head_equals_attention(self):
        x = rng.standard_normal((5, 4))
        out = multi_head(x, _identity_attn_params(4))
        ref = attention(x, x, x)
        np.testing.assert_allclose(out.data, ref.data, atol=1e-12)

    def test_permutation_equivariance(self):
        x = rng.standard_normal((6, 8))
        params = _random_attn_params(8, 2, rng)
        perm = np.random.default_rng(1).permutation(6)
        out = multi_head(x, params).data
        out_perm = multi_head(x[perm], params).data
        np.testing.assert_allclose(out_perm, out[perm], atol=1e-10)

    def test_zero_value_projection_gives_zero(self):
        x = rng.standard_normal((5, 8))
        params = _random_attn_params(8, 2, rng, zero_v=True)
        np.testing.assert_array_equal(multi_head(x, params).data, np.zeros((5, 8)))


def _store_block(d_model=8, n_heads=2, d_ff=16, seed=0, zero_out=False):
    from phrcbench.nn.params import init_block

    store = ParamStore()
    cfg = NetConfig(d_model=d_model, n_heads=n_heads, n_layers=1, d_ff=d_ff, d_z=4, n_mix=1, dropout=0.0)
    init_block(store, np.random.default_rng(seed), "blk", cfg)
    if zero_out:
        store["blk.attn.out.w"].values[:] = 0.0
        store["blk.ff2.w"].values[:] = 0.0
    return store, cfg


class TestBlockForward:
    def test_zeroed_projections_identity(self):
        store, cfg = _store_block(zero_out=True)
        from phrcbench.nn.layers import block_params

        x = rng.standard_normal((3, 5, 8))
        out = block_forward(ad.Tensor(x), block_params(store, "blk", cfg.n_heads))
        np.testing.assert_array_equal(out.data, x)

    def test_large_inputs_stay_finite(self):
        store, cfg = _store_block()
        from phrcbench.nn.layers import block_params

        x = rng.standard_normal((2, 4, 8)) * 1e3
        out = block_forward(ad.Tensor(x), block_params(store, "blk", cfg.n_heads))
        assert np.all(np.isfinite(out.data))

    def test_block_gradient_check(self):
        store, cfg = _store_block()
        from phrcbench.nn.layers import block_params

        x = rng.standard_normal((1, 4, 8))

        def loss_fn():
            store.zero_grads()
            bp = block_params(store, "blk", cfg.n_heads)
            out = block_forward(ad.Tensor(x), bp, AttnMask.causal(4))
            loss = ad.mean_all(ad.tanh(out))
            ad.backward(loss)
            store.collect_grads()
            return loss.item()

        loss_fn()
        grads = {p.name: p.grad.copy() for p in store}
        check_rng = np.random.default_rng(0)
        worst = 0.0
        for p in store:
            for _ in range(3):
                idx = int(check_rng.integers(p.values.size))
                orig = p.values[idx]
                p.values[idx] = orig + 1e-5
                f_plus = loss_fn()
                p.values[idx] = orig - 1e-5
                f_minus = loss_fn()
                p.values[idx] = orig
                num = (f_plus - f_minus) / 2e-5
                ana = grads[p.name][idx]
                rel = abs(num - ana) / max(1e-8, abs(num), abs(ana))
                worst = max(worst, rel)
        assert worst < 1e-4

    def test_causal_stack_invariance(self):
        store, cfg = _store_block()
        from phrcbench.nn.layers import block_params

        mask = AttnMask.causal(5)
        x = rng.standard_normal((1, 5, 8))
        out1 = block_forward(ad.Tensor(x), block_params(store, "blk", cfg.n_heads), mask).data
        x2 = x.copy()
        x2[0, 3:] += 7.0
        out2 = block_forward(ad.Tensor(x2), block_params(store, "blk", cfg.n_heads), mask).data
        assert np.array_equal(out1[0, :3], out2[0, :3])


class TestAdam:
    def _params(self):
        p = ParamTensor("w", (3,), np.array([1.0, -2.0, 3.0]))
        return [p], AdamState()

    def test_zero_gradient_no_change(self):
        params, state = self._params()
        before = params[0].values.copy()
        assert adam_step(params, state, lr=0.1)
        np.testing.assert_array_equal(params[0].values, before)

    def test_first_step_magnitude_is_lr(self):
        params, state = self._params()
        params[0].grad[:] = 5.0
        before = params[0].values.copy()
        assert adam_step(params, state, lr=0.01)
        np.testing.assert_allclose(np.abs(params[0].values - before), 0.01, rtol=1e-6)

    def test_nan_gradient_skips(self):
        params, state = self._params()
        params[0].grad[:] = [1.0, np.nan, 1.0]
        before = params[0].values.copy()
        assert not adam_step(params, state, lr=0.1)
        np.testing.assert_array_equal(params[0].values, before)
        assert state.t == 0


class TestCheckpoint:
    def test_bit_exact_roundtrip(self, tmp_path):
        store = ParamStore()
        r = np.random.default_rng(0)
        store.add("a.w", r.standard_normal((3, 4)))
        store.add("b.conv", r.standard_normal((3, 2, 5)))
        store.add("c.bias", r.standard_normal(7) * 1e-17)
        headers = {"NETCFG": NetConfig().to_dict(), "NORM": {"x": [1.0, 2.0]}}
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, headers, store)
        h2, s2 = load_checkpoint(path)
        assert h2["NETCFG"] == headers["NETCFG"]
        assert h2["NORM"] == headers["NORM"]
        for p in store:
            np.testing.assert_array_equal(s2[p.name].array(), p.array())
        # second save is byte-identical
        path2 = tmp_path / "m2.ckpt"
        save_checkpoint(path2, h2, s2)
        assert path.read_bytes() == path2.read_bytes()
