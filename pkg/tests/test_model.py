import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcformer import numerics as nx
from mcformer.data import synth_generate
from mcformer.errors import ConfigError, McformerWarning, NumericError, ShapeError
from mcformer.model import (
    LinearBaseline,
    LinearConfig,
    MCformer,
    ModelConfig,
    build_model,
    encoder_forward,
    mix_channels,
    mixed_channel_indices,
    mixing_table,
    patch_time_index,
    patchify_project,
    revin_denormalize,
    revin_normalize,
    token_count,
)
from oracles import TINY, walk_mixed_channels


def tiny(**kw):
    return ModelConfig(**{**TINY, **kw})


# --- config ---------------------------------------------------------------


def test_default_config_valid():
    cfg = ModelConfig().validate()
    assert cfg.n_tokens == 12


@pytest.mark.parametrize(
    "kw,key",
    [
        ({"M": 4, "m": 4}, "m"),
        ({"P": 10, "n_heads": 4}, "P"),
        ({"p": 200}, "p"),
        ({"S": 0}, "S"),
        ({"dropout": 1.0}, "dropout"),
        ({"activation": "tanh"}, "activation"),
    ],
)
def test_config_rejections(kw, key):
    with pytest.raises(ConfigError) as ei:
        ModelConfig(**kw).validate()
    assert key in str(ei.value)


def test_config_m_error_message():
    with pytest.raises(ConfigError, match=r"m must be < M \(got m=5, M=4\)"):
        ModelConfig(M=4, m=5).validate()


def test_config_dict_round_trip():
    cfg = tiny(m=1)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({**cfg.to_dict(), "bogus": 1})


# --- RevIN ----------------------------------------------------------------


def test_revin_constant_channel():
    out, _ = revin_normalize(np.full(10, 5.0))
    assert np.array_equal(out.data, np.zeros(10))


def test_revin_ramp():
    out, _ = revin_normalize(np.arange(1.0, 5.0), eps=0.0)
    assert np.allclose(out.data, [-1.3416407864998738, -0.4472135954999579, 0.4472135954999579, 1.3416407864998738])


def test_revin_round_trip_with_affine():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((7, 20, 3)) * 4 + 2
    x[:, :, 1] = 3.0
    g, b = rng.uniform(0.5, 2.0, 3), rng.standard_normal(3)
    y, stats = revin_normalize(x, g, b)
    assert np.max(np.abs(revin_denormalize(y, stats).data - x)) < 1e-8


@settings(max_examples=50, deadline=None)
@given(st.floats(-1e3, 1e3), st.floats(1e-3, 1e3), st.integers(0, 2**31))
def test_revin_affine_invariance(shift, scale, seed):
    x = np.random.default_rng(seed).standard_normal(16)
    a, _ = revin_normalize(x, eps=0.0)
    b, _ = revin_normalize(x * scale + shift, eps=0.0)
    assert np.allclose(a.data, b.data, atol=1e-6)


# --- mixing ---------------------------------------------------------------


def test_mixed_indices_examples():
    with pytest.warns(McformerWarning):
        assert mixed_channel_indices(8, 4, 0) == [0, 2, 4, 6, 1]
    assert mixed_channel_indices(21, 4, 3) == [3, 8, 13, 18, 2]
    assert mixed_channel_indices(5, 0, 3) == [3]


def test_mixed_indices_no_warning_without_duplicate():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        mixed_channel_indices(21, 4, 3)


def test_mixed_indices_m_too_large():
    with pytest.raises(ConfigError):
        mixed_channel_indices(4, 4, 0)


@pytest.mark.parametrize("M", range(2, 17))
def test_mixed_indices_match_walker(M):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", McformerWarning)
        for m in range(1, M):
            for i in range(M):
                got = mixed_channel_indices(M, m, i)
                assert got == walk_mixed_channels(M, m, i)
                assert got[0] == i and len(set(got)) == m + 1


def test_mixing_table_shape():
    t = mixing_table(6, 2)
    assert t.shape == (6, 3) and np.array_equal(t[:, 0], np.arange(6))


def test_mix_channels_leader_follower_lag():
    x = synth_generate("leader_follower", 2, 300, seed=1, params={"sigma": 0.0, "lag": 3}).values[100:196]
    xn, _ = revin_normalize(x[None])
    with pytest.warns(McformerWarning):
        U = mix_channels(xn, 0, 1).data[0]
    # column 1 is column 0 delayed by 3 steps up to the per-channel affine
    a, b = U[:-3, 0], U[3:, 1]
    A = np.column_stack([a, np.ones_like(a)])
    coef, *_ = np.linalg.lstsq(A, b, rcond=None)
    assert np.max(np.abs(A @ coef - b)) < 1e-9


# --- patching -------------------------------------------------------------


def test_token_count_default():
    assert token_count(96, 16, 8) == 12
    assert token_count(96, 96, 96) == 2


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_token_count_property(data):
    L = data.draw(st.integers(8, 256))
    p = data.draw(st.integers(1, L))
    S = data.draw(st.integers(1, p))
    N = token_count(L, p, S)
    assert N == (L - p) // S + 2
    idx = patch_time_index(L, p, S)
    assert idx.shape == (N, p) and idx.max() == L - 1


def test_patch_last_covers_padding():
    idx = patch_time_index(96, 96, 96)
    assert np.array_equal(idx[1], np.full(96, 95))


def test_patchify_zero_projection_gives_positional_table():
    rng = np.random.default_rng(0)
    U = rng.standard_normal((2, 16, 3))
    W_pos = rng.standard_normal((5, 8))
    tok = patchify_project(U, 4, 4, np.zeros((12, 8)), np.zeros(8), W_pos).data
    assert tok.shape == (2, 5, 8)
    assert np.array_equal(tok[0], W_pos) and np.array_equal(tok[1], W_pos)


def test_patchify_time_major_flattening():
    U = np.arange(12.0).reshape(6, 2)  # row t = [2t, 2t+1]
    tok = patchify_project(U, 2, 2, np.eye(4), None, np.zeros((4, 4))).data
    assert tok[0].tolist() == [0.0, 1.0, 2.0, 3.0]
    assert tok[-1].tolist() == [10.0, 11.0, 10.0, 11.0]


# --- encoder --------------------------------------------------------------


def test_encoder_zero_layers_identity():
    cfg = tiny(n_layers=0)
    x = np.random.default_rng(0).standard_normal((3, 5, 8))
    assert np.array_equal(encoder_forward(x, {}, cfg).data, x)


@pytest.mark.parametrize("norm_first", [False, True])
def test_encoder_token_permutation_equivariance(norm_first):
    cfg = tiny(norm_first=norm_first)
    params = MCformer(cfg).params
    x = np.random.default_rng(1).standard_normal((2, 5, 8))
    perm = np.array([3, 0, 4, 1, 2])
    a = encoder_forward(x, params, cfg).data
    b = encoder_forward(x[:, perm], params, cfg).data
    assert np.allclose(a[:, perm], b, atol=1e-12)


def test_attention_rows_sum_to_one():
    model = MCformer(tiny(n_layers=2))
    rng = np.random.default_rng(2)
    rows = []
    model.forward(rng.standard_normal((3, 16, 4)), attn_out=rows)
    assert len(rows) == 2
    for w in rows:
        assert np.max(np.abs(w.sum(axis=-1) - 1.0)) < 1e-12


# --- full forward ---------------------------------------------------------


def test_forward_shape():
    cfg = ModelConfig(M=8, L=48, h=24, m=2, p=8, S=4, P=16, n_heads=2, n_layers=1, d_ff=32)
    out = MCformer(cfg).predict(np.random.default_rng(0).standard_normal((4, 48, 8)))
    assert out.shape == (4, 24, 8)


def test_forward_rejects_bad_shape_and_nan():
    model = MCformer(tiny())
    with pytest.raises(ShapeError):
        model.predict(np.zeros((2, 16, 5)))
    x = np.zeros((1, 16, 4))
    x[0, 3, 1] = np.nan
    with pytest.raises(NumericError):
        model.predict(x)


def test_channel_independent_permutation_equivariance():
    cfg = tiny(m=0, M=5)
    model = MCformer(cfg)
    model.params["pos"].data[...] = 0.0
    x = np.random.default_rng(3).standard_normal((2, 16, 5))
    perm = np.array([2, 4, 0, 1, 3])
    a = model.predict(x)
    b = model.predict(x[:, :, perm])
    assert np.allclose(a[:, :, perm], b, atol=1e-12)


def test_zero_head_gives_instance_mean():
    model = MCformer(tiny())
    model.params["head.weight"].data[...] = 0.0
    model.params["head.bias"].data[...] = 0.0
    x = np.random.default_rng(4).standard_normal((3, 16, 4)) + 7.0
    out = model.predict(x)
    assert np.allclose(out, np.broadcast_to(x.mean(axis=1, keepdims=True), out.shape), atol=1e-12)


def test_forward_deterministic_in_eval():
    model = MCformer(tiny(dropout=0.3))
    x = np.random.default_rng(5).standard_normal((2, 16, 4))
    assert np.array_equal(model.predict(x), model.predict(x))


def test_init_reproducible():
    a, b = MCformer(tiny(seed=3)), MCformer(tiny(seed=3))
    for k in a.params:
        assert a.params[k].data.tobytes() == b.params[k].data.tobytes()


def test_horizons_accepted():
    for h in (12, 24, 48, 96):
        cfg = ModelConfig(M=3, L=96, h=h, m=1, p=16, S=8, P=16, n_heads=2, n_layers=1, d_ff=16)
        assert MCformer(cfg).predict(np.zeros((1, 96, 3))).shape == (1, h, 3)


# --- linear baseline ------------------------------------------------------


def _identity_linear(M=3, L=12):
    model = LinearBaseline(LinearConfig(M=M, L=L, h=L))
    model.params["linear.weight"].data[...] = np.eye(L)
    return model


def test_linear_identity_repeats_input():
    model = _identity_linear()
    x = np.random.default_rng(0).standard_normal((2, 12, 3))
    assert np.allclose(model.predict(x), x, atol=1e-10)


def test_linear_constant_input():
    model = LinearBaseline(LinearConfig(M=2, L=12, h=5))
    out = model.predict(np.full((1, 12, 2), 4.0))
    assert np.allclose(out, 4.0)


def test_build_model_kinds():
    assert build_model("mcformer", tiny().to_dict()).kind == "mcformer"
    assert build_model("linear", {"M": 2, "L": 8, "h": 4}).kind == "linear"
    with pytest.raises(ConfigError):
        build_model("rnn", {})


def test_gradients_flow_to_every_parameter():
    model = MCformer(tiny())
    x = np.random.default_rng(6).standard_normal((2, 16, 4))
    y = np.random.default_rng(7).standard_normal((2, 4, 4))
    for p in model.params.values():
        p.requires_grad = True
    with nx.Tape() as tape:
        loss = nx.mean(nx.square(model.forward(x) - y))
    nx.backward(tape, loss)
    for name, p in model.params.items():
        assert p.grad is not None and p.grad.shape == p.shape, name
