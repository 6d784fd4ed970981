import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from contextformer.codec import Model
from contextformer.layout import SeqElement, to_sequence
from contextformer.model import (
    CapacityError,
    CausalMask,
    ModelConfig,
    ScaleMode,
    forward_global,
    forward_rows,
    forward_window,
    init_model_weights,
    masked_mha,
    transformer_layer,
)
from contextformer.tensor import LinearParams, SeededRng

from oracles import naive_mha


def zero_linear(p):
    return LinearParams(np.zeros_like(p.weight), np.zeros_like(p.bias))


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(d_e=64, h=13)
    with pytest.raises(ValueError):
        ModelConfig.base(h=13)
    with pytest.raises(ValueError):
        ModelConfig(M=8, n_cs=3)
    with pytest.raises(ValueError):
        ModelConfig(R_h=0)
    with pytest.raises(ValueError):
        ModelConfig(k_m=0)


def test_base_config():
    cfg = ModelConfig.base()
    assert (cfg.L, cfg.d_e, cfg.d_mlp, cfg.h, cfg.n_cs, cfg.order.value, cfg.M) == (8, 384, 1536, 12, 4, "cfo", 192)
    assert (cfg.R_h, cfg.R_w, cfg.k_m) == (16, 16, 3)
    assert cfg.d_head == 32 and cfg.p_c == 48


def test_scale_modes():
    assert ModelConfig(d_e=64, h=4).attention_scale == np.float32(0.25)
    assert ModelConfig(d_e=64, h=4, attention_scale_mode="inv_dk").attention_scale == np.float32(1 / 16)


def test_config_dict_roundtrip():
    cfg = ModelConfig(n_cs=4, order="sfo", geometry="centered", attention_scale_mode=ScaleMode.INV_DK)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        ModelConfig.from_dict({"nope": 1})


def test_causal_mask():
    m = CausalMask(4).dense()
    assert not m[0, 0] and m[0, 1] and not m[3, :].any()


def test_weights_deterministic(toy_cfg):
    a = init_model_weights(toy_cfg, SeededRng(5))
    b = init_model_weights(toy_cfg, SeededRng(5))
    assert a.pos_table.tobytes() == b.pos_table.tobytes()
    assert a.layers[1].mlp_out.weight.tobytes() == b.layers[1].mlp_out.weight.tobytes()
    assert a.pos_table.shape == (toy_cfg.window_len + 1, toy_cfg.d_e)


@given(st.integers(1, 12), st.sampled_from([1, 2, 4]), st.sampled_from(list(ScaleMode)), st.integers(0, 2**31))
def test_mha_matches_naive_oracle(S, h, scale, seed):
    cfg = ModelConfig(d_e=16, d_mlp=32, h=h, attention_scale_mode=scale)
    lw = init_model_weights(cfg, SeededRng(seed)).layers[0]
    lw = dataclasses.replace(lw, q=_scaled(lw.q, 20), k=_scaled(lw.k, 20), v=_scaled(lw.v, 20), o=_scaled(lw.o, 20))
    x = np.random.default_rng(seed).standard_normal((S, 16)).astype(np.float32)
    ref = naive_mha(lw, x, h, float(cfg.attention_scale))
    np.testing.assert_allclose(masked_mha(lw, x, cfg), ref, atol=1e-5)


def _scaled(p, f):
    return LinearParams((p.weight * f).astype(np.float32), p.bias)


def test_mha_single_slot_is_value_projection(toy_cfg, toy_model, rng):
    lw = toy_model.weights.layers[0]
    x = rng.standard_normal((1, toy_cfg.d_e)).astype(np.float32)
    v = x.astype(np.float64) @ lw.v.weight + lw.v.bias
    ref = v @ lw.o.weight + lw.o.bias
    np.testing.assert_allclose(masked_mha(lw, x, toy_cfg), ref, atol=1e-6)


def test_mha_zero_values_give_output_bias(toy_cfg, toy_model, rng):
    lw = toy_model.weights.layers[0]
    bias = np.arange(toy_cfg.d_e, dtype=np.float32)
    lw = dataclasses.replace(lw, v=zero_linear(lw.v), o=LinearParams(lw.o.weight, bias))
    out = masked_mha(lw, rng.standard_normal((5, toy_cfg.d_e)), toy_cfg)
    assert np.array_equal(out, np.broadcast_to(bias, out.shape))


def test_zero_layer_is_identity(toy_cfg, toy_model, rng):
    lw = toy_model.weights.layers[0]
    lw = dataclasses.replace(
        lw, q=zero_linear(lw.q), k=zero_linear(lw.k), v=zero_linear(lw.v), o=zero_linear(lw.o),
        mlp_in=zero_linear(lw.mlp_in), mlp_out=zero_linear(lw.mlp_out),
    )  # fmt: skip
    x = rng.standard_normal((6, toy_cfg.d_e)).astype(np.float32)
    assert np.array_equal(transformer_layer(lw, x, toy_cfg), x)


def test_layer_causality_probe(toy_cfg, toy_model, rng):
    lw = toy_model.weights.layers[0]
    x = rng.standard_normal((10, toy_cfg.d_e)).astype(np.float32)
    base = transformer_layer(lw, x, toy_cfg)
    for t0 in range(9):
        y = x.copy()
        y[t0 + 1 :] = 0
        assert transformer_layer(lw, y, toy_cfg)[: t0 + 1].tobytes() == base[: t0 + 1].tobytes()


def test_query_rows_match_full_rows(toy_cfg, toy_model, rng):
    seqs = rng.standard_normal((3, 11, toy_cfg.p_c)).astype(np.float32)
    full = forward_rows(toy_cfg, toy_model.weights, seqs)
    rows = np.array([[0, 4], [10, 3], [5, 5]])
    part = forward_rows(toy_cfg, toy_model.weights, seqs, rows)
    assert part.tobytes() == np.take_along_axis(full, rows[:, :, None], axis=1).tobytes()


def test_global_row_zero_ignores_latent(toy_cfg, toy_model, rng):
    lay = toy_cfg.layout(2, 2)
    a = forward_global(toy_cfg, toy_model.weights, to_sequence(lay, rng.integers(-4, 4, (2, 2, 8))))
    b = forward_global(toy_cfg, toy_model.weights, to_sequence(lay, rng.integers(-4, 4, (2, 2, 8))))
    assert a[0].tobytes() == b[0].tobytes()


def test_global_capacity_error(toy_cfg, toy_model):
    S = toy_model.weights.pos_table.shape[0] + 1
    with pytest.raises(CapacityError):
        forward_global(toy_cfg, toy_model.weights, np.zeros((S, toy_cfg.p_c)))


def test_position_table_breaks_permutation_equivariance(toy_cfg, toy_model):
    lay = toy_cfg.layout(2, 2)
    latent = np.zeros((2, 2, 8), np.float32)
    latent[0, 0] = 3
    seq = to_sequence(lay, latent)
    perm = seq.copy()
    perm[[1, 2]] = perm[[2, 1]]
    a = forward_global(toy_cfg, toy_model.weights, seq)
    b = forward_global(toy_cfg, toy_model.weights, perm)
    assert not np.array_equal(a[[0, 2, 1, 3]], b[[0, 1, 2, 3]])


def test_window_first_target_equals_global_row_zero(toy_cfg, toy_model, rng):
    latent = rng.integers(-3, 3, (5, 5, 8)).astype(np.float32)
    win = forward_window(toy_cfg, toy_model.weights, latent, SeqElement(0, 0, 0))
    glob = forward_global(toy_cfg, toy_model.weights, np.zeros((1, toy_cfg.p_c)))
    assert win.tobytes() == glob[0].tobytes()


@pytest.mark.parametrize("order", ["cfo", "sfo"])
@pytest.mark.parametrize("n_cs", [1, 2])
def test_centered_window_equals_global_when_covering(order, n_cs, rng):
    cfg = ModelConfig(n_cs=n_cs, order=order, geometry="centered")
    model = Model.from_seed(cfg, 3)
    lay = cfg.layout(4, 4)
    latent = rng.integers(-4, 5, (4, 4, 8)).astype(np.float32)
    glob = forward_global(cfg, model.weights, to_sequence(lay, latent))
    for s, e in enumerate(lay.elements()):
        assert forward_window(cfg, model.weights, latent, e).tobytes() == glob[s].tobytes()


def test_anchored_window_is_a_strict_subset(toy_cfg, toy_model, rng):
    # up-right neighbours are outside the anchored window, so features differ from the global prefix
    lay = toy_cfg.layout(3, 3)
    latent = rng.integers(-4, 5, (3, 3, 8)).astype(np.float32)
    glob = forward_global(toy_cfg, toy_model.weights, to_sequence(lay, latent))
    s = 2 * 3 * 2  # first element of row 2, whose raster prefix includes (1, 1), (1, 2)
    e = SeqElement(2, 0, 0)
    assert forward_window(toy_cfg, toy_model.weights, latent, e).tobytes() != glob[s].tobytes()

