import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contextformer.codec import (
    HEADER,
    CodecHeader,
    FormatError,
    decode_latent,
    decode_order,
    encode_latent,
    gen_synthetic_latent,
    read_latent,
    write_latent,
)
from contextformer.entropy import gmm_pmf_table
from contextformer.model import ModelConfig
from contextformer.rangecoder import CorruptStreamError, build_cdf, ideal_bits
from contextformer.scheduler import ENCODER_MODES, ModeError


def lag1_autocorr(x):
    a = x[:, :-1].ravel().astype(np.float64)
    b = x[:, 1:].ravel().astype(np.float64)
    return float(np.corrcoef(a, b)[0, 1])


def test_gen_deterministic():
    a = gen_synthetic_latent(5, 6, 7, 8, 0.5)
    assert a.dtype == np.int16 and a.shape == (6, 7, 8)
    assert np.array_equal(a, gen_synthetic_latent(5, 6, 7, 8, 0.5))
    assert not np.array_equal(a, gen_synthetic_latent(6, 6, 7, 8, 0.5))


def test_gen_rho_zero_is_iid_normal():
    x = gen_synthetic_latent(1, 64, 64, 4, 0.0, scale=4.0).astype(np.float64)
    assert abs(lag1_autocorr(x)) < 0.03
    assert 3.7 < x.std() < 4.3


def test_gen_correlated():
    x = gen_synthetic_latent(2, 64, 64, 8, 0.9, scale=4.0)
    assert 0.8 <= lag1_autocorr(x) <= 0.95
    assert np.abs(x).max() <= 32


def test_gen_rejects_rho():
    with pytest.raises(ValueError):
        gen_synthetic_latent(1, 2, 2, 2, 1.0)


def test_header_roundtrip():
    cfg = ModelConfig(n_cs=4, order="sfo", geometry="centered", attention_scale_mode="inv_dk", symbol_bound=20)
    h = CodecHeader(5, 6, cfg, 2**63 + 5, 77, 1234)
    data = h.pack()
    assert len(data) == HEADER.size and data[:4] == b"CTXF"
    assert CodecHeader.unpack(data) == h


def test_header_validation():
    cfg = ModelConfig()
    good = CodecHeader(2, 2, cfg, 1, 2).pack()
    with pytest.raises(FormatError):
        CodecHeader.unpack(b"XXXX" + good[4:])
    with pytest.raises(FormatError, match="version"):
        CodecHeader.unpack(good[:4] + b"\x09\x00" + good[6:])
    with pytest.raises(FormatError):
        CodecHeader.unpack(CodecHeader(0, 0, cfg, 1, 2).pack())
    with pytest.raises(CorruptStreamError):
        CodecHeader.unpack(good[:10])


def test_single_segment_orders_share_stream():
    lat = gen_synthetic_latent(3, 5, 4, 8, 0.5)
    a = encode_latent(lat, ModelConfig(n_cs=1, order="cfo"), 1, 2).stream
    b = encode_latent(lat, ModelConfig(n_cs=1, order="sfo"), 1, 2).stream
    assert a == b


@settings(max_examples=12)
@given(
    st.integers(1, 5), st.integers(1, 5), st.sampled_from([1, 2, 4]), st.sampled_from(["sfo", "cfo"]),
    st.sampled_from(["anchored", "centered"]), st.integers(0, 2**32), st.integers(0, 3),
)
def test_roundtrip_property(H, W, n_cs, order, geometry, seed, hyper):
    cfg = ModelConfig(n_cs=n_cs, order=order, geometry=geometry, R_h=3, R_w=3)
    lat = gen_synthetic_latent(seed, H, W, 8, 0.6, scale=3.0)
    res = encode_latent(lat, cfg, seed % 7 + 1, hyper)
    assert np.array_equal(decode_latent(res.stream), lat)
    cdfs = build_cdf(gmm_pmf_table(res.params, cfg.symbol_bound)).reshape(-1, 2 * cfg.symbol_bound + 2)
    coded = ideal_bits(lat.ravel().astype(np.int64), cdfs, offset=cfg.symbol_bound)
    assert coded - 8 <= res.payload_bits <= coded + 64


def test_rate_agreement_in_distribution():
    cfg = ModelConfig(n_cs=2)
    for seed in range(4):
        lat = gen_synthetic_latent(seed, 6, 6, 8, 0.5)
        res = encode_latent(lat, cfg, 1, 2)
        assert -16 <= res.payload_bits - res.estimate_bits <= 1e-3 * res.estimate_bits + 64


def test_frequency_floor_caps_tail_cost():
    # a symbol far outside the predicted mixture costs at most 16 bits once quantized
    cfg = ModelConfig(n_cs=1)
    lat = np.zeros((1, 1, 8), np.int16)
    lat[0, 0, 0] = 20
    res = encode_latent(lat, cfg, 1, 0)
    assert res.estimate_bits > 100
    assert res.payload_bits < res.estimate_bits - 16
    assert np.array_equal(decode_latent(res.stream), lat)


def test_encoder_modes_give_identical_streams():
    cfg = ModelConfig(n_cs=2)
    lat = gen_synthetic_latent(11, 5, 5, 8, 0.7, scale=2.0)
    out = [encode_latent(lat, cfg, 3, 4, m) for m in ENCODER_MODES]
    assert len({r.stream for r in out}) == 1
    assert all(r.params.identical(out[0].params) for r in out)


def test_real_latent_is_quantized():
    cfg = ModelConfig()
    real = gen_synthetic_latent(1, 3, 3, 8, 0.2).astype(np.float32) + 0.3
    res = encode_latent(real, cfg, 1, 2)
    assert np.array_equal(decode_latent(res.stream), np.round(real).astype(np.int16))


def test_encode_errors():
    cfg = ModelConfig()
    with pytest.raises(ValueError):
        encode_latent(np.zeros((2, 2, 6), np.int16), cfg, 1, 2)
    with pytest.raises(ValueError, match="bound"):
        encode_latent(np.full((2, 2, 8), 40, np.int16), cfg, 1, 2)
    with pytest.raises(ValueError):
        encode_latent(np.zeros((2, 2, 8), np.int16), cfg, 1, 2, mode="bogus")


def test_wavefront_mode_also_encodes():
    cfg = ModelConfig()
    lat = gen_synthetic_latent(1, 3, 4, 8, 0.5)
    assert encode_latent(lat, cfg, 1, 2, "wavefront").stream == encode_latent(lat, cfg, 1, 2, "ds").stream


def test_corrupt_streams():
    cfg = ModelConfig()
    stream = encode_latent(gen_synthetic_latent(4, 4, 4, 8, 0.5, scale=3.0), cfg, 1, 2).stream
    with pytest.raises(CorruptStreamError):
        decode_latent(stream[:-3])
    with pytest.raises(CorruptStreamError):
        decode_latent(stream + b"\x00")
    hdr = CodecHeader.unpack(stream)
    patched = CodecHeader(hdr.H, hdr.W, hdr.cfg, hdr.model_seed, hdr.hyper_seed, hdr.payload_length - 3).pack()
    with pytest.raises(CorruptStreamError):
        decode_latent(patched + stream[HEADER.size : -3])


def test_decode_order_is_wavefront_then_segment():
    cfg = ModelConfig(n_cs=2)
    sched, order = decode_order(cfg, 3, 3)
    assert order.shape == (18, 3)
    diag = order[:, 0] + order[:, 1]
    assert (np.diff(diag) >= 0).all()
    assert [tuple(r) for r in order[:3]] == [(0, 0, 0), (0, 0, 1), (0, 1, 0)]


def test_latent_file_roundtrip(tmp_path):
    x = gen_synthetic_latent(1, 3, 4, 5, 0.1)
    write_latent(tmp_path / "a", x)
    y = read_latent(tmp_path / "a")
    assert y.dtype == np.int16 and np.array_equal(x, y)
    f = np.linspace(-1, 1, 24, dtype=np.float32).reshape(2, 3, 4)
    write_latent(tmp_path / "b", f)
    assert read_latent(tmp_path / "b").tobytes() == f.tobytes()
    raw = (tmp_path / "a").read_bytes()
    (tmp_path / "c").write_bytes(raw[:-1])
    with pytest.raises(FormatError):
        read_latent(tmp_path / "c")


def test_decoder_params_match_encoder():
    from contextformer.codec import decode_with_params

    for order in ("cfo", "sfo"):
        cfg = ModelConfig(n_cs=4, order=order, R_h=3, R_w=3)
        lat = gen_synthetic_latent(8, 4, 5, 8, 0.5)
        res = encode_latent(lat, cfg, 2, 3, "ds")
        back, params = decode_with_params(res.stream, batch_size=3)
        assert np.array_equal(back, lat)
        assert params.identical(res.params)
