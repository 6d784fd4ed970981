"""Latent encode/decode pipeline and the on-disk formats.

Bitstream file (little-endian, fixed layout, see ``HEADER``)::

    magic "CTXF" | version u16 | H W C N_cs u16 | order u8 | geometry u8
    | R_h R_w u16 | k_m u8 | scale mode u8 | B u16 | L d_e d_mlp h u16
    | model seed u64 | hyper seed u64 | payload length u32 | payload

order: 0 = sfo, 1 = cfo (written as cfo when N_cs = 1, where both orders
coincide); geometry: 0 = anchored, 1 = centered; scale mode: 0 = 1/sqrt(d_k),
1 = 1/d_k. The payload is the range-coded symbols in wavefront order.

Latent file::

    magic "CTXL" | H W C u32 | dtype u8 (0 = int16, 1 = float32) | data

with data row-major ``H x W x C``.
"""

from __future__ import annotations

import functools
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .entropy import (
    EntropyHeadWeights,
    EntropyParams,
    entropy_head,
    estimate_rate,
    gmm_pmf_table,
    hyper_features,
    init_head_weights,
    quantize,
)
from .layout import CodingOrder, SeqElement
from .model import ModelConfig, ModelWeights, ScaleMode, init_model_weights
from .rangecoder import CorruptStreamError, RangeDecoder, build_cdf, encode_symbols
from .scheduler import ENCODER_MODES, ModeError, Schedule, ScheduleMode, compute_context, make_schedule, run_windows
from .tensor import F32, SeededRng
from .window import WindowGeometry

MAGIC = b"CTXF"
VERSION = 1
HEADER = struct.Struct("<4sHHHHHBBHHBBHHHHHQQI")

LATENT_MAGIC = b"CTXL"
LATENT_HEADER = struct.Struct("<4sIIIB")
DTYPES = {0: np.dtype("<i2"), 1: np.dtype("<f4")}

_ORDERS = [CodingOrder.SFO, CodingOrder.CFO]
_GEOMETRIES = [WindowGeometry.ANCHORED, WindowGeometry.CENTERED]
_SCALES = [ScaleMode.INV_SQRT_DK, ScaleMode.INV_DK]


class FormatError(ValueError):
    pass


@dataclass(frozen=True)
class Model:
    cfg: ModelConfig
    weights: ModelWeights
    head: EntropyHeadWeights
    seed: int

    @classmethod
    def from_seed(cls, cfg: ModelConfig, seed: int) -> "Model":
        rng = SeededRng(seed)
        weights = init_model_weights(cfg, rng)
        head = init_head_weights(cfg, rng)
        return cls(cfg, weights, head, seed)


@functools.lru_cache(maxsize=8)
def cached_model(cfg: ModelConfig, seed: int) -> Model:
    return Model.from_seed(cfg, seed)


@dataclass(frozen=True)
class CodecHeader:
    H: int
    W: int
    cfg: ModelConfig
    model_seed: int
    hyper_seed: int
    payload_length: int = 0

    @property
    def C(self) -> int:
        return self.cfg.M

    def pack(self) -> bytes:
        c = self.cfg
        order = CodingOrder.CFO if c.n_cs == 1 else c.order
        return HEADER.pack(
            MAGIC, VERSION, self.H, self.W, c.M, c.n_cs,
            _ORDERS.index(order), _GEOMETRIES.index(c.geometry),
            c.R_h, c.R_w, c.k_m, _SCALES.index(c.attention_scale_mode), c.symbol_bound,
            c.L, c.d_e, c.d_mlp, c.h,
            self.model_seed, self.hyper_seed, self.payload_length,
        )  # fmt: skip

    @classmethod
    def unpack(cls, data: bytes) -> "CodecHeader":
        if len(data) < HEADER.size:
            raise CorruptStreamError(f"stream shorter than the {HEADER.size}-byte header")
        (magic, version, H, W, C, n_cs, order, geometry, R_h, R_w, k_m, scale, B,
         L, d_e, d_mlp, h, model_seed, hyper_seed, length) = HEADER.unpack_from(data)  # fmt: skip
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}")
        if version != VERSION:
            raise FormatError(f"unsupported stream version {version} (expected {VERSION})")
        if H == 0 or W == 0:
            raise FormatError("latent height and width must be positive")
        try:
            cfg = ModelConfig(
                L=L, d_e=d_e, d_mlp=d_mlp, h=h, n_cs=n_cs, order=_ORDERS[order], M=C, k_m=k_m,
                R_h=R_h, R_w=R_w, attention_scale_mode=_SCALES[scale],
                geometry=_GEOMETRIES[geometry], symbol_bound=B,
            )  # fmt: skip
        except (IndexError, ValueError) as err:
            raise FormatError(f"invalid header: {err}") from None
        return cls(H, W, cfg, model_seed, hyper_seed, length)


# ----------------------------------------------------------------------------
# entropy parameters


def _hyper_rows(hyper: np.ndarray, targets: np.ndarray) -> np.ndarray:
    return hyper[targets[:, 0], targets[:, 1]]


def entropy_params(
    model: Model, latent, hyper: np.ndarray, mode: ScheduleMode = ScheduleMode.BDS_SCS, **kw
) -> EntropyParams:
    """Mixture parameters ``[H, W, C, k_m]`` for a fully known latent."""
    cfg = model.cfg
    H, W, C = np.shape(latent)
    sched = make_schedule(cfg.layout(H, W), cfg, mode)
    feats = compute_context(cfg, model.weights, latent, sched, **kw)
    hyp = np.broadcast_to(hyper[:, :, None, :], (H, W, cfg.n_cs, hyper.shape[-1]))
    p = entropy_head(cfg, model.head, feats, hyp)
    return EntropyParams(*(a.reshape(H, W, C, cfg.k_m) for a in (p.weights, p.means, p.scales)))


def decode_order(cfg: ModelConfig, H: int, W: int) -> tuple[Schedule, np.ndarray]:
    """Wavefront schedule and the element order ``[S, 3]`` symbols follow.

    Within a group, step ``s`` of every window comes before step ``s + 1``;
    windows in a step go by slot; the ``p_c`` channels of a segment go in
    ascending channel order.
    """
    sched = make_schedule(cfg.layout(H, W), cfg, ScheduleMode.WAVEFRONT, phase="decode")
    order = []
    for group in sched:
        for step in range(max(len(w.targets) for w in group)):
            order.extend(w.targets[step] for w in group if step < len(w.targets))
    return sched, np.asarray(order, dtype=np.int64).reshape(-1, 3)


def _channel_index(order: np.ndarray, p_c: int) -> tuple[np.ndarray, ...]:
    i = np.repeat(order[:, 0], p_c)
    j = np.repeat(order[:, 1], p_c)
    c = (order[:, 2, None] * p_c + np.arange(p_c)).ravel()
    return i, j, c


# ----------------------------------------------------------------------------
# encode / decode


@dataclass
class EncodeResult:
    stream: bytes
    params: EntropyParams
    estimate_bits: float

    @property
    def payload_bits(self) -> int:
        return (len(self.stream) - HEADER.size) * 8


def encode_latent(
    latent,
    cfg: ModelConfig,
    model_seed: int,
    hyper_seed: int,
    mode: ScheduleMode = ScheduleMode.BDS_SCS,
    **kw,
) -> EncodeResult:
    latent = np.asarray(latent)
    if latent.ndim != 3 or latent.shape[2] != cfg.M:
        raise ValueError(f"latent shape {latent.shape} does not match M={cfg.M}")
    mode = ScheduleMode(mode)
    if mode not in ENCODER_MODES and mode is not ScheduleMode.WAVEFRONT:
        raise ModeError(f"unknown encoder mode {mode}")
    B = cfg.symbol_bound
    if np.issubdtype(latent.dtype, np.floating):
        if not np.array_equal(latent, np.round(latent)):
            latent = quantize(latent, B)
    if np.abs(latent).max(initial=0) > B:
        raise ValueError(f"latent symbols exceed the bound {B}")
    symbols = latent.astype(np.int64)
    H, W, _ = latent.shape
    model = cached_model(cfg, model_seed)
    hyper = hyper_features(hyper_seed, H, W, cfg.M)
    params = entropy_params(model, symbols.astype(F32), hyper, mode, **kw)
    estimate, _ = estimate_rate(params, symbols, B)

    _, order = decode_order(cfg, H, W)
    idx = _channel_index(order, cfg.p_c)
    cdfs = build_cdf(gmm_pmf_table(params[idx], B))
    payload = encode_symbols(symbols[idx], cdfs, offset=B)
    header = CodecHeader(H, W, cfg, model_seed, hyper_seed, len(payload))
    return EncodeResult(header.pack() + payload, params, estimate)


def decode_latent(stream: bytes, batch_size: int = 64) -> np.ndarray:
    """Reconstruct the ``int16`` latent from a bitstream."""
    return decode_with_params(stream, batch_size)[0]


def decode_with_params(stream: bytes, batch_size: int = 64) -> tuple[np.ndarray, EntropyParams]:
    """Decode, also returning the ``[H, W, C, k_m]`` mixtures the decoder used."""
    header = CodecHeader.unpack(stream)
    payload = stream[HEADER.size :]
    if len(payload) != header.payload_length:
        raise CorruptStreamError(
            f"payload is {len(payload)} bytes, header announces {header.payload_length}"
        )
    cfg = header.cfg
    H, W, B, p_c = header.H, header.W, cfg.symbol_bound, cfg.p_c
    model = cached_model(cfg, header.model_seed)
    hyper = hyper_features(header.hyper_seed, H, W, cfg.M)
    sched, _ = decode_order(cfg, H, W)
    latent = np.zeros((H, W, cfg.n_cs, p_c), F32)
    used = [np.zeros((H, W, cfg.n_cs, p_c, cfg.k_m), F32) for _ in range(3)]
    dec = RangeDecoder(payload)
    for group in sched:
        for step in range(max(len(w.targets) for w in group)):
            active = [w for w in group if step < len(w.targets)]
            for n in range(0, len(active), batch_size):
                chunk = active[n : n + batch_size]
                feats = run_windows(cfg, model.weights, latent, chunk, step=step)[:, 0]
                targets = np.asarray([w.targets[step] for w in chunk], dtype=np.int64)
                params = entropy_head(cfg, model.head, feats, _hyper_rows(hyper, targets))
                cdfs = build_cdf(gmm_pmf_table(params, B))  # [b, p_c, 2B+1]
                for b, (i, j, k) in enumerate(targets):
                    for arr, src in zip(used, (params.weights, params.means, params.scales)):
                        arr[i, j, k] = src[b]
                    for c in range(p_c):
                        latent[i, j, k, c] = dec.decode(cdfs[b, c].tolist()) - B
    if not dec.exhausted():
        raise CorruptStreamError("payload has trailing bytes the decoder did not consume")
    params = EntropyParams(*(a.reshape(H, W, cfg.M, cfg.k_m) for a in used))
    return latent.reshape(H, W, cfg.M).astype(np.int16), params


# ----------------------------------------------------------------------------
# latent files and synthetic data


def pack_latent(latent) -> bytes:
    latent = np.asarray(latent)
    code = 1 if np.issubdtype(latent.dtype, np.floating) else 0
    H, W, C = latent.shape
    data = np.ascontiguousarray(latent, dtype=DTYPES[code]).tobytes()
    return LATENT_HEADER.pack(LATENT_MAGIC, H, W, C, code) + data


def write_latent(path, latent) -> None:
    Path(path).write_bytes(pack_latent(latent))


def read_latent(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < LATENT_HEADER.size:
        raise FormatError("latent file is shorter than its header")
    magic, H, W, C, code = LATENT_HEADER.unpack_from(raw)
    if magic != LATENT_MAGIC or code not in DTYPES:
        raise FormatError("not a latent file")
    body = raw[LATENT_HEADER.size :]
    if len(body) != H * W * C * DTYPES[code].itemsize:
        raise FormatError(f"latent data is {len(body)} bytes, expected {H}x{W}x{C} values")
    return np.frombuffer(body, dtype=DTYPES[code]).reshape(H, W, C).copy()


def gen_synthetic_latent(seed: int, H: int, W: int, C: int, rho: float, B: int = 32, scale: float = 1.0) -> np.ndarray:
    """Quantized separable AR(1) Gaussian field, channels independent.

    A stationary unit-variance AR(1) filter is run down the rows and then
    along the columns of white noise, giving correlation ``rho**(|di|+|dj|)``.
    """
    if not 0 <= rho < 1:
        raise ValueError("rho must lie in [0, 1)")
    x = SeededRng(seed).normal(H * W * C).reshape(H, W, C)
    innov = np.sqrt(1.0 - rho * rho)
    for i in range(1, H):
        x[i] = rho * x[i - 1] + innov * x[i]
    for j in range(1, W):
        x[:, j] = rho * x[:, j - 1] + innov * x[:, j]
    return quantize(scale * x, B)
