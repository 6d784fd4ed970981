"""Causal transformer context model over spatio-channel sequences."""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field

import numpy as np

from .layout import CodingOrder, SeqElement, SequenceLayout
from .tensor import (
    F32,
    LinearParams,
    SeededRng,
    ShapeError,
    Tensor,
    as_tensor,
    causal_attention,
    gelu,
    layer_norm,
    linear_apply,
    seeded_normal,
)
from .window import WindowGeometry, context_elements, max_context

LN_EPS = 1e-5
INIT_STD = 0.02


class ScaleMode(str, enum.Enum):
    INV_SQRT_DK = "inv_sqrt_dk"
    INV_DK = "inv_dk"


class CapacityError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    """Context model plus entropy head hyperparameters.

    ``M`` is the number of latent channels; ``R_h`` x ``R_w`` is the spatial
    extent of the sliding window.
    """

    L: int = 2
    d_e: int = 64
    d_mlp: int = 256
    h: int = 4
    n_cs: int = 2
    order: CodingOrder = CodingOrder.CFO
    M: int = 8
    k_m: int = 3
    R_h: int = 8
    R_w: int = 8
    attention_scale_mode: ScaleMode = ScaleMode.INV_SQRT_DK
    geometry: WindowGeometry = WindowGeometry.ANCHORED
    symbol_bound: int = 32

    def __post_init__(self):
        object.__setattr__(self, "order", CodingOrder(self.order))
        object.__setattr__(self, "attention_scale_mode", ScaleMode(self.attention_scale_mode))
        object.__setattr__(self, "geometry", WindowGeometry(self.geometry))
        for name in ("L", "d_e", "d_mlp", "h", "n_cs", "M", "k_m", "R_h", "R_w", "symbol_bound"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.d_e % self.h:
            raise ValueError(f"d_e={self.d_e} is not divisible by h={self.h}")
        if self.M % self.n_cs:
            raise ValueError(f"n_cs={self.n_cs} does not divide M={self.M}")

    @classmethod
    def base(cls, **overrides) -> "ModelConfig":
        """L=8, d_e=384, d_mlp=4*d_e, h=12, N_cs=4, cfo, M=192, 16x16 window."""
        cfg = dict(L=8, d_e=384, d_mlp=1536, h=12, n_cs=4, order="cfo", M=192, k_m=3, R_h=16, R_w=16)
        cfg.update(overrides)
        return cls(**cfg)

    @classmethod
    def toy(cls, **overrides) -> "ModelConfig":
        return cls(**overrides)

    @property
    def p_c(self) -> int:
        return self.M // self.n_cs

    @property
    def d_head(self) -> int:
        return self.d_e // self.h

    @property
    def window_len(self) -> int:
        """Longest window sequence (start token included)."""
        return max_context(self.geometry, self.R_h, self.R_w, self.n_cs, self.order)

    @property
    def attention_scale(self) -> np.float32:
        if self.attention_scale_mode is ScaleMode.INV_DK:
            return F32(1.0 / self.d_head)
        return F32(1.0 / np.sqrt(self.d_head))

    def layout(self, H: int, W: int) -> SequenceLayout:
        return SequenceLayout(H, W, self.M, self.n_cs, self.order)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("order", "attention_scale_mode", "geometry"):
            d[key] = d[key].value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class LayerWeights:
    ln1_gain: Tensor
    ln1_shift: Tensor
    q: LinearParams
    k: LinearParams
    v: LinearParams
    o: LinearParams
    ln2_gain: Tensor
    ln2_shift: Tensor
    mlp_in: LinearParams
    mlp_out: LinearParams


@dataclass(frozen=True)
class ModelWeights:
    embedding: LinearParams
    pos_table: Tensor
    layers: list[LayerWeights] = field(default_factory=list)
    final_gain: Tensor | None = None
    final_shift: Tensor | None = None


def _dense(rng: SeededRng, d_in: int, d_out: int) -> LinearParams:
    return LinearParams(seeded_normal(rng, (d_in, d_out), INIT_STD), np.zeros(d_out, F32))


def init_model_weights(cfg: ModelConfig, rng: SeededRng) -> ModelWeights:
    """Draw transformer weights from ``rng`` in a fixed order.

    Projections and the position table are N(0, 0.02^2); biases are zero,
    layer-norm gains one and shifts zero.
    """
    d = cfg.d_e
    embedding = _dense(rng, cfg.p_c, d)
    pos_table = seeded_normal(rng, (cfg.window_len + 1, d), INIT_STD)
    layers = []
    for _ in range(cfg.L):
        q, k, v, o = (_dense(rng, d, d) for _ in range(4))
        mlp_in = _dense(rng, d, cfg.d_mlp)
        mlp_out = _dense(rng, cfg.d_mlp, d)
        ones, zeros = np.ones(d, F32), np.zeros(d, F32)
        layers.append(LayerWeights(ones, zeros, q, k, v, o, ones.copy(), zeros.copy(), mlp_in, mlp_out))
    return ModelWeights(embedding, pos_table, layers, np.ones(d, F32), np.zeros(d, F32))


# ----------------------------------------------------------------------------
# forward pass


@dataclass(frozen=True)
class CausalMask:
    """Lower-triangular mask over ``length`` slots: slot t sees 0..t."""

    length: int

    def dense(self) -> np.ndarray:
        """Boolean matrix, True where attention is blocked."""
        return np.triu(np.ones((self.length, self.length), dtype=bool), k=1)


def masked_mha(lw: LayerWeights, x, cfg: ModelConfig, query_rows=None) -> Tensor:
    """Masked multi-head self-attention.

    ``x`` is ``[S, d_e]`` or ``[B, S, d_e]``. With ``query_rows`` (``[r]``,
    or ``[B, r]`` per sequence) only those rows are produced; keys and values
    still cover the whole sequence.
    """
    x = as_tensor(x)
    single = x.ndim == 2
    if single:
        x = x[None]
    B, S, d = x.shape
    if d != cfg.d_e:
        raise ShapeError(f"attention expects d_e={cfg.d_e}, got {x.shape}")
    rows = _query_rows(query_rows, B, S)
    r = rows.shape[1]
    h, dh = cfg.h, cfg.d_head

    def heads(t):
        n = t.shape[1]
        return np.ascontiguousarray(t.reshape(B, n, h, dh).transpose(0, 2, 1, 3).reshape(B * h, n, dh))

    xq = x if query_rows is None else np.take_along_axis(x, rows[:, :, None], axis=1)
    q = heads(linear_apply(lw.q, xq))
    k = heads(linear_apply(lw.k, x))
    v = heads(linear_apply(lw.v, x))
    att = causal_attention(q, k, v, np.repeat(rows, h, axis=0), cfg.attention_scale)
    att = att.reshape(B, h, r, dh).transpose(0, 2, 1, 3).reshape(B, r, d)
    out = linear_apply(lw.o, att)
    return out[0] if single else out


def _query_rows(query_rows, B: int, S: int) -> np.ndarray:
    if query_rows is None:
        return np.broadcast_to(np.arange(S), (B, S))
    rows = np.asarray(query_rows, dtype=np.int64)
    if rows.ndim == 1:
        rows = np.broadcast_to(rows, (B, rows.size))
    if rows.shape[0] != B:
        raise ShapeError(f"query rows {rows.shape} do not match batch {B}")
    return rows


def transformer_layer(lw: LayerWeights, x, cfg: ModelConfig, query_rows=None) -> Tensor:
    """Pre-norm block: ``x + MHA(LN(x))`` then ``+ MLP(LN(.))``."""
    x = as_tensor(x)
    normed = layer_norm(x, lw.ln1_gain, lw.ln1_shift, LN_EPS)
    if query_rows is None:
        x1 = x + masked_mha(lw, normed, cfg)
    else:
        single = x.ndim == 2
        xb = x[None] if single else x
        rows = _query_rows(query_rows, xb.shape[0], xb.shape[1])
        resid = np.take_along_axis(xb, rows[:, :, None], axis=1)
        x1 = resid + masked_mha(lw, normed[None] if single else normed, cfg, rows)
        if single:
            x1 = x1[0]
    hidden = gelu(linear_apply(lw.mlp_in, layer_norm(x1, lw.ln2_gain, lw.ln2_shift, LN_EPS)))
    return x1 + linear_apply(lw.mlp_out, hidden)


def forward_rows(cfg: ModelConfig, weights: ModelWeights, seqs, out_rows=None) -> Tensor:
    """Run the context model on ``[B, S', p_c]`` sequences.

    Returns ``[B, r, d_e]`` features for ``out_rows`` (``[r]`` or ``[B, r]``;
    all rows by default). Only the last layer is restricted to ``out_rows``;
    earlier layers run on the full sequence since later rows read their
    keys and values. Rows past a sequence's real length may hold padding:
    causal masking keeps them out of every earlier row.
    """
    seqs = as_tensor(seqs)
    if seqs.ndim == 2:
        seqs = seqs[None]
    S = seqs.shape[1]
    if S > weights.pos_table.shape[0]:
        raise CapacityError(
            f"sequence of {S} rows exceeds the {weights.pos_table.shape[0]}-row position table;"
            " use the sliding-window forward"
        )
    x = linear_apply(weights.embedding, seqs) + weights.pos_table[:S]
    last = len(weights.layers) - 1
    for n, lw in enumerate(weights.layers):
        x = transformer_layer(lw, x, cfg, out_rows if n == last else None)
    return layer_norm(x, weights.final_gain, weights.final_shift, LN_EPS)


def forward_global(cfg: ModelConfig, weights: ModelWeights, seq) -> Tensor:
    """Full-sequence forward; row t is the context for sequence element t."""
    return forward_rows(cfg, weights, seq)[0]


def window_sequence(layout: SequenceLayout, cfg: ModelConfig, latent, elements: np.ndarray) -> np.ndarray:
    """Start token followed by the segment vectors of ``elements``."""
    seg = np.asarray(latent, dtype=F32).reshape(layout.H, layout.W, layout.n_cs, layout.p_c)
    seq = np.zeros((len(elements) + 1, layout.p_c), F32)
    if len(elements):
        seq[1:] = seg[elements[:, 0], elements[:, 1], elements[:, 2]]
    return seq


def forward_window(cfg: ModelConfig, weights: ModelWeights, latent, target: SeqElement) -> Tensor:
    """Context feature ``[d_e]`` for ``target`` from its sliding window."""
    H, W, _ = np.shape(latent)
    layout = cfg.layout(H, W)
    ctx = context_elements(layout, cfg.R_h, cfg.R_w, cfg.geometry, SeqElement(*target))
    seq = window_sequence(layout, cfg, latent, ctx)
    return forward_rows(cfg, weights, seq, [len(ctx)])[0, 0]
