"""Deterministic float32 kernels for the Contextformer forward pass.

Every reduction runs in a fixed ascending order with one rounding per
multiply and per add (no fused multiply-add), so a row of any output depends
only on the corresponding input row and never on batch shape. The scheduler
equivalence tests rely on this: batching, padding or splitting windows must
not change a single bit.

Transcendentals (exp, erf) are evaluated in float64 and rounded once to
float32. GELU uses the exact erf form.

Tensors are plain ``numpy.ndarray`` objects of dtype float32.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

Tensor = np.ndarray

F32 = np.float32


class ShapeError(ValueError):
    pass


class DegenerateRowError(ValueError):
    pass


def as_tensor(x) -> Tensor:
    t = np.ascontiguousarray(x, dtype=F32)
    if t.ndim == 0:
        t = t.reshape(1)
    if any(d < 1 for d in t.shape):
        raise ShapeError(f"tensor dimensions must be >= 1, got {t.shape}")
    return t


# ----------------------------------------------------------------------------
# compiled kernels


@njit(cache=True, nogil=True)
def _bmm_kernel(a, b):
    # a: [B, m, k]; b: [B, k, n] or [1, k, n] (shared right operand)
    nb, m, k = a.shape
    n = b.shape[2]
    shared = b.shape[0] == 1
    out = np.zeros((nb, m, n), np.float32)
    for bi in range(nb):
        bsel = 0 if shared else bi
        for i in range(m):
            for t in range(k):
                av = a[bi, i, t]
                for j in range(n):
                    out[bi, i, j] = out[bi, i, j] + av * b[bsel, t, j]
    return out


@njit(cache=True, nogil=True)
def _softmax_kernel(x, mask, period):
    # x: [R, S]; mask: [P, S] bool, row r uses mask[r % period]
    rows, s = x.shape
    out = np.zeros((rows, s), np.float32)
    for r in range(rows):
        mrow = r % period
        m = np.float32(-np.inf)
        any_open = False
        for t in range(s):
            if not mask[mrow, t]:
                any_open = True
                if x[r, t] > m:
                    m = x[r, t]
        if not any_open:
            return out, r
        total = np.float32(0.0)
        for t in range(s):
            if not mask[mrow, t]:
                e = np.float32(math.exp(np.float64(x[r, t] - m)))
                out[r, t] = e
                total = total + e
        for t in range(s):
            out[r, t] = out[r, t] / total
    return out, -1


@njit(cache=True, nogil=True)
def _causal_softmax_kernel(x, s):
    # x: [R, S] with row r of a [S, S] block seeing columns 0..r % s
    rows = x.shape[0]
    out = np.zeros((rows, s), np.float32)
    for r in range(rows):
        last = r % s
        m = x[r, 0]
        for t in range(1, last + 1):
            if x[r, t] > m:
                m = x[r, t]
        total = np.float32(0.0)
        for t in range(last + 1):
            e = np.float32(math.exp(np.float64(x[r, t] - m)))
            out[r, t] = e
            total = total + e
        for t in range(last + 1):
            out[r, t] = out[r, t] / total
    return out


@njit(cache=True, nogil=True)
def _attend_kernel(q, kt, v, limits, scale):
    # q: [G, r, dh]; kt: [G, dh, S]; v: [G, S, dh]; query i of group g sees keys 0..limits[g, i]
    g_n, r_n, dh = q.shape
    out = np.zeros((g_n, r_n, dh), np.float32)
    scores = np.empty(kt.shape[2], np.float32)
    for g in range(g_n):
        for i in range(r_n):
            last = limits[g, i]
            for t in range(last + 1):
                scores[t] = 0.0
            for u in range(dh):
                qv = q[g, i, u]
                for t in range(last + 1):
                    scores[t] = scores[t] + qv * kt[g, u, t]
            m = np.float32(-np.inf)
            for t in range(last + 1):
                scores[t] = scores[t] * scale
                if scores[t] > m:
                    m = scores[t]
            total = np.float32(0.0)
            for t in range(last + 1):
                e = np.float32(math.exp(np.float64(scores[t] - m)))
                scores[t] = e
                total = total + e
            for t in range(last + 1):
                p = scores[t] / total
                for u in range(dh):
                    out[g, i, u] = out[g, i, u] + p * v[g, t, u]
    return out


@njit(cache=True, nogil=True)
def _layer_norm_kernel(x, gain, shift, eps):
    rows, d = x.shape
    out = np.empty((rows, d), np.float32)
    inv_d = np.float32(d)
    for r in range(rows):
        acc = np.float32(0.0)
        for t in range(d):
            acc = acc + x[r, t]
        mean = acc / inv_d
        acc = np.float32(0.0)
        for t in range(d):
            dev = x[r, t] - mean
            acc = acc + dev * dev
        var = acc / inv_d
        denom = np.float32(math.sqrt(np.float64(var + eps)))
        for t in range(d):
            out[r, t] = (x[r, t] - mean) / denom * gain[t] + shift[t]
    return out


@njit(cache=True, nogil=True)
def _gelu_kernel(x):
    flat = x.ravel()
    out = np.empty(flat.size, np.float32)
    for i in range(flat.size):
        v = np.float64(flat[i])
        out[i] = np.float32(0.5 * v * (1.0 + math.erf(v / math.sqrt(2.0))))
    return out.reshape(x.shape)


# ----------------------------------------------------------------------------
# public ops


def matmul(a, b) -> Tensor:
    """Matrix product with ascending-index accumulation.

    Accepts ``[m, k] @ [k, n]`` or batched ``[..., m, k] @ [k, n]`` and
    ``[B, m, k] @ [B, k, n]``.
    """
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim < 2 or b.ndim not in (2, 3):
        raise ShapeError(f"matmul needs matrices, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    if b.ndim == 2:
        lead = a.shape[:-1]
        out = _bmm_kernel(a.reshape(1, -1, a.shape[-1]), b.reshape(1, *b.shape))
        return out.reshape(*lead, b.shape[1])
    if a.ndim != 3 or a.shape[0] != b.shape[0]:
        raise ShapeError(f"batched matmul batch sizes differ: {a.shape} @ {b.shape}")
    return _bmm_kernel(a, b)


def softmax_lastdim(x, masked_positions=None) -> Tensor:
    """Softmax over the last axis; masked positions get exactly zero.

    ``masked_positions`` is either an iterable of last-axis indices masked in
    every row, or a boolean array broadcastable to ``x`` (True = masked).
    """
    x = as_tensor(x)
    s = x.shape[-1]
    rows = x.reshape(-1, s)
    if masked_positions is None:
        mask = np.zeros((1, s), dtype=np.bool_)
    else:
        m = np.asarray(masked_positions)
        if m.dtype == np.bool_:
            mask = np.ascontiguousarray(np.broadcast_to(m, x.shape).reshape(-1, s))
        else:
            mask = np.zeros((1, s), dtype=np.bool_)
            mask[0, m.astype(np.int64).ravel()] = True
    out, bad = _softmax_kernel(rows, mask, mask.shape[0])
    if bad >= 0:
        raise DegenerateRowError(f"row {bad} has every position masked")
    return out.reshape(x.shape)


def causal_softmax(scores) -> Tensor:
    """Softmax of ``[..., S, S]`` scores where row t sees columns 0..t."""
    s = scores.shape[-1]
    out = _causal_softmax_kernel(np.ascontiguousarray(scores, dtype=F32).reshape(-1, s), s)
    return out.reshape(scores.shape)


def causal_attention(q, k, v, query_rows, scale) -> Tensor:
    """Masked scaled dot-product attention for grouped heads.

    ``q`` is ``[G, r, dh]`` holding the queries at sequence rows
    ``query_rows`` (``[r]`` shared, or ``[G, r]``); ``k`` and ``v`` are
    ``[G, S, dh]``. A query at row ``t`` attends to keys ``0..t``; later keys
    count as minus infinity before the softmax and contribute nothing.
    """
    g = q.shape[0]
    kt = np.ascontiguousarray(np.swapaxes(k, 1, 2), dtype=F32)
    limits = np.asarray(query_rows, dtype=np.int64)
    if limits.ndim == 1:
        limits = np.broadcast_to(limits, (g, limits.size))
    limits = np.ascontiguousarray(limits)
    if limits.shape != q.shape[:2]:
        raise ShapeError(f"query rows {limits.shape} do not match queries {q.shape}")
    if limits.size and (limits.min() < 0 or limits.max() >= k.shape[1]):
        raise ShapeError(f"query rows outside sequence of length {k.shape[1]}")
    return _attend_kernel(
        np.ascontiguousarray(q, dtype=F32), kt, np.ascontiguousarray(v, dtype=F32), limits, F32(scale)
    )


def layer_norm(x, gain, shift, eps: float = 1e-5) -> Tensor:
    x = as_tensor(x)
    gain = as_tensor(gain)
    shift = as_tensor(shift)
    d = x.shape[-1]
    if gain.shape != (d,) or shift.shape != (d,):
        raise ShapeError(f"layer_norm params {gain.shape}/{shift.shape} do not match last dim {d}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    out = _layer_norm_kernel(x.reshape(-1, d), gain, shift, F32(eps))
    return out.reshape(x.shape)


def gelu(x) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with the erf-based Gaussian CDF."""
    return _gelu_kernel(as_tensor(x))


@dataclass(frozen=True)
class LinearParams:
    weight: Tensor  # [in_dim, out_dim]
    bias: Tensor  # [out_dim]

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ShapeError(
                f"linear weight {self.weight.shape} and bias {self.bias.shape} disagree"
            )

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]


def linear_apply(p: LinearParams, x) -> Tensor:
    x = as_tensor(x)
    if x.shape[-1] != p.in_dim:
        raise ShapeError(f"linear expects trailing dim {p.in_dim}, got shape {x.shape}")
    return matmul(x, p.weight) + p.bias


# ----------------------------------------------------------------------------
# seeded parameters


class SeededRng:
    """PCG64 raw 64-bit stream turned into normals by Box-Muller.

    The raw PCG64 output is stable across numpy releases; the normal transform
    is done here so it does not depend on numpy's sampling code. Each pair of
    raw words (u1, u2) gives uniforms ``(w >> 11) * 2**-53`` and
    ``z = sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`` (one normal per pair).
    """

    algorithm = "pcg64-boxmuller-v1"

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._bitgen = np.random.PCG64(self.seed)

    def raw(self, n: int) -> np.ndarray:
        return self._bitgen.random_raw(n)

    def uniform(self, n: int) -> np.ndarray:
        return (self.raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self, n: int) -> np.ndarray:
        u = self.uniform(2 * n).reshape(n, 2)
        return np.sqrt(-2.0 * np.log1p(-u[:, 0])) * np.cos(2.0 * np.pi * u[:, 1])


def seeded_normal(rng: SeededRng, shape, scale: float) -> Tensor:
    if scale <= 0:
        raise ValueError("scale must be positive")
    shape = tuple(int(s) for s in np.atleast_1d(shape))
    n = int(np.prod(shape))
    return (rng.normal(n) * scale).astype(F32).reshape(shape)
