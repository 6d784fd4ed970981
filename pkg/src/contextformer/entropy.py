"""Gaussian-mixture entropy parameters, discretized likelihoods and rates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .model import ModelConfig, _dense
from .tensor import F32, LinearParams, SeededRng, Tensor, gelu, linear_apply, seeded_normal, softmax_lastdim

SIGMA_MIN = 1e-3
SIGMA_MAX = 64.0
N_GROUPS = 3  # weight, mean, scale


class NumericError(ArithmeticError):
    pass


class ZeroProbabilityError(ArithmeticError):
    pass


def hyper_features(header_seed: int, H: int, W: int, M: int) -> Tensor:
    """Stand-in for the hyper-decoder output: ``[H, W, 2M]`` seeded normals.

    Seed 0 is reserved and yields all zeros (context-only entropy model).
    """
    if header_seed == 0:
        return np.zeros((H, W, 2 * M), F32)
    return seeded_normal(SeededRng(header_seed), (H, W, 2 * M), 1.0)


def head_widths(cfg: ModelConfig) -> tuple[int, int, int, int]:
    """(K1, hidden1, hidden2, K2); hidden widths are floor-divided."""
    k1 = 2 * cfg.M + cfg.d_e
    k2 = N_GROUPS * cfg.k_m * cfg.p_c
    return k1, (2 * k1 + k2) // 3, (k1 + 2 * k2) // 3, k2


@dataclass(frozen=True)
class EntropyHeadWeights:
    l1: LinearParams
    l2: LinearParams
    l3: LinearParams


def init_head_weights(cfg: ModelConfig, rng: SeededRng) -> EntropyHeadWeights:
    k1, a, b, k2 = head_widths(cfg)
    return EntropyHeadWeights(_dense(rng, k1, a), _dense(rng, a, b), _dense(rng, b, k2))


@dataclass
class EntropyParams:
    """Mixture parameters, each ``[..., k_m]`` over latent elements."""

    weights: np.ndarray
    means: np.ndarray
    scales: np.ndarray

    def __getitem__(self, idx) -> "EntropyParams":
        return EntropyParams(self.weights[idx], self.means[idx], self.scales[idx])

    def identical(self, other: "EntropyParams") -> bool:
        return all(
            a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in zip(
                (self.weights, self.means, self.scales), (other.weights, other.means, other.scales)
            )
        )


def entropy_head(cfg: ModelConfig, head: EntropyHeadWeights, ctx, hyper) -> EntropyParams:
    """Map context ``[..., d_e]`` and hyper ``[..., 2M]`` rows to mixtures.

    Output is ``[..., p_c, k_m]`` per parameter: the ``K2`` raw values are laid
    out channel-major as ``(p_c, 3, k_m)`` with groups (weight logits, means,
    log-scales).
    """
    x = np.concatenate([np.asarray(ctx, F32), np.asarray(hyper, F32)], axis=-1)
    lead = x.shape[:-1]
    x = x.reshape(-1, x.shape[-1])
    for n, layer in enumerate((head.l1, head.l2, head.l3), start=1):
        x = linear_apply(layer, x)
        if not np.isfinite(x).all():
            raise NumericError(f"non-finite activation in entropy head layer {n}")
        if n < 3:
            x = gelu(x)
    raw = x.reshape(*lead, cfg.p_c, N_GROUPS, cfg.k_m)
    w = softmax_lastdim(raw[..., 0, :])
    mu = np.ascontiguousarray(raw[..., 1, :])
    sigma = np.exp(raw[..., 2, :].astype(np.float64)).astype(F32)
    sigma = np.clip(sigma, F32(SIGMA_MIN), F32(SIGMA_MAX))
    return EntropyParams(w, mu, sigma)


def _component_bins(mu, sigma, B):
    """``[..., k_m, 2B+1]`` per-component bin masses with folded tails."""
    mu = np.asarray(mu, np.float64)[..., None]
    sigma = np.asarray(sigma, np.float64)[..., None]
    edges = np.arange(-B, B + 1, dtype=np.float64)
    lo = (edges - 0.5 - mu) / sigma
    hi = (edges + 0.5 - mu) / sigma
    lo[..., 0] = -np.inf
    hi[..., -1] = np.inf
    # difference on whichever side of the mean keeps both terms small
    upper = lo > 0
    return np.where(upper, ndtr(-lo) - ndtr(-hi), ndtr(hi) - ndtr(lo))


def gmm_pmf_table(params: EntropyParams, B: int) -> np.ndarray:
    """``[..., 2B+1]`` probabilities of symbols ``-B..B``."""
    bins = _component_bins(params.means, params.scales, B)
    w = np.asarray(params.weights, np.float64)
    out = w[..., 0, None] * bins[..., 0, :]
    for c in range(1, w.shape[-1]):
        out = out + w[..., c, None] * bins[..., c, :]
    return out


def gmm_pmf(params: EntropyParams, symbol: int, B: int = 32) -> float:
    """Probability of one integer ``symbol`` under a single element's mixture."""
    if abs(symbol) > B:
        raise ValueError(f"symbol {symbol} outside [-{B}, {B}]")
    return float(gmm_pmf_table(params, B)[..., symbol + B])


def estimate_rate(params: EntropyParams, symbols, B: int = 32) -> tuple[float, float]:
    """Ideal code length ``sum(-log2 p)`` in bits, and bits per element."""
    symbols = np.asarray(symbols, dtype=np.int64)
    if np.abs(symbols).max(initial=0) > B:
        raise ValueError(f"symbols exceed bound {B}")
    table = gmm_pmf_table(params, B)
    p = np.take_along_axis(table, (symbols + B)[..., None], axis=-1)[..., 0]
    if (p <= 0).any():
        where = tuple(int(v) for v in np.argwhere(p <= 0)[0])
        raise ZeroProbabilityError(f"zero probability for symbol at element {where}")
    bits = float(-np.log2(p).sum())
    return bits, bits / max(symbols.size, 1)


def quantize(latent_real, B: int = 32) -> np.ndarray:
    """Round half away from zero and clamp to ``[-B, B]``."""
    x = np.asarray(latent_real, dtype=np.float64)
    if not np.isfinite(x).all():
        raise ValueError("latent contains non-finite values")
    q = np.sign(x) * np.floor(np.abs(x) + 0.5)
    return np.clip(q, -B, B).astype(np.int16)
