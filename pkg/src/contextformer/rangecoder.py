"""Multi-symbol range coder over 16-bit quantized CDFs.

Byte format
-----------
State: ``low`` (33-bit, carry in bit 32) and ``range`` (32-bit), starting at
``low = 0``, ``range = 0xFFFFFFFF``. To code a symbol with cumulative
frequency ``cum`` and frequency ``freq`` out of ``2**16``::

    r = range >> 16
    low += r * cum
    range = r * freq              (range - r * cum for the last symbol)

then, while ``range < 2**24``: ``range <<= 8`` and shift one byte out of
``low``. Shifting uses a one-byte cache plus a count of pending 0xFF bytes
so a carry out of bit 32 can ripple into bytes not yet written. Finishing
shifts five more times. The very first cached byte is always zero and is
never written, so an empty stream is ``00 00 00 00``.

The decoder reads four bytes into ``code`` and mirrors the arithmetic on
``code - low``.
"""

from __future__ import annotations

from bisect import bisect_right
from typing import Iterable, Sequence

import numpy as np

PRECISION = 16
TOTAL = 1 << PRECISION
TOP = 1 << 24
MASK32 = 0xFFFFFFFF


class CorruptStreamError(ValueError):
    pass


def build_cdf(pmf) -> np.ndarray:
    """Quantize pmf rows to integer frequencies summing to ``2**16``.

    Every symbol gets at least 1. Leftover counts go to the largest
    remainders, overshoot (from the floor) is taken from the smallest
    remainders among symbols above 1; ties favour the lower symbol. Returns
    the cumulative table ``[..., n + 1]`` starting at 0.
    """
    p = np.asarray(pmf, dtype=np.float64)
    if np.isnan(p).any():
        raise ValueError("pmf contains NaN")
    lead = p.shape[:-1]
    p = p.reshape(-1, p.shape[-1])
    n = p.shape[1]
    if n > TOTAL:
        raise ValueError("more symbols than frequency slots")
    if (p < 0).any() or (np.abs(p.sum(axis=1) - 1.0) > 1e-4).any():
        raise ValueError("pmf rows must be non-negative and sum to 1")
    scaled = p * TOTAL
    freq = np.floor(scaled).astype(np.int64)
    rem = scaled - freq
    freq = np.maximum(freq, 1)
    deficit = TOTAL - freq.sum(axis=1)

    rank = np.empty_like(freq)
    order = np.argsort(-rem, axis=1, kind="stable")
    np.put_along_axis(rank, order, np.arange(n)[None].repeat(len(p), 0), axis=1)
    freq += (rank < deficit[:, None]).astype(np.int64)

    over = np.flatnonzero(deficit < 0)
    for r in over:
        need = -int(deficit[r])
        while need:
            cand = np.flatnonzero(freq[r] > 1)
            cand = cand[np.argsort(rem[r, cand], kind="stable")][:need]
            freq[r, cand] -= 1
            need -= len(cand)

    cdf = np.zeros((len(p), n + 1), dtype=np.int64)
    np.cumsum(freq, axis=1, out=cdf[:, 1:])
    return cdf.reshape(*lead, n + 1)


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = MASK32
        self.cache = 0
        self.pending = 1  # the cache byte plus any run of 0xFF bytes behind it
        self.out = bytearray()
        self._skip_first = True

    def _emit(self, b: int):
        if self._skip_first:
            self._skip_first = False
            return
        self.out.append(b)

    def _shift_low(self):
        if self.low < 0xFF000000 or self.low > MASK32:
            carry = self.low >> 32
            byte = self.cache
            while self.pending:
                self._emit((byte + carry) & 0xFF)
                byte = 0xFF
                self.pending -= 1
            self.cache = (self.low >> 24) & 0xFF
        self.pending += 1
        self.low = (self.low << 8) & MASK32

    def encode(self, cum: int, freq: int):
        if not (0 <= cum and freq >= 1 and cum + freq <= TOTAL):
            raise ValueError(f"invalid interval [{cum}, {cum + freq}) of {TOTAL}")
        r = self.range >> PRECISION
        self.low += r * cum
        if cum + freq < TOTAL:
            self.range = r * freq
        else:
            self.range -= r * cum
        while self.range < TOP:
            self.range <<= 8
            self._shift_low()

    def finish(self) -> bytes:
        for _ in range(5):
            self._shift_low()
        return bytes(self.out)


class RangeDecoder:
    def __init__(self, data: bytes):
        self.data = memoryview(bytes(data))
        self.pos = 0
        self.range = MASK32
        self.code = 0
        for _ in range(4):
            self.code = (self.code << 8) | self._byte()

    def _byte(self) -> int:
        if self.pos >= len(self.data):
            raise CorruptStreamError("range decoder ran past the end of the payload")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def decode(self, cdf: Sequence[int]) -> int:
        """Return the index of the decoded symbol in ``cdf``."""
        total = cdf[-1]
        if total != TOTAL:
            raise ValueError(f"table total {total} is not {TOTAL}")
        r = self.range >> PRECISION
        v = min(self.code // r, total - 1)
        s = bisect_right(cdf, v) - 1
        cum, nxt = cdf[s], cdf[s + 1]
        self.code -= r * cum
        if nxt < total:
            self.range = r * (nxt - cum)
        else:
            self.range -= r * cum
        if self.code < 0 or self.code >= self.range:
            raise CorruptStreamError("decoder state left the coding interval")
        while self.range < TOP:
            self.range <<= 8
            self.code = ((self.code << 8) | self._byte()) & MASK32
        return s

    def exhausted(self) -> bool:
        return self.pos == len(self.data)


def encode_symbols(symbols: Iterable[int], cdfs, offset: int = 0) -> bytes:
    """Code ``symbols[n] + offset`` under ``cdfs[n]``; tables in coding order."""
    enc = RangeEncoder()
    cdfs = np.asarray(cdfs)
    for n, s in enumerate(symbols):
        idx = int(s) + offset
        row = cdfs[n]
        if not 0 <= idx < len(row) - 1:
            raise ValueError(f"symbol {s} at position {n} outside its table")
        if row[-1] != TOTAL:
            raise ValueError(f"table {n} totals {row[-1]}, expected {TOTAL}")
        lo, hi = int(row[idx]), int(row[idx + 1])
        enc.encode(lo, hi - lo)
    return enc.finish()


def decode_symbols(data: bytes, cdfs, offset: int = 0) -> np.ndarray:
    dec = RangeDecoder(data)
    cdfs = np.asarray(cdfs)
    out = np.empty(len(cdfs), dtype=np.int64)
    for n in range(len(cdfs)):
        out[n] = dec.decode(cdfs[n].tolist()) - offset
    return out


def ideal_bits(symbols, cdfs, offset: int = 0) -> float:
    """Sum of ``-log2(freq / 2**16)``, the information content under the tables."""
    cdfs = np.asarray(cdfs)
    idx = np.asarray(symbols, dtype=np.int64) + offset
    rows = np.arange(len(idx))
    freq = cdfs[rows, idx + 1] - cdfs[rows, idx]
    return float(-np.log2(freq / cdfs[rows, -1]).sum())
