"""Bijection between latent coordinates and autoregressive sequence slots.

A latent of shape ``H x W x C`` is cut into ``N_cs`` channel segments of
width ``p_c = C / N_cs``; every (row, column, segment) triple is one sequence
element. Spatial positions are scanned row-major. Two coding orders exist:

* channel-first (cfo): all segments of one position, then the next position;
* spatial-first (sfo): segment 0 over the whole raster, then segment 1, ...

Slot 0 of a model input sequence is a zero start token, so element ``s``
lives in row ``s + 1``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

from .tensor import ShapeError


class CodingOrder(str, enum.Enum):
    SFO = "sfo"
    CFO = "cfo"


class SeqElement(NamedTuple):
    i: int
    j: int
    k: int


@dataclass(frozen=True)
class SequenceLayout:
    H: int
    W: int
    C: int
    n_cs: int
    order: CodingOrder = CodingOrder.CFO

    def __post_init__(self):
        if min(self.H, self.W, self.C, self.n_cs) < 1:
            raise ValueError(f"layout dimensions must be positive: {self}")
        if self.C % self.n_cs:
            raise ValueError(f"{self.n_cs} channel segments do not divide C={self.C}")
        object.__setattr__(self, "order", CodingOrder(self.order))

    @property
    def p_c(self) -> int:
        return self.C // self.n_cs

    @property
    def S(self) -> int:
        return self.H * self.W * self.n_cs

    def check(self, e: SeqElement) -> None:
        i, j, k = e
        if not (0 <= i < self.H and 0 <= j < self.W and 0 <= k < self.n_cs):
            raise IndexError(f"element {tuple(e)} outside {self.H}x{self.W}x{self.n_cs}")

    def elements(self) -> Iterator[SeqElement]:
        """All elements in coding order."""
        for s in range(self.S):
            yield coords_of(self, s)


def slot_of(layout: SequenceLayout, e: SeqElement) -> int:
    layout.check(e)
    i, j, k = e
    if layout.order is CodingOrder.CFO:
        return (i * layout.W + j) * layout.n_cs + k
    return k * layout.H * layout.W + i * layout.W + j


def coords_of(layout: SequenceLayout, slot: int) -> SeqElement:
    if not 0 <= slot < layout.S:
        raise IndexError(f"slot {slot} outside [0, {layout.S})")
    if layout.order is CodingOrder.CFO:
        pos, k = divmod(slot, layout.n_cs)
    else:
        k, pos = divmod(slot, layout.H * layout.W)
    i, j = divmod(pos, layout.W)
    return SeqElement(i, j, k)


def element_table(layout: SequenceLayout) -> np.ndarray:
    """``[S, 3]`` int array; row ``s`` holds (i, j, k) of slot ``s``."""
    s = np.arange(layout.S)
    if layout.order is CodingOrder.CFO:
        pos, k = np.divmod(s, layout.n_cs)
    else:
        k, pos = np.divmod(s, layout.H * layout.W)
    i, j = np.divmod(pos, layout.W)
    return np.stack([i, j, k], axis=1)


def segments(layout: SequenceLayout, latent: np.ndarray) -> np.ndarray:
    """View the latent as ``[H, W, N_cs, p_c]``."""
    if latent.shape != (layout.H, layout.W, layout.C):
        raise ShapeError(
            f"latent shape {latent.shape} does not match layout {layout.H}x{layout.W}x{layout.C}"
        )
    return latent.reshape(layout.H, layout.W, layout.n_cs, layout.p_c)


def to_sequence(layout: SequenceLayout, latent) -> np.ndarray:
    latent = np.asarray(latent, dtype=np.float32)
    seg = segments(layout, latent)
    tab = element_table(layout)
    seq = np.zeros((layout.S + 1, layout.p_c), dtype=np.float32)
    seq[1:] = seg[tab[:, 0], tab[:, 1], tab[:, 2]]
    return seq


def from_sequence(layout: SequenceLayout, seq) -> np.ndarray:
    seq = np.asarray(seq, dtype=np.float32)
    if seq.shape != (layout.S + 1, layout.p_c):
        raise ShapeError(f"sequence shape {seq.shape} != {(layout.S + 1, layout.p_c)}")
    tab = element_table(layout)
    out = np.zeros((layout.H, layout.W, layout.n_cs, layout.p_c), dtype=np.float32)
    out[tab[:, 0], tab[:, 1], tab[:, 2]] = seq[1:]
    return out.reshape(layout.H, layout.W, layout.C)
