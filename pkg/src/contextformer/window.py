"""Sliding-window geometry over the spatio-channel latent.

The window only slides spatially; it always spans every channel segment.
Inside the window, an element is visible to a target only if it precedes the
target in the layout's coding order, and the window sequence lists the
visible elements in that order.

Two spatial geometries are supported:

``anchored``
    rows ``[i-R_h+1, i]`` x columns ``[j-R_w+1, j]``. Every visible position
    is up-left of the target, so all windows on one anti-diagonal ``i + j``
    are mutually independent and the decoder wavefront advances one
    diagonal per step.

``centered``
    rows ``[i-R_h+1, i+R_h-1]`` x columns ``[j-R_w+1, j+R_w-1]``. Under cfo
    the rows below the target are never visible; under sfo they hold the
    earlier segments. When the window covers the whole latent it sees
    exactly the global prefix, so windowed and global forwards agree. The
    price is a steeper wavefront: priority ``i*R_w + j``.

Each geometry owns its wavefront rule, see :func:`wavefront_units`.
"""

from __future__ import annotations

import enum
from typing import NamedTuple

import numpy as np

from .layout import CodingOrder, SeqElement, SequenceLayout, slot_of


class WindowGeometry(str, enum.Enum):
    ANCHORED = "anchored"
    CENTERED = "centered"


def spans(geometry: WindowGeometry, R_h: int, R_w: int) -> tuple[int, int, int, int]:
    """Rows above, rows below, columns left and right of the target in the window."""
    if WindowGeometry(geometry) is WindowGeometry.ANCHORED:
        return R_h - 1, 0, R_w - 1, 0
    return R_h - 1, R_h - 1, R_w - 1, R_w - 1


def max_context(geometry: WindowGeometry, R_h: int, R_w: int, n_cs: int, order: CodingOrder = CodingOrder.CFO) -> int:
    """Upper bound on window sequence length, start token included."""
    up, down, left, right = spans(geometry, R_h, R_w)
    if CodingOrder(order) is CodingOrder.CFO or n_cs == 1:
        down = 0  # rows below the target come later in coding order
    return (up + down + 1) * (left + right + 1) * n_cs


def context_elements(
    layout: SequenceLayout, R_h: int, R_w: int, geometry: WindowGeometry, target: SeqElement
) -> np.ndarray:
    """``[n, 3]`` (i, j, k) of the elements visible to ``target``, in coding order."""
    layout.check(target)
    i, j, _ = target
    up, down, left, right = spans(geometry, R_h, R_w)
    rows = np.arange(max(0, i - up), min(layout.H - 1, i + down) + 1)
    cols = np.arange(max(0, j - left), min(layout.W - 1, j + right) + 1)
    ks = np.arange(layout.n_cs)
    ii, jj, kk = np.meshgrid(rows, cols, ks, indexing="ij")
    ii, jj, kk = ii.ravel(), jj.ravel(), kk.ravel()
    slots = _slots(layout, ii, jj, kk)
    keep = slots < slot_of(layout, target)
    order = np.argsort(slots[keep], kind="stable")
    return np.stack([ii[keep], jj[keep], kk[keep]], axis=1)[order]


def _slots(layout: SequenceLayout, i, j, k):
    if layout.order is CodingOrder.CFO:
        return (i * layout.W + j) * layout.n_cs + k
    return k * layout.H * layout.W + i * layout.W + j


class WavefrontUnit(NamedTuple):
    """One decoder window: a spatial position and the segments it decodes, in order."""

    priority: int
    i: int
    j: int
    segments: tuple[int, ...]


def spatial_priority(geometry: WindowGeometry, R_w: int, i: int, j: int) -> int:
    if WindowGeometry(geometry) is WindowGeometry.ANCHORED:
        return i + j
    return i * R_w + j


def wavefront_units(layout: SequenceLayout, R_w: int, geometry: WindowGeometry) -> list[WavefrontUnit]:
    """Decoder windows with their wavefront priority.

    A unit decodes all segments of its position unless the geometry lets an
    earlier segment see positions after the target (centered + sfo), in
    which case every segment is its own unit and segments form outer passes.
    """
    geometry = WindowGeometry(geometry)
    per_segment = (
        geometry is WindowGeometry.CENTERED and layout.order is CodingOrder.SFO and layout.n_cs > 1
    )
    units = []
    if not per_segment:
        for i in range(layout.H):
            for j in range(layout.W):
                p = spatial_priority(geometry, R_w, i, j)
                units.append(WavefrontUnit(p, i, j, tuple(range(layout.n_cs))))
        return units
    span = spatial_priority(geometry, R_w, layout.H - 1, layout.W - 1) + 1
    for k in range(layout.n_cs):
        for i in range(layout.H):
            for j in range(layout.W):
                p = k * span + spatial_priority(geometry, R_w, i, j)
                units.append(WavefrontUnit(p, i, j, (k,)))
    return units

