"""Window enumeration, priorities and batched execution of the context model.

Encoder modes (all elements known up front):

* ``ds``       one window per element, run one at a time in coding order;
* ``pb``       every window padded to the longest one, one masked batch;
* ``bds``      windows grouped by context length, each group one batch;
* ``bds-scs``  one window per spatial position whose last rows carry the
               features of every channel segment there; grouped by length.

Decoder mode:

* ``wavefront`` windows with equal wavefront priority are independent and
  run as one batch; inside a window segments are decoded one after another.

All modes produce bit-identical features because every kernel computes each
output row from its own inputs in a fixed order.
"""

from __future__ import annotations

import enum
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .layout import CodingOrder, SeqElement, SequenceLayout, element_table, slot_of
from .model import ModelConfig, ModelWeights, forward_rows
from .tensor import F32
from .window import context_elements, spans, wavefront_units


class ScheduleMode(str, enum.Enum):
    DS = "ds"
    PAD_BATCH = "pb"
    BDS = "bds"
    BDS_SCS = "bds-scs"
    WAVEFRONT = "wavefront"


ENCODER_MODES = (ScheduleMode.DS, ScheduleMode.PAD_BATCH, ScheduleMode.BDS, ScheduleMode.BDS_SCS)


class ModeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class WindowSpec:
    """One forward pass over a window sequence.

    ``elements`` is the window content (coding order) seen by the last
    target; the sequence fed to the model is the start token followed by
    these elements. Target ``n`` reads its feature from sequence row
    ``rows[n]``, and only needs ``elements[:rows[n]]``.
    """

    targets: tuple[SeqElement, ...]
    elements: np.ndarray
    rows: tuple[int, ...]
    slot: int
    wave: int

    @property
    def target(self) -> SeqElement:
        return self.targets[-1]

    @property
    def context_length(self) -> int:
        """Sequence length of the forward pass (start token included)."""
        return len(self.elements) + 1


@dataclass
class Schedule:
    mode: ScheduleMode
    groups: list[list[WindowSpec]] = field(default_factory=list)

    @property
    def windows(self) -> int:
        return sum(len(g) for g in self.groups)

    @property
    def max_group(self) -> int:
        return max((len(g) for g in self.groups), default=0)

    def __iter__(self) -> Iterator[list[WindowSpec]]:
        return iter(self.groups)


def _window(layout, cfg, targets, wave) -> WindowSpec:
    ctx = [context_elements(layout, cfg.R_h, cfg.R_w, cfg.geometry, t) for t in targets]
    elements = ctx[-1]
    for n, c in enumerate(ctx[:-1]):
        # later segments at one position see a superset that starts with this window
        assert np.array_equal(elements[: len(c)], c), "window contents are not nested"
    rows = tuple(len(c) for c in ctx)
    return WindowSpec(tuple(targets), elements, rows, slot_of(layout, targets[0]), wave)


def enumerate_windows(layout: SequenceLayout, cfg: ModelConfig, mode: ScheduleMode, phase: str = "encode") -> list[WindowSpec]:
    mode = ScheduleMode(mode)
    if phase == "decode" and mode is not ScheduleMode.WAVEFRONT:
        raise ModeError(f"{mode.value} needs the whole latent and cannot be used for decoding")
    units = wavefront_units(layout, cfg.R_w, cfg.geometry)
    if mode is ScheduleMode.WAVEFRONT:
        return [
            _window(layout, cfg, [SeqElement(u.i, u.j, k) for k in u.segments], u.priority)
            for u in units
        ]
    wave = {}
    for u in units:
        for k in u.segments:
            wave[(u.i, u.j, k)] = u.priority
    if mode is ScheduleMode.BDS_SCS:
        return [
            _window(layout, cfg, [SeqElement(i, j, k) for k in range(layout.n_cs)], wave[(i, j, layout.n_cs - 1)])
            for i in range(layout.H)
            for j in range(layout.W)
        ]
    return [_window(layout, cfg, [e], wave[tuple(e)]) for e in layout.elements()]


def priority_of(mode: ScheduleMode, window: WindowSpec) -> int:
    mode = ScheduleMode(mode)
    if mode is ScheduleMode.DS:
        return window.slot
    if mode is ScheduleMode.PAD_BATCH:
        return 0
    if mode is ScheduleMode.WAVEFRONT:
        return window.wave
    return window.context_length


def build_schedule(windows: list[WindowSpec], mode: ScheduleMode) -> Schedule:
    mode = ScheduleMode(mode)
    buckets: dict[int, list[WindowSpec]] = {}
    for w in windows:
        buckets.setdefault(priority_of(mode, w), []).append(w)
    groups = [sorted(buckets[p], key=lambda w: w.slot) for p in sorted(buckets)]
    return Schedule(mode, groups)


def make_schedule(layout: SequenceLayout, cfg: ModelConfig, mode: ScheduleMode, phase: str = "encode") -> Schedule:
    return build_schedule(enumerate_windows(layout, cfg, mode, phase), mode)


# ----------------------------------------------------------------------------
# dependency oracle


@dataclass
class CausalityReport:
    ok: bool
    windows_checked: int
    violation: str | None = None

    def __bool__(self) -> bool:
        return self.ok


def _visible(layout: SequenceLayout, cfg: ModelConfig, t) -> np.ndarray:
    """Elements a target may read, found by scanning the whole latent."""
    i, j, _ = t
    up, down, left, right = spans(cfg.geometry, cfg.R_h, cfg.R_w)
    tab = element_table(layout)  # slot order
    t_slot = slot_of(layout, SeqElement(*t))
    ok = (
        (np.arange(layout.S) < t_slot)
        & (tab[:, 0] >= i - up)
        & (tab[:, 0] <= i + down)
        & (tab[:, 1] >= j - left)
        & (tab[:, 1] <= j + right)
    )
    return tab[ok]


def verify_causality(schedule: Schedule, layout: SequenceLayout, cfg: ModelConfig) -> CausalityReport:
    """Brute-force check that no window reads an element it may not see.

    Every mode: each target appears once, every context element precedes its
    target in coding order and lies in the target's window. Wavefront also
    replays decoding: a context element must have been decoded by an earlier
    group or by an earlier step of the same window, and windows in one group
    must not share targets.
    """
    wavefront = schedule.mode is ScheduleMode.WAVEFRONT
    targeted = np.zeros(layout.S, dtype=bool)
    decoded = np.zeros(layout.S, dtype=bool)
    checked = 0
    for g, group in enumerate(schedule.groups):
        in_group = []
        for w in group:
            checked += 1
            own = np.zeros(layout.S, dtype=bool)
            for n, t in enumerate(w.targets):
                t = tuple(int(v) for v in t)
                t_slot = slot_of(layout, SeqElement(*t))
                if targeted[t_slot]:
                    return CausalityReport(False, checked, f"group {g}: element {t} is targeted twice")
                targeted[t_slot] = True
                in_group.append(t_slot)
                ctx = w.elements[: w.rows[n]]
                if not np.array_equal(ctx, _visible(layout, cfg, t)) or w.rows[n] + 1 > cfg.window_len:
                    return CausalityReport(False, checked, f"group {g}: window of {t} has the wrong context")
                slots = _slot_array(layout, ctx)
                late = slots >= t_slot
                if late.any():
                    e = tuple(int(v) for v in ctx[np.argmax(late)])
                    return CausalityReport(False, checked, f"group {g}: {t} reads later element {e}")
                if wavefront:
                    missing = ~(decoded[slots] | own[slots])
                    if missing.any():
                        e = tuple(int(v) for v in ctx[np.argmax(missing)])
                        return CausalityReport(False, checked, f"group {g}: {t} reads {e} before it is decoded")
                own[t_slot] = True
        decoded[in_group] = True
    if not targeted.all():
        return CausalityReport(False, checked, f"{int((~targeted).sum())} elements never targeted")
    return CausalityReport(True, checked)


def _slot_array(layout: SequenceLayout, elements: np.ndarray) -> np.ndarray:
    """Slots of ``[n, 3]`` elements, computed from the coding-order rule."""
    i, j, k = elements[:, 0], elements[:, 1], elements[:, 2]
    if layout.order is CodingOrder.CFO:
        return (i * layout.W + j) * layout.n_cs + k
    return k * layout.H * layout.W + i * layout.W + j


# ----------------------------------------------------------------------------
# execution


def run_windows(
    cfg: ModelConfig,
    weights: ModelWeights,
    seg: np.ndarray,
    windows: list[WindowSpec],
    step: int | None = None,
    pad: bool = False,
    pad_to: int = 0,
) -> np.ndarray:
    """One batched forward over ``windows``; returns ``[len, r, d_e]``.

    ``seg`` is the latent viewed as ``[H, W, N_cs, p_c]``. With ``step`` set,
    each window is cut to the prefix its ``step``-th target sees and only
    that row is returned. Shorter sequences are right-padded with zeros.
    ``pad=True`` pads to at least ``pad_to`` rows and computes every row of
    the last layer (the padded baseline).
    """
    if step is None:
        lengths = [w.context_length for w in windows]
        rows = [list(w.rows) for w in windows]
    else:
        lengths = [w.rows[step] + 1 for w in windows]
        rows = [[w.rows[step]] for w in windows]
    S = max(max(lengths), pad_to if pad else 0)
    batch = np.zeros((len(windows), S, seg.shape[-1]), F32)
    for b, (w, n) in enumerate(zip(windows, lengths)):
        el = w.elements[: n - 1]
        if len(el):
            batch[b, 1:n] = seg[el[:, 0], el[:, 1], el[:, 2]]
    rows = np.asarray(rows, dtype=np.int64)
    if pad:
        full = forward_rows(cfg, weights, batch)
        return np.take_along_axis(full, rows[:, :, None], axis=1)
    return forward_rows(cfg, weights, batch, rows)


def _chunks(seq, size):
    for n in range(0, len(seq), size):
        yield seq[n : n + size]


def compute_context(
    cfg: ModelConfig,
    weights: ModelWeights,
    latent,
    schedule: Schedule,
    batch_size: int = 8,
    workers: int = 1,
    on_group: Callable[[int, list[WindowSpec]], None] | None = None,
) -> np.ndarray:
    """Context features ``[H, W, N_cs, d_e]`` for a fully known latent.

    ``batch_size`` only bounds memory: a group larger than it is split into
    chunks. Chunks of a group are independent and may run on ``workers``
    threads; groups are barriers.
    """
    latent = np.asarray(latent, F32)
    H, W, C = latent.shape
    layout = cfg.layout(H, W)
    seg = latent.reshape(H, W, layout.n_cs, layout.p_c)
    out = np.zeros((H, W, layout.n_cs, cfg.d_e), F32)
    pad = schedule.mode is ScheduleMode.PAD_BATCH
    pool = ThreadPoolExecutor(workers) if workers > 1 else None

    def run(chunk, pad_to):
        return chunk, run_windows(cfg, weights, seg, chunk, pad=pad, pad_to=pad_to)

    try:
        for g, group in enumerate(schedule.groups):
            chunks = list(_chunks(group, batch_size))
            longest = [max(w.context_length for w in group)] * len(chunks)
            results = pool.map(run, chunks, longest) if pool else map(run, chunks, longest)
            for chunk, feats in results:
                for w, f in zip(chunk, feats):
                    for t, row in zip(w.targets, f):
                        out[t] = row
            if on_group:
                on_group(g, group)
    finally:
        if pool:
            pool.shutdown()
    return out


@dataclass
class RunStats:
    mode: str
    windows: int
    groups: int
    max_group: int
    wall_ms: float


def timed_context(cfg, weights, latent, mode: ScheduleMode, **kw) -> tuple[np.ndarray, RunStats]:
    H, W, _ = np.shape(latent)
    t0 = time.perf_counter()
    sched = make_schedule(cfg.layout(H, W), cfg, mode)
    feats = compute_context(cfg, weights, latent, sched, **kw)
    ms = (time.perf_counter() - t0) * 1e3
    return feats, RunStats(ScheduleMode(mode).value, sched.windows, len(sched.groups), sched.max_group, ms)
