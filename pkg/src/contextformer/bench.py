"""Wall-clock comparison of the scheduling modes.

Encoder modes time ``encode_latent``; the wavefront row times
``decode_latent`` on the stream the encoder produced.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import astuple, dataclass, fields

from .codec import cached_model, decode_latent, encode_latent, gen_synthetic_latent
from .model import ModelConfig
from .scheduler import ScheduleMode, make_schedule

CSV_FIELDS = ("mode", "H", "W", "C", "N_cs", "windows", "groups", "max_group", "wall_ms")


@dataclass
class BenchRow:
    mode: str
    H: int
    W: int
    C: int
    N_cs: int
    windows: int
    groups: int
    max_group: int
    wall_ms: float


def bench(
    cfg: ModelConfig,
    sizes,
    modes,
    model_seed: int = 1,
    hyper_seed: int = 2,
    data_seed: int = 3,
    rho: float = 0.5,
    repeats: int = 1,
) -> list[BenchRow]:
    """One row per (size, mode) holding the best of ``repeats`` runs.

    Repeats are interleaved across modes so slow drifts of the machine hit
    every mode alike.
    """
    modes = [ScheduleMode(m) for m in modes]
    cached_model(cfg, model_seed)
    rows = []
    for H, W in sizes:
        latent = gen_synthetic_latent(data_seed, H, W, cfg.M, rho, cfg.symbol_bound)
        stream = encode_latent(latent, cfg, model_seed, hyper_seed).stream
        best = {m: float("inf") for m in modes}
        for _ in range(repeats):
            for mode in modes:
                t0 = time.perf_counter()
                if mode is ScheduleMode.WAVEFRONT:
                    decode_latent(stream)
                else:
                    encode_latent(latent, cfg, model_seed, hyper_seed, mode)
                best[mode] = min(best[mode], (time.perf_counter() - t0) * 1e3)
        for mode in modes:
            phase = "decode" if mode is ScheduleMode.WAVEFRONT else "encode"
            sched = make_schedule(cfg.layout(H, W), cfg, mode, phase)
            rows.append(BenchRow(mode.value, H, W, cfg.M, cfg.n_cs, sched.windows, len(sched.groups), sched.max_group, best[mode]))
    return rows


def to_csv(rows: list[BenchRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f.name for f in fields(BenchRow)])
    for r in rows:
        vals = list(astuple(r))
        vals[-1] = f"{r.wall_ms:.1f}"
        w.writerow(vals)
    return buf.getvalue()
