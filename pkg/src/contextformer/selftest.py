"""Toy-scale invariant suite run by ``contextformer selftest``."""

from __future__ import annotations

import tempfile
import time
import traceback
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .codec import Model, decode_latent, encode_latent, entropy_params, gen_synthetic_latent, hyper_features
from .entropy import estimate_rate, gmm_pmf_table
from .model import ModelConfig
from .rangecoder import TOTAL, build_cdf
from .scheduler import ENCODER_MODES, ScheduleMode, make_schedule, verify_causality
from .store import WeightsFormatError, load_weights, same_parameters, save_weights

TOY = dict(L=2, d_e=64, d_mlp=256, h=4, n_cs=2, M=8, k_m=3, R_h=8, R_w=8)
H = W = 8


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str
    seconds: float


class _Suite:
    def __init__(self, weights_path=None, seed: int = 1, hyper_seed: int = 2):
        self.cfg = ModelConfig(**TOY)
        self.seed, self.hyper_seed = seed, hyper_seed
        self.weights_path = weights_path
        self.latent = gen_synthetic_latent(7, H, W, self.cfg.M, 0.6)
        self.model = Model.from_seed(self.cfg, seed)
        self.streams: dict[str, object] = {}

    def _encode(self, mode):
        if mode not in self.streams:
            self.streams[mode] = encode_latent(self.latent, self.cfg, self.seed, self.hyper_seed, mode)
        return self.streams[mode]

    def weights_container(self):
        if self.weights_path is None:
            with tempfile.TemporaryDirectory() as tmp:
                path = Path(tmp) / "toy.ctxw"
                save_weights(self.model, path)
                loaded = load_weights(path)
        else:
            try:
                loaded = load_weights(self.weights_path)
            except (OSError, WeightsFormatError) as err:
                return False, str(err)
            if not same_parameters(loaded, Model.from_seed(loaded.cfg, loaded.seed)):
                return False, "stored tensors differ from the seeded model"
            return True, f"{self.weights_path} matches seed {loaded.seed}"
        return same_parameters(loaded, self.model), "save/load reproduces every tensor"

    def causality(self):
        layout = self.cfg.layout(H, W)
        for mode in ScheduleMode:
            phase = "decode" if mode is ScheduleMode.WAVEFRONT else "encode"
            rep = verify_causality(make_schedule(layout, self.cfg, mode, phase), layout, self.cfg)
            if not rep:
                return False, f"{mode.value}: {rep.violation}"
        return True, f"{len(ScheduleMode)} schedules verified"

    def equivalence(self):
        ref = self._encode(ScheduleMode.DS)
        for mode in ENCODER_MODES[1:]:
            res = self._encode(mode)
            if not res.params.identical(ref.params) or res.stream != ref.stream:
                return False, f"{mode.value} differs from ds"
        return True, "params and streams bit-identical across encoder modes"

    def roundtrip(self):
        res = self._encode(ScheduleMode.BDS_SCS)
        back = decode_latent(res.stream)
        return bool(np.array_equal(back, self.latent)), f"{len(res.stream)} bytes"

    def normalization(self):
        hyper = hyper_features(self.hyper_seed, H, W, self.cfg.M)
        p = entropy_params(self.model, self.latent.astype(np.float32), hyper, ScheduleMode.BDS_SCS)
        table = gmm_pmf_table(p, self.cfg.symbol_bound)
        cdf = build_cdf(table)
        errs = {
            "pmf": np.abs(table.sum(-1) - 1).max(),
            "weights": np.abs(p.weights.astype(np.float64).sum(-1) - 1).max(),
        }
        ok = errs["pmf"] <= 1e-5 and errs["weights"] <= 1e-6 and (cdf[..., -1] == TOTAL).all()
        ok = ok and bool((np.diff(cdf, axis=-1) >= 1).all())
        return bool(ok), f"pmf err {errs['pmf']:.1e}, weight err {errs['weights']:.1e}"

    def rate(self):
        res = self._encode(ScheduleMode.BDS_SCS)
        est, _ = estimate_rate(res.params, self.latent, self.cfg.symbol_bound)
        diff = res.payload_bits - est
        return -16 <= diff <= 1e-3 * est + 64, f"payload {res.payload_bits} bits, estimate {est:.1f}"

    def checks(self) -> list[tuple[str, Callable]]:
        return [
            ("weights-container", self.weights_container),
            ("causality", self.causality),
            ("equivalence", self.equivalence),
            ("roundtrip", self.roundtrip),
            ("normalization", self.normalization),
            ("rate-bound", self.rate),
        ]


def run_selftest(weights_path=None) -> list[CheckResult]:
    suite = _Suite(weights_path)
    results = []
    for name, fn in suite.checks():
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as err:  # a crashing check is a failed check
            ok, detail = False, f"{type(err).__name__}: {err}"
            traceback.print_exc()
        results.append(CheckResult(name, bool(ok), detail, time.perf_counter() - t0))
    return results
