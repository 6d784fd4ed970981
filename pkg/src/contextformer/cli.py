"""Command-line entry point: gen, encode, decode, bench, selftest."""

from __future__ import annotations

import argparse
import os
import sys
import tempfile
from pathlib import Path

from .bench import bench, to_csv
from .codec import FormatError, decode_latent, encode_latent, gen_synthetic_latent, pack_latent, read_latent, write_latent
from .model import ModelConfig
from .rangecoder import CorruptStreamError
from .scheduler import ENCODER_MODES, ScheduleMode
from .selftest import run_selftest
from .store import load_config


def _config(args) -> ModelConfig:
    return load_config(args.config) if args.config else ModelConfig()


def _atomic_write(path, data: bytes) -> None:
    """Write via a temporary file so failures never leave a partial output."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _sizes(text: str):
    out = []
    for part in text.split(","):
        h, _, w = part.partition("x")
        out.append((int(h), int(w or h)))
    return out


def cmd_gen(args) -> int:
    cfg = _config(args)
    latent = gen_synthetic_latent(args.seed, args.height, args.width, args.channels or cfg.M, args.rho, cfg.symbol_bound)
    write_latent(args.out, latent)
    return 0


def cmd_encode(args) -> int:
    cfg = _config(args)
    res = encode_latent(read_latent(args.input), cfg, args.seed, args.hyper_seed, args.mode, workers=args.workers)
    _atomic_write(args.out, res.stream)
    print(f"{len(res.stream)} bytes, payload {res.payload_bits} bits, estimate {res.estimate_bits:.1f} bits")
    return 0


def cmd_decode(args) -> int:
    latent = decode_latent(Path(args.input).read_bytes())
    _atomic_write(args.out, pack_latent(latent))
    return 0


def cmd_bench(args) -> int:
    cfg = _config(args)
    modes = args.modes.split(",")
    rows = bench(cfg, _sizes(args.sizes), modes, args.seed, args.hyper_seed, repeats=args.repeats)
    text = to_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_selftest(args) -> int:
    results = run_selftest(args.weights)
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'}  {r.name:<18} {r.seconds:6.2f}s  {r.detail}")
    ok = all(r.ok for r in results)
    print("selftest", "passed" if ok else "FAILED")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="contextformer", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file with ModelConfig keys (toy config by default)")
        sp.add_argument("--seed", type=int, default=1, help="model seed (data seed for gen)")
        sp.add_argument("--hyper-seed", type=int, default=2, help="hyper feature seed, 0 disables")

    g = sub.add_parser("gen", help="write a synthetic quantized latent")
    common(g)
    g.add_argument("--height", "-H", type=int, default=16)
    g.add_argument("--width", "-W", type=int, default=16)
    g.add_argument("--channels", "-C", type=int, default=None, help="defaults to the config's M")
    g.add_argument("--rho", type=float, default=0.5)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    e = sub.add_parser("encode", help="latent file to bitstream")
    common(e)
    e.add_argument("input")
    e.add_argument("--mode", choices=[m.value for m in ENCODER_MODES], default=ScheduleMode.BDS_SCS.value)
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_encode)

    d = sub.add_parser("decode", help="bitstream to latent file")
    d.add_argument("input")
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_decode)

    b = sub.add_parser("bench", help="CSV timing of the scheduling modes")
    common(b)
    b.add_argument("--sizes", default="16x16", help="comma-separated HxW list")
    b.add_argument("--modes", default="ds,pb,bds,bds-scs,wavefront")
    b.add_argument("--repeats", type=int, default=1)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)

    s = sub.add_parser("selftest", help="toy-scale invariant checks")
    s.add_argument("--weights", help="weights container to validate")
    s.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FormatError, CorruptStreamError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
