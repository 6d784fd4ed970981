"""Time every scheduling mode on a few latent sizes and write a CSV.

    python3 scripts/bench_schedules.py --sizes 8x8,16x16,32x32 --n-cs 4 --out bench.csv
"""

import argparse
import sys

from contextformer.bench import bench, to_csv
from contextformer.model import ModelConfig


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", default="8x8,16x16,32x32")
    p.add_argument("--modes", default="ds,pb,bds,bds-scs,wavefront")
    p.add_argument("--n-cs", type=int, default=4)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--base", action="store_true", help="use the L=8, d_e=384 configuration")
    p.add_argument("--out")
    args = p.parse_args()
    cfg = ModelConfig.base(n_cs=args.n_cs) if args.base else ModelConfig(n_cs=args.n_cs)
    sizes = [tuple(int(v) for v in s.split("x")) for s in args.sizes.split(",")]
    text = to_csv(bench(cfg, sizes, args.modes.split(","), repeats=args.repeats))
    if args.out:
        open(args.out, "w").write(text)
    sys.stdout.write(text)


if __name__ == "__main__":
    main()
