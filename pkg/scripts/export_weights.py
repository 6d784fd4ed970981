"""Write the seeded model as a weights container (checked by `contextformer selftest --weights`)."""

import argparse

from contextformer.codec import Model
from contextformer.model import ModelConfig
from contextformer.store import load_config, save_weights


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", required=True)
    args = p.parse_args()
    cfg = load_config(args.config) if args.config else ModelConfig()
    save_weights(Model.from_seed(cfg, args.seed), args.out)


if __name__ == "__main__":
    main()
