"""Ablation over the variant matrix, ranked by mean evaluation reward.

    python scripts/run_exp3.py [--config configs/exp3.cfg] [--out out/exp3] [--seed N] [--episodes N]
"""
import argparse
import logging
from pathlib import Path

from hybridctl import harness as H
from hybridctl.config import load_config

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "exp3.cfg"))
    ap.add_argument("--out", default="out/exp3")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--episodes", type=int, default=None)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.episodes is not None:
        cfg.episodes = args.episodes
    report = H.run(cfg, out=args.out)
    for i, r in enumerate(report.ranking(), 1):
        print(f"{i:>2}. {r['variant']:<12} {r['magnitude']:.2f}  {r['mean']:10.4f} +- {r['sd']:.4f}"
              f"  shutdowns {r['shutdowns']}")


if __name__ == "__main__":
    main()
