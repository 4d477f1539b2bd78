"""List seeds whose environments have strong or mild leader-follower structure."""

import argparse

from copp import market_sim as ms
from copp.exp_harness import ExperimentConfig, interaction_gap


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--products", type=int, default=5)
    ap.add_argument("--boost", type=float, default=1.4)
    ap.add_argument("--edges", type=int, default=2)
    ap.add_argument("--seeds", type=int, default=200)
    args = ap.parse_args()
    cfg = ExperimentConfig(products=args.products, regime=ms.COMPLEMENTARY, boost=args.boost, edges=args.edges)
    print("seed,edges,optima_differ,relative_gap")
    for s in range(args.seeds):
        env = ms.generate_env(cfg.products, s, ms.COMPLEMENTARY, boost=cfg.boost, n_edges=cfg.edges)
        differs, gap = interaction_gap(env)
        print(f"{s},{' '.join(f'{a}>{b}' for a, b in env.edges)},{differs},{gap:.4f}")


if __name__ == "__main__":
    main()
