"""Reward curves for the independent, mild and strong regimes at P in {5, 10, 20}.

Writes one results directory per (regime, P) under --out.  COPP-UG is
dropped at P=20 unless --with-ug-20 is given (it re-mines every round).
"""

import argparse
import dataclasses
import logging
from pathlib import Path

from copp.exp_harness import emit_results, load_config, run_experiment

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--regimes", nargs="+", default=["independent", "mild", "strong"])
    ap.add_argument("--products", nargs="+", type=int, default=[5, 10, 20])
    ap.add_argument("--trials", type=int)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--with-ug-20", action="store_true")
    ap.add_argument("--out", default="results")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    for regime in args.regimes:
        base = load_config(ROOT / "configs" / f"{regime}.cfg")
        for P in args.products:
            cfg = dataclasses.replace(base, products=P, workers=args.workers,
                                      out=str(Path(args.out) / f"{regime}_P{P}"))
            if args.trials:
                cfg = dataclasses.replace(cfg, trials=args.trials)
            if regime != "independent":
                cfg = dataclasses.replace(cfg, edges=max(2, P // 2))
            if P >= 20 and not args.with_ug_20:
                cfg = dataclasses.replace(cfg, policies=tuple(p for p in cfg.policies if p != "copp_ug"))
            logging.info("%s P=%d: %d trials x %d rounds", regime, P, cfg.trials, cfg.horizon)
            files = emit_results(run_experiment(cfg), cfg.out)
            logging.info("wrote %s", files["rewards"])


if __name__ == "__main__":
    main()
