"""Per-round wall time of each policy against the horizon and the product count."""

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

from copp.exp_harness import load_config, run_experiment, runtime_rows

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--products", nargs="+", type=int, default=[5, 10, 20])
    ap.add_argument("--out", default="results/runtime.csv")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    base = load_config(ROOT / "configs" / "runtime.cfg")
    rows = []
    for P in args.products:
        cfg = dataclasses.replace(base, products=P)
        logging.info("P=%d", P)
        rows += [(P,) + r for r in runtime_rows(run_experiment(cfg))]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("products", "policy", "horizon", "seconds_per_round_mean", "ci_low", "ci_high"))
        w.writerows(rows)
    csv.writer(sys.stdout, lineterminator="\n").writerows(rows)


if __name__ == "__main__":
    main()
