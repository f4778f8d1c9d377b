"""Simulate the population truth for the study design and write it as a JSON fixture."""

import argparse
import time

import numpy as np

from hdnsm.simulation import DgpConfig, StudyConfig, oracle_truth


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="tests/fixtures/oracle_truth.json")
    ap.add_argument("--mc-size", type=int, default=1_000_000)
    ap.add_argument("--seed", type=int, default=StudyConfig().seed)
    ap.add_argument("--p", type=int, default=100)
    args = ap.parse_args()

    study = StudyConfig()
    start = time.perf_counter()
    truth = oracle_truth(DgpConfig(p=args.p), np.asarray(study.t_grid), study.taus,
                         args.mc_size, seed=args.seed)
    truth.save(args.out)
    print(f"wrote {args.out} (mc_size={args.mc_size}, seed={args.seed}) "
          f"in {time.perf_counter() - start:.1f}s")


if __name__ == "__main__":
    main()
