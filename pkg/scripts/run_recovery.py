"""Parameter recovery on large datasets (50 studies per design block)."""
import argparse
import time

from cvinenma.datagen import SimDesignPlan, reference_truth
from cvinenma.model import ModelSpec
from cvinenma.simstudy import run_recovery


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--copula", default="clayton180")
    ap.add_argument("--margin", default="beta")
    ap.add_argument("--per-block", type=int, default=50)
    ap.add_argument("--datasets", type=int, default=10)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()

    b = args.per_block
    plan = SimDesignPlan(reference_truth(args.margin), ModelSpec(2, args.copula, args.margin), b, b, b, b)
    t0 = time.time()
    rows = run_recovery(plan, args.datasets, jobs=args.jobs)
    for r in rows:
        zs = " ".join(f"{k}={'-' if v is None else f'{v:+.2f}'}" for k, v in r.z_scores.items())
        print(f"dataset {r.dataset:2d} converged={r.converged} covered={r.covered()} {zs}")
    print(f"{sum(r.covered() for r in rows)}/{len(rows)} within 3 SE, {time.time() - t0:.0f} s")


if __name__ == "__main__":
    main()
