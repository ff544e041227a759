"""Scaled-down simulation table: true Clayton-180 copula, normal or beta margins.

    python scripts/run_table2.py --margin normal --replications 100 --fits true
    python scripts/run_table2.py --margin beta --fits grid --jobs 4
"""
import argparse
import time

from cvinenma.simstudy import format_table, load_config, run_simstudy, with_overrides, write_outputs


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--margin", choices=("normal", "beta"), default="normal")
    ap.add_argument("--replications", type=int, default=100)
    ap.add_argument("--fits", choices=("true", "grid"), default="true")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out-dir", default=None)
    args = ap.parse_args()

    cfg = load_config(f"table2_cln180_{args.margin}")
    fits = [cfg.plan.spec] if args.fits == "true" else None
    cfg = with_overrides(cfg, replications=args.replications, fits=fits)
    t0 = time.time()
    res = run_simstudy(cfg, jobs=args.jobs)
    print(format_table(res))
    print(f"{time.time() - t0:.0f} s")
    write_outputs(res, args.out_dir or f"results/table2_{args.margin}_{args.fits}")


if __name__ == "__main__":
    main()
