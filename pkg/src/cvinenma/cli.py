"""Command-line interface: ``cvinenma {fit,simulate,simstudy,verify}``.

Exit codes: 0 success (a non-converged fit is still a result), 2 invalid
input, 3 internal error or failed verification. Log verbosity follows the
``CVINENMA_LOG_LEVEL`` environment variable (default WARNING).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .datagen import SimDesignPlan, generate_dataset, reference_truth
from .estimation import FitOptions, InitFailure, compare_models, fit, headline_gap
from .iofmt import (InputError, StudyFile, atomic_write_text, dumps_studies, load_studies,
                    result_document)
from .model import ModelSpec, ParameterSet

EXIT_OK, EXIT_INPUT, EXIT_FAIL = 0, 2, 3
LOG_ENV = "CVINENMA_LOG_LEVEL"

COPULAS = ("bvn", "frank", "clayton", "clayton90", "clayton180", "clayton270")
GRID_COPULAS = ("bvn", "frank", "clayton", "clayton180")
MARGINS = ("normal", "beta")

log = logging.getLogger("cvinenma")


def _parse_spec(text: str, K: int) -> ModelSpec:
    """``copula-margin[-link]``, e.g. ``clayton180-beta``."""
    parts = text.split("-")
    if len(parts) not in (2, 3):
        raise ValueError(f"model {text!r} should look like copula-margin[-link]")
    return ModelSpec(K, parts[0], parts[1], parts[2] if len(parts) == 3 else None)


def _read_params(path) -> ParameterSet:
    try:
        d = json.loads(Path(path).read_text())
        if "fit" in d:
            d = d["fit"]["parameters"]
        return ParameterSet.from_dict(d)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise InputError(f"{path}: not a parameter file ({exc})") from None


# ---------------------------------------------------------------------------
# fit


def format_fit(res) -> str:
    names = res.spec.parameter_names()
    est = res.estimate_dict()
    lines = [f"model {res.spec.name}  (converged: {res.converged}, "
             f"iterations: {res.iterations})",
             f"{'parameter':>10} {'estimate':>10} {'SE':>10}"]
    for n in names:
        se = res.standard_errors.get(n)
        lines.append(f"{n:>10} {est[n]:>10.3f} {('-' if se is None else f'{se:.3f}'):>10}")
    lines.append(f"{'-loglik':>10} {-res.max_loglik:>10.2f}")
    if res.boundary_pairs:
        lines.append("frozen at a Frechet bound: " + ", ".join(res.boundary_pairs))
    if not res.hessian_pd:
        lines.append("warning: Hessian not positive definite, SEs unavailable")
    return "\n".join(lines)


def format_comparison(ranking) -> str:
    lines = [f"{'rank':>4} {'model':<22} {'-loglik':>10} {'AIC':>10} {'gap':>8}"]
    for r in ranking:
        lines.append(f"{r.rank:>4} {r.model:<22} {r.neg_loglik:>10.2f} {r.aic:>10.2f} "
                     f"{r.loglik_gap:>8.2f}")
    return "\n".join(lines)


def cmd_fit(args) -> int:
    sf = load_studies(args.data)
    options = FitOptions(n_quad=args.quad_points, gradient=args.gradient,
                         boundary_rule=not args.no_boundary_rule, max_iter=args.max_iter)
    if args.copula == "all":
        if args.link:
            raise ValueError("--link cannot be combined with --copula all")
        specs = [ModelSpec(sf.K, c, m) for m in MARGINS for c in GRID_COPULAS]
    else:
        specs = [ModelSpec(sf.K, args.copula, args.margin, args.link)]
    init = _read_params(args.init_file) if args.init_file else None
    if init is not None and len(specs) > 1:
        raise ValueError("--init-file applies to a single model, not --copula all")

    def run(spec):
        return spec, fit(sf.studies, spec, init=init, options=options)

    if args.jobs > 1 and len(specs) > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            fitted = list(pool.map(run, specs))
    else:
        fitted = [run(s) for s in specs]

    ranking = compare_models(fitted) if len(fitted) > 1 else None
    comparison = None
    if ranking:
        comparison = {"ranking": [r.to_dict() for r in ranking],
                      "headline_loglik_gap": headline_gap(ranking)}
    out = Path(args.out) if args.out else None
    docs = []
    for spec, res in fitted:
        doc = result_document(res, args.data, sf.digest, options.to_dict(), __version__,
                              comparison)
        docs.append(doc)
        print(format_fit(res))
        print()
        if out is not None:
            target = (out / f"fit_{spec.name}.json") if len(fitted) > 1 else out
            atomic_write_text(target, json.dumps(doc, indent=2))
    if ranking:
        print(format_comparison(ranking))
        if out is not None:
            atomic_write_text(out / "comparison.json", json.dumps(comparison, indent=2))
    if out is None:
        json.dump(docs[0] if len(docs) == 1 else docs, sys.stdout, indent=2)
        print()
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    spec = ModelSpec(args.K, args.copula, args.margin, args.link)
    truth = _read_params(args.truth_file) if args.truth_file else reference_truth(args.margin, args.K)
    plan = SimDesignPlan(truth, spec, args.n1, args.n2, args.n3, args.n4, seed=args.seed)
    studies = generate_dataset(plan)
    sf = StudyFile(spec.K, studies, description=(
        f"simulated: {spec.name}, blocks {args.n1}/{args.n2}/{args.n3}/{args.n4}, "
        f"seed {args.seed}"))
    text = dumps_studies(sf)
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# simstudy


def cmd_simstudy(args) -> int:
    from .simstudy import format_table, load_config, run_simstudy, with_overrides, write_outputs

    config = load_config(args.config)
    K = config.plan.spec.K
    fits = [_parse_spec(f, K) for f in args.fits.split(",")] if args.fits else None
    config = with_overrides(config, args.replications, fits, args.seed)
    result = run_simstudy(config, jobs=args.jobs)
    paths = write_outputs(result, args.out_dir)
    sys.stdout.write(format_table(result))
    print(f"wrote {', '.join(str(p) for p in paths.values())}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify


def cmd_verify(args) -> int:
    from .oracle import run_verification

    studies, K = None, None
    if args.data:
        sf = load_studies(args.data)
        studies, K = sf.studies, sf.K
    reports = run_verification(studies, K, n_draws=args.draws, seed=args.seed,
                               n_instances=args.instances)
    for r in reports:
        print(r.line())
    n_fail = sum(not r.passed for r in reports)
    print(f"{len(reports) - n_fail}/{len(reports)} checks passed")
    if args.out:
        atomic_write_text(args.out, json.dumps([r.to_dict() for r in reports], indent=2))
    return EXIT_OK if n_fail == 0 else EXIT_FAIL


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cvinenma", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit one model, or the 8-model grid with --copula all")
    f.add_argument("data", help="study file (.json, or .csv for gold_one_test tables)")
    f.add_argument("--copula", default="bvn", choices=COPULAS + ("all",))
    f.add_argument("--margin", default="normal", choices=MARGINS)
    f.add_argument("--link", choices=("logit", "probit", "cloglog", "identity"))
    f.add_argument("--quad-points", type=int, default=15)
    f.add_argument("--init-file")
    f.add_argument("--gradient", default="chain", choices=("chain", "central"))
    f.add_argument("--max-iter", type=int, default=500)
    f.add_argument("--no-boundary-rule", action="store_true")
    f.add_argument("--jobs", type=int, default=1)
    f.add_argument("--out", help="result file (single model) or directory (grid)")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="simulate a study file")
    for blk in ("n1", "n2", "n3", "n4"):
        s.add_argument(f"--{blk}", type=int, default=10)
    s.add_argument("--K", type=int, default=2)
    s.add_argument("--truth-file")
    s.add_argument("--copula", default="clayton180", choices=COPULAS)
    s.add_argument("--margin", default="normal", choices=MARGINS)
    s.add_argument("--link", choices=("logit", "probit", "cloglog", "identity"))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    m = sub.add_parser("simstudy", help="replicated simulate-and-fit study")
    m.add_argument("config", help="bundled config name or JSON config file")
    m.add_argument("--replications", type=int)
    m.add_argument("--jobs", type=int, default=1)
    m.add_argument("--fits", help="comma-separated copula-margin list overriding the config")
    m.add_argument("--seed", type=int)
    m.add_argument("--out-dir", default="simstudy_out")
    m.set_defaults(func=cmd_simstudy)

    v = sub.add_parser("verify", help="run the oracle checks")
    v.add_argument("data", nargs="?")
    v.add_argument("--draws", type=int, default=200_000)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--instances", type=int, default=2)
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (InputError, InitFailure, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - reported as an internal failure
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
