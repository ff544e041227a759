"""Replicated simulate-and-fit runs and their bias / SD / ASE / RMSE summaries.

Replicate r uses the dataset seed ``base_seed + r``; fits within a replicate
share that dataset. Replicates may run on several threads (the compiled
likelihood kernels release the GIL) but are aggregated in replicate order,
so the metrics do not depend on the number of workers.
"""
from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .datagen import SimDesignPlan, generate_dataset
from .estimation import FitOptions, InitFailure, fit
from .iofmt import atomic_write_text
from .model import ModelSpec, ParameterSet

log = logging.getLogger(__name__)

CONFIG_PACKAGE = "cvinenma.data.simstudy"


@dataclass
class SimStudyConfig:
    plan: SimDesignPlan
    fits: list[ModelSpec]
    replications: int = 100
    scale: float = 100.0
    name: str = "simstudy"
    options: FitOptions = field(default_factory=FitOptions)

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not self.fits:
            raise ValueError("at least one fit specification is required")
        for s in self.fits:
            if s.K != self.plan.spec.K:
                raise ValueError(f"fit {s.name} has K={s.K}, data have K={self.plan.spec.K}")

    @property
    def base_seed(self) -> int:
        return self.plan.seed

    def to_dict(self) -> dict:
        return {"name": self.name, "replications": self.replications, "scale": self.scale,
                "plan": self.plan.to_dict(), "fits": [s.to_dict() for s in self.fits],
                "options": self.options.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "SimStudyConfig":
        p = d["plan"]
        true_spec = ModelSpec(**p["model"])
        truth = ParameterSet.from_dict(p["truth"])
        plan = SimDesignPlan(truth, true_spec, p.get("n1", 10), p.get("n2", 10), p.get("n3", 10),
                             p.get("n4", 10), p.get("size_shape", 1.2), p.get("size_rate", 0.01),
                             p.get("size_shift", 30.0), p.get("seed", 0))
        fits = [ModelSpec(**f) for f in d["fits"]]
        opts = FitOptions(**d.get("options", {}))
        return cls(plan, fits, d.get("replications", 100), d.get("scale", 100.0),
                   d.get("name", "simstudy"), opts)


def bundled_configs() -> list[str]:
    files = resources.files(CONFIG_PACKAGE).iterdir()
    return sorted(f.name[:-5] for f in files if f.name.endswith(".json"))


def load_config(name_or_path) -> SimStudyConfig:
    """A bundled config by name, or a JSON config file."""
    path = Path(str(name_or_path))
    if path.suffix == ".json" and path.exists():
        text = path.read_text()
    else:
        name = str(name_or_path)
        if name not in bundled_configs():
            raise FileNotFoundError(f"no config file or bundled config named {name!r}; "
                                    f"bundled: {', '.join(bundled_configs())}")
        text = resources.files(CONFIG_PACKAGE).joinpath(name + ".json").read_text()
    return SimStudyConfig.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# replicates


@dataclass
class ReplicateFit:
    replicate: int
    model: str
    estimates: list[float] | None
    standard_errors: list[float | None] | None
    max_loglik: float | None
    converged: bool
    boundary_pairs: list[str]
    error: str = ""


def run_replicate(config: SimStudyConfig, r: int) -> list[ReplicateFit]:
    rng = np.random.default_rng(config.base_seed + r)
    studies = generate_dataset(config.plan, rng)
    out = []
    for spec in config.fits:
        try:
            res = fit(studies, spec, options=config.options)
        except (InitFailure, ValueError, FloatingPointError) as exc:
            log.warning("replicate %d, model %s failed: %s", r, spec.name, exc)
            out.append(ReplicateFit(r, spec.name, None, None, None, False, [], str(exc)))
            continue
        names = spec.parameter_names()
        out.append(ReplicateFit(r, spec.name, res.estimates.as_vector().tolist(),
                                [res.standard_errors[n] for n in names], res.max_loglik,
                                res.converged, res.boundary_pairs))
    log.info("replicate %d done", r)
    return out


# ---------------------------------------------------------------------------
# metrics


@dataclass
class ParamMetrics:
    truth: float | None
    bias: float | None
    sd: float | None
    ase: float | None
    rmse: float | None
    n_used: int
    n_se: int


@dataclass
class MetricsTable:
    model: str
    margin: str
    copula: str
    scale: float
    n_replicates: int
    n_failed: int
    params: dict[str, ParamMetrics]

    @property
    def failed(self) -> bool:
        return self.n_failed == self.n_replicates

    def scaled(self, name: str, metric: str) -> float | None:
        v = getattr(self.params[name], metric)
        return None if v is None else v * self.scale

    def to_dict(self) -> dict:
        return {"model": self.model, "margin": self.margin, "copula": self.copula,
                "scale": self.scale, "n_replicates": self.n_replicates,
                "n_failed": self.n_failed, "failed": self.failed,
                "params": {k: {**v.__dict__,
                               **{f"{m}_scaled": self.scaled(k, m)
                                  for m in ("bias", "sd", "ase", "rmse")}}
                           for k, v in self.params.items()}}


def summarize(est: np.ndarray, se: list, truth: float | None) -> ParamMetrics:
    """Unscaled metrics for one parameter; ``truth=None`` suppresses bias and RMSE."""
    n = len(est)
    ses = [s for s in se if s is not None]
    ase = float(np.mean(ses)) if ses else None
    if n == 0:
        return ParamMetrics(truth, None, None, ase, None, 0, len(ses))
    sd = float(np.std(est, ddof=1)) if n > 1 else None
    if truth is None:
        return ParamMetrics(None, None, sd, ase, None, n, len(ses))
    bias = float(np.mean(est) - truth)
    rmse = float(np.sqrt(np.mean((est - truth) ** 2)))
    return ParamMetrics(truth, bias, sd, ase, rmse, n, len(ses))


def metrics_for(spec: ModelSpec, fits: list[ReplicateFit], truth: ParameterSet,
                true_spec: ModelSpec, scale: float) -> MetricsTable:
    ok = [f for f in fits if f.converged and f.estimates is not None]
    names = spec.parameter_names()
    tvec = truth.as_vector()
    K = spec.K
    disp = range(2 * K + 1, 4 * K + 2)
    params = {}
    for j, name in enumerate(names):
        # dispersions of a different margin family are not comparable with the truth
        t = None if (j in disp and spec.margin != true_spec.margin) else float(tvec[j])
        est = np.array([f.estimates[j] for f in ok])
        params[name] = summarize(est, [f.standard_errors[j] for f in ok], t)
    return MetricsTable(spec.name, spec.margin, spec.copula, scale, len(fits),
                        len(fits) - len(ok), params)


@dataclass
class SimStudyResult:
    config: SimStudyConfig
    tables: list[MetricsTable]
    replicates: list[ReplicateFit]

    def table(self, model: str) -> MetricsTable:
        for t in self.tables:
            if t.model == model:
                return t
        raise KeyError(model)

    def to_dict(self) -> dict:
        return {"format": "cvinenma-simstudy", "version": 1, "config": self.config.to_dict(),
                "metrics": [t.to_dict() for t in self.tables]}


def run_simstudy(config: SimStudyConfig, jobs: int = 1) -> SimStudyResult:
    reps = range(1, config.replications + 1)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            per_rep = list(pool.map(lambda r: run_replicate(config, r), reps))
    else:
        per_rep = [run_replicate(config, r) for r in reps]
    flat = [f for rep in per_rep for f in rep]
    tables = []
    for spec in config.fits:
        fits = [f for f in flat if f.model == spec.name]
        tables.append(metrics_for(spec, fits, config.plan.truth, config.plan.spec, config.scale))
    return SimStudyResult(config, tables, flat)


def misspecification_cross(config: SimStudyConfig, jobs: int = 1) -> SimStudyResult:
    """run_simstudy restricted to configs that fit at least one wrong margin."""
    if all(s.margin == config.plan.spec.margin for s in config.fits):
        raise ValueError("a misspecification cross needs a fitted margin different from "
                         f"the true margin ({config.plan.spec.margin})")
    return run_simstudy(config, jobs)


# ---------------------------------------------------------------------------
# output


def _fmt(v, width=8):
    return f"{'-':>{width}}" if v is None else f"{v:>{width}.2f}"


def format_table(result: SimStudyResult) -> str:
    """Aligned text table: metric x model rows, one column per parameter (scaled)."""
    tables = result.tables
    names = result.config.plan.spec.parameter_names()
    truth = result.config.plan.truth.as_vector()
    head = f"{'':6} {'margin':7} {'copula':11} " + " ".join(f"{n:>8}" for n in names)
    tline = f"{'truth':6} {'':7} {'':11} " + " ".join(f"{t:>8.3g}" for t in truth)
    lines = [head, tline, "-" * len(head)]
    for metric in ("bias", "sd", "ase", "rmse"):
        for i, t in enumerate(tables):
            label = metric.upper() if i == 0 else ""
            vals = [t.scaled(n, metric) for n in t.params]
            lines.append(f"{label:6} {t.margin:7} {t.copula:11} " + " ".join(_fmt(v) for v in vals))
        lines.append("-" * len(head))
    lines.append("failed/non-converged replicates: "
                 + ", ".join(f"{t.model} {t.n_failed}/{t.n_replicates}" for t in tables))
    lines.append(f"metrics scaled by {result.config.scale:g}")
    return "\n".join(lines) + "\n"


def write_outputs(result: SimStudyResult, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"metrics": out / "metrics.json", "table": out / "metrics.txt",
             "replicates": out / "replicates.json", "plot_data": out / "plot_data.csv"}
    atomic_write_text(paths["metrics"], json.dumps(result.to_dict(), indent=2, sort_keys=True))
    atomic_write_text(paths["table"], format_table(result))
    atomic_write_text(paths["replicates"], json.dumps(
        [f.__dict__ for f in result.replicates], indent=1))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["replicate", "model", "parameter", "estimate", "se", "converged"])
    for f in result.replicates:
        if f.estimates is None:
            continue
        names = next(s for s in result.config.fits if s.name == f.model).parameter_names()
        for n, e, s in zip(names, f.estimates, f.standard_errors):
            w.writerow([f.replicate, f.model, n, repr(e), "" if s is None else repr(s),
                        int(f.converged)])
    atomic_write_text(paths["plot_data"], buf.getvalue())
    return paths


def with_overrides(config: SimStudyConfig, replications=None, fits=None, seed=None,
                   n_blocks=None) -> SimStudyConfig:
    plan = config.plan
    if seed is not None:
        plan = replace(plan, seed=seed)
    if n_blocks is not None:
        plan = replace(plan, n1=n_blocks[0], n2=n_blocks[1], n3=n_blocks[2], n4=n_blocks[3])
    return replace(config, plan=plan,
                   replications=config.replications if replications is None else replications,
                   fits=config.fits if fits is None else list(fits))



# ---------------------------------------------------------------------------
# parameter recovery


def proportion_names(K: int) -> list[str]:
    return ["pi"] + [f"pi1{k}" for k in range(1, K + 1)] + [f"pi0{k}" for k in range(1, K + 1)]


@dataclass
class RecoveryRow:
    dataset: int
    converged: bool
    z_scores: dict[str, float | None]

    def covered(self, width: float = 3.0) -> bool:
        return self.converged and all(z is not None and abs(z) <= width
                                      for z in self.z_scores.values())


def run_recovery(plan: SimDesignPlan, n_datasets: int, options: FitOptions | None = None,
                 jobs: int = 1) -> list[RecoveryRow]:
    """Fit the true model to ``n_datasets`` datasets (seeds plan.seed + 1, ...)
    and report (estimate - truth) / SE for the proportion parameters."""
    truth = dict(zip(plan.spec.parameter_names(), plan.truth.as_vector()))
    names = proportion_names(plan.spec.K)

    def one(i):
        studies = generate_dataset(plan, np.random.default_rng(plan.seed + i))
        res = fit(studies, plan.spec, options=options)
        est = res.estimate_dict()
        z = {}
        for n in names:
            se = res.standard_errors.get(n)
            z[n] = None if not se else (est[n] - truth[n]) / se
        return RecoveryRow(i, res.converged, z)

    idx = range(1, n_datasets + 1)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(one, idx))
    return [one(i) for i in idx]
