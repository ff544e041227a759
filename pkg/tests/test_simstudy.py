import json

import numpy as np
import pytest

from cvinenma.model import ModelSpec
from cvinenma.simstudy import (ReplicateFit, bundled_configs, format_table, load_config, metrics_for,
                               misspecification_cross, run_simstudy, summarize, with_overrides,
                               write_outputs)
from cvinenma.datagen import reference_truth


def test_summarize_single_replicate():
    m = summarize(np.array([0.43]), [0.02], 0.4)
    assert m.sd is None
    assert m.bias == pytest.approx(0.03)
    assert m.rmse == pytest.approx(0.03)
    assert m.ase == 0.02


def test_summarize_values():
    m = summarize(np.array([0.1, 0.3, 0.5]), [None, 0.1, 0.3], 0.2)
    assert m.bias == pytest.approx(0.1)
    assert m.sd == pytest.approx(0.2)
    assert m.rmse == pytest.approx(np.sqrt((0.01 + 0.01 + 0.09) / 3))
    assert m.ase == pytest.approx(0.2)
    assert m.n_se == 2


def test_bundled_configs_load():
    names = bundled_configs()
    assert {"table2_cln180_normal", "table2_cln180_beta", "smoke"} <= set(names)
    cfg = load_config("table2_cln180_normal")
    assert cfg.plan.n_studies == 40
    assert cfg.replications == 100
    assert len(cfg.fits) == 8
    assert cfg.plan.truth == reference_truth("normal")
    with pytest.raises(FileNotFoundError):
        load_config("nope")


def test_non_converged_excluded_and_cross_dispersions_blank():
    true = ModelSpec(2, "clayton180", "normal")
    fitted = ModelSpec(2, "clayton180", "beta")
    est = list(reference_truth("beta").as_vector())
    fits = [ReplicateFit(1, fitted.name, est, [0.1] * 14, -1.0, True, []),
            ReplicateFit(2, fitted.name, [9.0] * 14, [0.1] * 14, -1.0, False, []),
            ReplicateFit(3, fitted.name, None, None, None, False, [], "boom")]
    t = metrics_for(fitted, fits, reference_truth("normal"), true, 100.0)
    assert t.n_failed == 2
    assert t.params["pi"].n_used == 1
    assert t.params["gamma"].bias is None
    assert t.params["pi"].bias == pytest.approx(0.0)
    assert t.scaled("pi", "ase") == pytest.approx(10.0)


@pytest.fixture(scope="module")
def smoke():
    return load_config("smoke")


def test_jobs_do_not_change_metrics(smoke):
    a = run_simstudy(smoke, jobs=1).to_dict()
    b = run_simstudy(smoke, jobs=2).to_dict()
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_outputs(smoke, tmp_path):
    res = run_simstudy(with_overrides(smoke, replications=1), jobs=1)
    paths = write_outputs(res, tmp_path)
    assert json.loads(paths["metrics"].read_text())["metrics"][0]["n_replicates"] == 1
    assert "BIAS" in format_table(res)
    rows = paths["plot_data"].read_text().splitlines()
    assert rows[0] == "replicate,model,parameter,estimate,se,converged"
    assert len(rows) == 1 + 14


def test_cross_requires_margin_mismatch(smoke):
    with pytest.raises(ValueError):
        misspecification_cross(smoke)


def test_overrides(smoke):
    cfg = with_overrides(smoke, replications=5, seed=9, n_blocks=(1, 2, 3, 4),
                         fits=[ModelSpec(2, "bvn", "beta")])
    assert (cfg.replications, cfg.plan.seed, cfg.plan.n_studies) == (5, 9, 10)
    assert cfg.fits[0].name == "bvn-beta"
