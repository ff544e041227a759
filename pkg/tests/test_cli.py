import json

import pytest

from cvinenma.cli import main
from cvinenma.iofmt import load_result, load_studies
from cvinenma.model import ModelSpec, ParameterSet, joint_loglik


@pytest.fixture(scope="module")
def data_file(tmp_path_factory):
    p = tmp_path_factory.mktemp("cli") / "d.json"
    assert main(["simulate", "--n1", "2", "--n2", "2", "--n3", "2", "--n4", "2", "--seed", "5",
                 "--out", str(p)]) == 0
    return p


def test_simulate_is_byte_stable(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for p in (a, b):
        assert main(["simulate", "--seed", "3", "--out", str(p)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert len(load_studies(a).studies) == 40


def test_simulate_rejections(tmp_path):
    assert main(["simulate", "--K", "3", "--n3", "1"]) == 2
    bad = tmp_path / "t.json"
    bad.write_text(json.dumps({"pi": 0.4}))
    assert main(["simulate", "--truth-file", str(bad)]) == 2
    truth = ParameterSet.uniform(2, 0.4, (0.8, 0.6), (0.9, 0.7), 0.3, -0.3).to_dict()
    bad.write_text(json.dumps(truth))
    assert main(["simulate", "--copula", "clayton180", "--truth-file", str(bad)]) == 2


def test_fit_round_trip(data_file, tmp_path, capsys):
    out = tmp_path / "r.json"
    assert main(["fit", str(data_file), "--copula", "frank", "--margin", "beta",
                 "--max-iter", "30", "--out", str(out)]) == 0
    table = capsys.readouterr().out
    assert "gamma01" in table and "-loglik" in table
    doc = load_result(out)
    sf = load_studies(data_file)
    assert doc["input"]["sha256"] == sf.digest
    f = doc["fit"]
    ll = joint_loglik(sf.studies, ParameterSet.from_dict(f["parameters"]), ModelSpec(**f["model"]),
                      doc["options"]["n_quad"])
    assert ll == pytest.approx(f["max_loglik"], abs=1e-6)
    # the result file doubles as an init file; continuing can only improve the fit
    assert main(["fit", str(data_file), "--copula", "frank", "--margin", "beta",
                 "--max-iter", "30", "--init-file", str(out),
                 "--out", str(tmp_path / "r2.json")]) == 0
    again = load_result(tmp_path / "r2.json")["fit"]["max_loglik"]
    assert again >= f["max_loglik"] - 1e-9


def test_grid_mode(data_file, tmp_path):
    assert main(["fit", str(data_file), "--copula", "all", "--jobs", "2", "--max-iter", "15",
                 "--out", str(tmp_path)]) == 0
    files = sorted(p.name for p in tmp_path.glob("fit_*.json"))
    assert len(files) == 8
    comp = json.loads((tmp_path / "comparison.json").read_text())
    lls = [r["max_loglik"] for r in comp["ranking"]]
    assert lls == sorted(lls, reverse=True)
    assert comp["headline_loglik_gap"] == pytest.approx(lls[0] - lls[1])


@pytest.mark.parametrize("argv", [
    ["fit", "missing.json"],
    ["fit", "DATA", "--margin", "beta", "--link", "logit"],
    ["fit", "DATA", "--copula", "gumbel"],
    ["fit", "DATA", "--copula", "all", "--link", "probit"],
])
def test_fit_input_errors(argv, data_file):
    argv = [str(data_file) if a == "DATA" else a for a in argv]
    assert main(argv) == 2


def test_schema_error_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{"format": "cvinenma-studies", "version": 1, "K": 2,\n "studies": [\n'
                 '  {"id": "a", "design": "no_gold_pair", "tests": [1, 2],\n'
                 '   "m11": 1, "m10": 2, "m01": -3, "m00": 4}]}\n')
    assert main(["fit", str(p)]) == 2
    assert "line 3" in capsys.readouterr().err


def test_verify_exit_codes(data_file, monkeypatch):
    assert main(["verify", "--draws", "20000", "--instances", "1"]) == 0
    assert main(["verify", str(data_file), "--draws", "20000", "--instances", "1"]) == 0
    monkeypatch.setenv("CVINENMA_FAULT", "bvn")
    assert main(["verify", "--draws", "20000", "--instances", "1"]) == 3


def test_simstudy_smoke(tmp_path, capsys):
    assert main(["simstudy", "smoke", "--replications", "1", "--out-dir", str(tmp_path)]) == 0
    assert (tmp_path / "metrics.json").exists()
    assert (tmp_path / "replicates.json").exists()
    assert main(["simstudy", "no_such_config"]) == 2
