import json

import jsonschema
import numpy as np
import pytest

from dynafactor.cli import main
from dynafactor.panel import TimeSeriesPanel, load_csv, save_csv
from dynafactor.serialize import load_schema
from dynafactor.simulate import DgpSpec, generate


@pytest.fixture(scope="module")
def ex1_csv(tmp_path_factory):
    panel, _ = generate(DgpSpec("Ex1", p=6, n=160, r=2, seed=11))
    path = tmp_path_factory.mktemp("data") / "ex1.csv"
    save_csv(panel, path)
    return path


def _run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def _validate(path, schema):
    doc = json.loads(path.read_text())
    jsonschema.validate(doc, load_schema(schema))
    return doc


def test_fit_happy_path(ex1_csv, tmp_path, capsys):
    code, out, _ = _run(["fit", "--input", ex1_csv, "--output-dir", tmp_path], capsys)
    assert code == 0
    for name in ("fit.json", "factors.csv", "summary.txt"):
        assert (tmp_path / name).exists()
    doc = _validate(tmp_path / "fit.json", "fit")
    assert "r_hat" in out and "white-noise tests" in out
    factors = load_csv(tmp_path / "factors.csv")
    assert factors.n == 160
    assert factors.p == doc["r_hat"]


def test_fit_flags_override_config(ex1_csv, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"fit": {"r_override": 1, "k0": 3}}))
    code, out, _ = _run(["fit", "--input", ex1_csv, "--config", cfg, "--r-override", "2"], capsys)
    assert code == 0
    assert "r_hat = 2" in out
    code, out, _ = _run(["fit", "--input", ex1_csv, "--config", cfg], capsys)
    assert code == 0
    assert "r_hat = 1" in out


def test_fit_row_range(ex1_csv, tmp_path, capsys):
    code, _, _ = _run(["fit", "--input", ex1_csv, "--row-range", "11:130", "--output-dir", tmp_path], capsys)
    assert code == 0
    assert json.loads((tmp_path / "fit.json").read_text())["n"] == 120
    code, _, err = _run(["fit", "--input", ex1_csv, "--row-range", "0:500"], capsys)
    assert code == 2 and "row-range" in err


def test_fit_is_byte_identical(ex1_csv, tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run(["fit", "--input", ex1_csv, "--output-dir", a, "--seed", 3], capsys)[0] == 0
    assert _run(["fit", "--input", ex1_csv, "--output-dir", b, "--seed", 3], capsys)[0] == 0
    assert (a / "fit.json").read_bytes() == (b / "fit.json").read_bytes()
    assert (a / "factors.csv").read_bytes() == (b / "factors.csv").read_bytes()


def test_malformed_csv(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n3,x\n5,6\n")
    code, _, err = _run(["fit", "--input", bad], capsys)
    assert code == 2
    assert "line 3, column 2" in err
    ragged = tmp_path / "ragged.csv"
    ragged.write_text("a,b\n1,2\n3\n")
    code, _, err = _run(["fit", "--input", ragged], capsys)
    assert code == 2 and "ragged" in err


def test_missing_input_and_bad_config(tmp_path, capsys):
    assert _run(["fit"], capsys)[0] == 2
    assert _run(["fit", "--input", tmp_path / "none.csv"], capsys)[0] == 2
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"fit": {}, "colour": 1}))
    code, _, err = _run(["fit", "--input", tmp_path / "none.csv", "--config", cfg], capsys)
    assert code == 2 and "unknown config keys" in err
    cfg.write_text("{not json")
    assert _run(["fit", "--input", tmp_path / "none.csv", "--config", cfg], capsys)[0] == 2


def test_usage_error(capsys):
    assert _run(["nonsense"], capsys)[0] == 2
    assert _run(["fit", "--k0", "two"], capsys)[0] == 2


def test_out_of_range_parameter(ex1_csv, capsys):
    code, _, err = _run(["fit", "--input", ex1_csv, "--alpha", "1.5"], capsys)
    assert code == 2 and "alpha" in err


def test_numerical_failure_exit_code(tmp_path, capsys):
    x = np.random.default_rng(0).standard_normal((100, 3))
    path = tmp_path / "collinear.csv"
    save_csv(TimeSeriesPanel(np.column_stack([x, x[:, 0]])), path)
    code, _, err = _run(["wn-test", "--input", path, "--method", "tsay"], capsys)
    assert code == 3
    assert err.startswith("error:")


def test_simulate(tmp_path, capsys):
    cfg = tmp_path / "spec.json"
    cfg.write_text(json.dumps({"dgp": {"example": "Ex1", "p": 5, "n": 200, "r": 3}, "n_reps": 4}))
    code, out, _ = _run(["simulate", "--config", cfg, "--output-dir", tmp_path / "o", "--seed", 5], capsys)
    assert code == 0
    assert "P(r_hat=3)" in out and "LYB" not in out
    doc = _validate(tmp_path / "o" / "replication.json", "replication")
    assert doc["n_reps"] == 4
    rows = (tmp_path / "o" / "replications.csv").read_text().strip().splitlines()
    assert len(rows) == 5
    table = load_csv(tmp_path / "o" / "replications.csv")
    assert table.column_names[:3] == ("rep", "seed", "r_hat")
    assert list(table.values[:, 1]) == [5, 6, 7, 8]
    code, out, _ = _run(["simulate", "--config", cfg, "--compare-lyb"], capsys)
    assert code == 0 and "LYB" in out


def test_simulate_validation(tmp_path, capsys):
    cfg = tmp_path / "spec.json"
    cfg.write_text(json.dumps({"dgp": {"example": "Ex1", "p": 5, "n": 200, "r": 3}}))
    assert _run(["simulate", "--config", cfg, "--n-reps", 0], capsys)[0] == 2
    assert _run(["simulate", "--config", cfg], capsys)[0] == 2
    assert _run(["simulate", "--config", cfg, "--n-reps", 2, "--threads", 0], capsys)[0] == 2


def test_forecast(ex1_csv, tmp_path, capsys):
    code, out, _ = _run(["forecast", "--input", ex1_csv, "--origins", "120:150", "--horizons", "1,2,3",
                         "--methods", "var,zero", "--dm", "var,zero", "--output-dir", tmp_path], capsys)
    assert code == 0
    doc = _validate(tmp_path / "forecast.json", "forecast")
    assert doc["horizons"] == [1, 2, 3]
    assert all(len(v) == 3 for v in doc["fe_by_horizon"].values())
    header = [line for line in out.splitlines() if line.startswith("method")][0]
    assert header.split()[1:] == ["h=1", "h=2", "h=3"]
    assert "DM var vs zero" in out
    table = load_csv(tmp_path / "forecast.csv")
    assert table.column_names == ("origin", "horizon", "var", "zero")
    assert table.n == 31 * 3


def test_forecast_validation(ex1_csv, capsys):
    code, _, err = _run(["forecast", "--input", ex1_csv, "--origins", "140:150",
                         "--methods", "var", "--dm", "var,zero"], capsys)
    assert code == 2 and "two" in err
    code, _, err = _run(["forecast", "--input", ex1_csv, "--origins", "140:150", "--dm", "var"], capsys)
    assert code == 2
    code, _, err = _run(["forecast", "--input", ex1_csv, "--origins", "140:150", "--methods", "var,oracle"], capsys)
    assert code == 2 and "var" in err


def test_bad_method_lists_valid(ex1_csv, capsys):
    code, _, err = _run(["wn-test", "--input", ex1_csv, "--method", "portmanteau"], capsys)
    assert code == 2
    for name in ("lb", "tsay", "cyz"):
        assert name in err


@pytest.mark.parametrize("method", ["lb", "tsay", "cyz"])
def test_wn_test_outputs(ex1_csv, tmp_path, capsys, method):
    code, out, _ = _run(["wn-test", "--input", ex1_csv, "--method", method, "--n-boot", 200,
                         "--output-dir", tmp_path], capsys)
    assert code == 0
    doc = _validate(tmp_path / "wntest.json", "wntest")
    assert len(doc["results"]) == (6 if method == "lb" else 1)
    assert "statistic=" in out and "critical=" in out


def _wn_verdict(tmp_path, capsys, values, name):
    path = tmp_path / name
    save_csv(TimeSeriesPanel(values), path)
    code, out, _ = _run(["wn-test", "--input", path, "--method", "tsay"], capsys)
    assert code == 0
    return "fail to reject" in out


def test_wn_test_size(tmp_path, capsys):
    accepts = [
        _wn_verdict(tmp_path, capsys, np.random.default_rng(s).standard_normal((300, 4)), f"iid{s}.csv")
        for s in range(100)
    ]
    assert 0.88 <= np.mean(accepts) <= 1.0


def test_wn_test_power(tmp_path, capsys):
    for s in range(20):
        e = np.random.default_rng(1000 + s).standard_normal((300, 4))
        x = np.zeros_like(e)
        for t in range(1, len(e)):
            x[t] = 0.6 * x[t - 1] + e[t]
        assert not _wn_verdict(tmp_path, capsys, x, f"ar{s}.csv")


def _json_outputs(tmp_path, argv, threads, capsys):
    out = tmp_path / f"t{threads}"
    assert _run(argv + ["--threads", threads, "--output-dir", out], capsys)[0] == 0
    return {p.name: p.read_bytes() for p in sorted(out.glob("*.json"))}


def test_thread_count_does_not_change_json(ex1_csv, tmp_path, capsys):
    cfg = tmp_path / "spec.json"
    cfg.write_text(json.dumps({"dgp": {"example": "Ex2", "p": 20, "n": 200, "r": 2, "k_spike": 2}, "n_reps": 4}))
    runs = {
        "simulate": ["simulate", "--config", cfg, "--seed", 9],
        "forecast": ["forecast", "--input", ex1_csv, "--origins", "140:148", "--methods", "var,ar,zero", "--seed", 9],
    }
    for name, argv in runs.items():
        a = _json_outputs(tmp_path / name, argv, 1, capsys)
        b = _json_outputs(tmp_path / name, argv, 3, capsys)
        assert a and a == b


def test_version(capsys):
    assert main(["--version"]) == 0
    assert "dynafactor" in capsys.readouterr().out
