import csv
import json
import math
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from bayesenkf.cli import main
from bayesenkf.config import ExperimentConfig, load_config
from bayesenkf.exceptions import ConfigError, ParseError
from bayesenkf.experiments import (
    ingest_external,
    normalize_curve,
    running_median,
    static_grid_posterior,
    total_variation,
)
from bayesenkf.param_posterior import ParamGrid, grid_update, normalize_log_weights


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


# ------------------------------------------------------------ experiments


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=60))
def test_running_median(values):
    got = running_median(values)
    ref = [np.median(values[: t + 1]) for t in range(len(values))]
    np.testing.assert_allclose(got, ref, rtol=0, atol=0)


def test_static_posterior_matches_sequential_grid():
    y = np.random.default_rng(0).normal(0, 1.5, 30)
    atoms = np.linspace(0, 2, 50)
    post = static_grid_posterior(y, atoms)
    g = ParamGrid(atoms[:, None], normalize_log_weights(np.zeros(50)))
    for t, yt in enumerate(y):
        g = grid_update(g, stats.norm.logpdf(yt, 0, np.sqrt(2 + atoms)))
        assert post["mean"][t] == pytest.approx(g.weights @ atoms, rel=1e-9)


def test_curve_normalization_and_tv():
    grid = np.linspace(0, 2, 201)
    f = normalize_curve(stats.norm.logpdf(grid, 1.0, 0.2), grid)
    assert np.sum(0.5 * (f[1:] + f[:-1]) * np.diff(grid)) == pytest.approx(1.0, abs=1e-12)
    assert total_variation(f, f, grid) == 0.0


def write_rows(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(rows) + "\n")


def test_ingest_values(tmp_path):
    p = tmp_path / "z.csv"
    write_rows(p, ["a,b", f"0,{math.e - 1!r}", "1,2", "3,4"])
    Z = ingest_external(p, "log1p")
    assert Z.shape == (3, 2)
    assert Z[0, 0] == 0.0 and Z[0, 1] == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_array_equal(ingest_external(p)[1:], [[1, 2], [3, 4]])


def test_ingest_without_header(tmp_path):
    p = tmp_path / "z.csv"
    write_rows(p, ["1,2", "3,4", "5,6"])
    assert ingest_external(p).shape == (3, 2)


@pytest.mark.parametrize("rows,row,col", [
    (["1,2", "3", "5,6"], 2, 2),
    (["x,y", "1,2", "3,abc"], 3, 2),
])
def test_ingest_errors(tmp_path, rows, row, col):
    p = tmp_path / "z.csv"
    write_rows(p, rows)
    with pytest.raises(ParseError) as err:
        ingest_external(p)
    assert (err.value.row, err.value.column) == (row, col)


def test_ingest_log1p_domain(tmp_path):
    p = tmp_path / "z.csv"
    write_rows(p, ["1,-2"])
    with pytest.raises(ParseError):
        ingest_external(p, "log1p")


# ----------------------------------------------------------------- config


def test_config_defaults():
    cfg = load_config({"experiment": "lorenz96"})
    assert cfg.filters[0].scale_param == "sigma2"
    assert cfg.filters[0].taper.kind == "gaspari_cohn"
    assert cfg.model["T"] == 250
    assert set(cfg.priors) == {"sigma2", "lambda", "nu"}


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        load_config({"experiment": "linear_sim", "model": {"n": 5, "bogus": 1}})
    with pytest.raises(ConfigError):
        load_config({"experiment": "linear_sim", "colour": "red"})
    with pytest.raises(ConfigError):
        load_config({"experiment": "static_demo", "filters": [{"method": "enkf_grid"}]})


def test_config_seed_override_and_echo():
    cfg = load_config('{"experiment": "linear_sim", "seed": 4}', seed=9)
    assert cfg.seed == 9
    again = ExperimentConfig.model_validate(json.loads(json.dumps(cfg.echo())))
    assert again.echo() == cfg.echo()


# -------------------------------------------------------------------- CLI


def run_cli(tmp_path, sub, doc, name="run", extra=()):
    cfg_path = tmp_path / f"{name}.json"
    cfg_path.write_text(json.dumps(doc))
    out = str(tmp_path / name)
    assert main([sub, "--config", str(cfg_path), "--out", out, *extra]) == 0
    return out


def assert_rerun_identical(tmp_path, sub, out, files):
    again = str(tmp_path / "rerun")
    assert main([sub, "--config", os.path.join(out, "config_echo.json"), "--out", again]) == 0
    for f in files:
        with open(os.path.join(out, f), "rb") as a, open(os.path.join(again, f), "rb") as b:
            assert a.read() == b.read(), f


def test_cli_static_demo(tmp_path):
    out = run_cli(tmp_path, "static-demo", {"experiment": "static_demo", "model": {"T": 500}})
    rows = read_csv(os.path.join(out, "trace.csv"))
    assert rows[0][:5] == ["t", "y", "alpha_hat", "cum_mean", "cum_median"] and len(rows) == 501
    summary = json.load(open(os.path.join(out, "summary.json")))
    assert summary["seed"] == 0 and "runtime_s" in summary
    assert_rerun_identical(tmp_path, "static-demo", out, ["trace.csv"])


def test_cli_lik_compare(tmp_path):
    out = run_cli(tmp_path, "lik-compare", {"experiment": "lik_compare", "model": {"dims": [5, 20]}})
    rows = read_csv(os.path.join(out, "curves.csv"))
    assert rows[0] == ["n", "replicate", "alpha", "enkf", "discrete", "exact"]
    assert len(rows) == 1 + 2 * 201
    echo = json.load(open(os.path.join(out, "config_echo.json")))
    assert echo["model"]["prior_cov"] == "unit_variance_exponential"
    assert_rerun_identical(tmp_path, "lik-compare", out, ["curves.csv"])


def test_cli_linear_sim(tmp_path):
    doc = {"experiment": "linear_sim", "model": {"n": 5, "T": 6},
           "filters": [{"method": "grid_kf_oracle", "grid": {"per_axis": 5}},
                       {"method": "kf_oracle"},
                       {"method": "enkf_grid", "n_members": 20, "grid": {"per_axis": 5}},
                       {"method": "augmentation", "n_members": 20}]}
    out = run_cli(tmp_path, "linear-sim", doc, extra=("--seed", "3"))
    files = ["truth.csv", "trace_grid_kf_oracle.csv", "trace_kf_oracle.csv",
             "trace_enkf_grid.csv", "trace_augmentation.csv"]
    for f in files:
        assert len(read_csv(os.path.join(out, f))) > 6
    header = read_csv(os.path.join(out, "trace_enkf_grid.csv"))[0]
    assert "sigma2_eta_mean" in header and "wallclock_ms" not in header
    summary = json.load(open(os.path.join(out, "summary.json")))
    assert summary["seed"] == 3 and summary["truth"]["sigma2_eta"] == 5.0
    assert "jitter_escalations" in summary["diagnostics"]["enkf_grid"]
    assert_rerun_identical(tmp_path, "linear-sim", out, files)


def test_cli_lorenz_joint_grid(tmp_path):
    doc = {"experiment": "lorenz96", "model": {"T": 3, "spinup_cycles": 20, "joint_grid_times": [1, 3]},
           "filters": [{"method": "enkf_grid", "n_members": 20, "scale_param": "sigma2",
                        "taper": {"kind": "gaspari_cohn", "range": 12}, "grid": {"per_axis": 6}}]}
    out = run_cli(tmp_path, "lorenz96", doc)
    rows = read_csv(os.path.join(out, "joint_grid_enkf_grid.csv"))
    assert rows[0] == ["lambda", "nu", "t1", "t3"]
    vals = np.array(rows[1:], dtype=float)
    assert vals.shape == (36, 4)
    assert vals[:, 2].max() == 1.0 and vals[:, 3].max() == 1.0


def test_cli_external(tmp_path):
    rng = np.random.default_rng(0)
    p = tmp_path / "obs.csv"
    write_rows(p, ["s1,s2,s3,s4"] + [",".join(f"{v:.6f}" for v in rng.exponential(0.2, 4)) for _ in range(5)])
    doc = {"experiment": "external_data", "model": {"csv": "placeholder.csv"},
           "filters": [{"method": "enkf_grid", "n_members": 20, "scale_param": "sigma2_eps",
                        "grid": {"per_axis": 4}, "state_coords": [0, 4]}]}
    out = run_cli(tmp_path, "external", doc, extra=("--csv", str(p)))
    header = read_csv(os.path.join(out, "trace_enkf_grid.csv"))[0]
    assert "x5_mean" in header  # first gamma entry of the augmented state
    summary = json.load(open(os.path.join(out, "summary.json")))
    assert summary["data"] == {"T": 5, "m": 4, "transform": "log1p"}


def test_cli_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"experiment": "linear_sim", "model": {"T": -1}}')
    assert main(["linear-sim", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ConfigError"
    assert main(["lorenz96", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert main(["external", "--out", str(tmp_path / "o")]) == 1
    missing = tmp_path / "missing.csv"
    assert main(["external", "--csv", str(missing), "--out", str(tmp_path / "o")]) == 1
    assert json.loads(capsys.readouterr().err.splitlines()[-1])["error"] == "FileNotFoundError"
