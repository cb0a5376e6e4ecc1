import subprocess
import sys

import numpy as np
import pytest
import yaml

from qpcpanel import DgpConfig, PanelData, generate
from qpcpanel.cli import main
from qpcpanel.io import write_long, write_wide
from qpcpanel.montecarlo import McConfig, run_monte_carlo


@pytest.fixture(scope="module")
def csv_panel(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    data = generate(DgpConfig(n=60, T=6, seed=5), 0)[0]
    write_long(data, d / "panel.csv")
    write_wide(data, d / "wide")
    return d


def _config(path, **kw):
    doc = {"grid": [[30, 6]], "replications": 2, "estimators": ["ls", "pc", "qpc"], "seed": 1}
    doc.update(kw)
    path.write_text(yaml.safe_dump(doc))
    return path


@pytest.mark.parametrize("estimator", ["qpc", "bn", "pc", "ls"])
def test_fit_each_estimator(csv_panel, capsys, estimator):
    assert main(["fit", "--data", str(csv_panel / "panel.csv"), "--estimator", estimator]) == 0
    out = capsys.readouterr().out
    assert f"estimator: {estimator}" in out
    assert "beta2" in out


def test_fit_wide_and_eigr(csv_panel, capsys):
    assert main(["fit", "--data", str(csv_panel / "wide"), "--format", "wide", "--eigr"]) == 0
    out = capsys.readouterr().out
    assert "selected number of factors:" in out


def test_fit_long_and_wide_print_the_same(csv_panel, capsys):
    main(["fit", "--data", str(csv_panel / "panel.csv")])
    long_out = capsys.readouterr().out
    main(["fit", "--data", str(csv_panel / "wide"), "--format", "wide"])
    assert capsys.readouterr().out == long_out


def test_usage_errors_exit_1(csv_panel, capsys):
    with pytest.raises(SystemExit) as e:
        main(["fit"])
    assert e.value.code == 1
    assert main(["fit", "--data", str(csv_panel / "panel.csv"), "--estimator", "pc", "--eigr"]) == 1
    assert main(["fit", "--data", str(csv_panel / "panel.csv"), "--level", "1.5"]) == 1
    with pytest.raises(SystemExit) as e:
        main(["bogus"])
    assert e.value.code == 1


def test_data_errors_exit_2(tmp_path, capsys):
    (tmp_path / "bad.csv").write_text("id,t,y,x1\n1,1,0.5,1.0\n1,2,oops,2.0\n")
    assert main(["fit", "--data", str(tmp_path / "bad.csv")]) == 2
    assert "line 3" in capsys.readouterr().err
    assert main(["fit", "--data", str(tmp_path / "missing.csv")]) == 2


def test_numerical_failure_exit_3(tmp_path, capsys):
    rng = np.random.default_rng(0)
    X = (rng.standard_normal((30, 4)),)
    write_long(PanelData(np.zeros((30, 4)), X), tmp_path / "zero.csv")
    assert main(["fit", "--data", str(tmp_path / "zero.csv")]) == 3
    assert "numerical failure" in capsys.readouterr().err


def test_mc_bad_config_exit_1(tmp_path):
    (tmp_path / "c.yaml").write_text("grid: [[30, 6]]\nunknown_key: 3\n")
    assert main(["mc", "--config", str(tmp_path / "c.yaml")]) == 1
    (tmp_path / "d.yaml").write_text("- just\n- a list\n")
    assert main(["mc", "--config", str(tmp_path / "d.yaml")]) == 1


def test_mc_output_is_byte_identical(tmp_path):
    cfg = _config(tmp_path / "c.yaml")
    for name in ("a.csv", "b.csv"):
        assert main(["mc", "--config", str(cfg), "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a_factors.csv").exists()
    header = (tmp_path / "a.csv").read_text().splitlines()[0]
    assert header == "estimator,n,T,coef,bias,sd,coverage"


def test_mc_markdown_and_overrides(tmp_path, capsys):
    cfg = _config(tmp_path / "c.yaml")
    assert main(["mc", "--config", str(cfg), "--reps", "1", "--seed", "4", "--format", "markdown"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("|") or out.startswith("#")
    assert "qpc" in out


def test_parallel_invariance():
    cfg = McConfig(grid=((30, 6),), replications=6, estimators=("ls", "qpc"), seed=2)
    a = run_monte_carlo(cfg, workers=1)
    b = run_monte_carlo(cfg, workers=8)
    assert a.to_csv() == b.to_csv()
    for key in a.draws:
        np.testing.assert_array_equal(a.draws[key].theta, b.draws[key].theta)


def test_smoke_single_replication_all_estimators():
    cfg = McConfig(grid=((30, 6),), replications=1, seed=0)
    rep = run_monte_carlo(cfg)
    assert {r["estimator"] for r in rep.rows} == {"ls", "pc", "bn", "qpc"}
    assert all(r["reps"] == 1 for r in rep.rows)
    for r in rep.rows:
        assert np.isnan(r["coverage"]) or 0 <= r["coverage"] <= 100
    assert sum(rep.factor_freq.get((30, 6), {}).values()) <= 100 + 1e-9


def test_config_mapping_keys():
    cfg = McConfig.from_mapping(
        {"grid": [[60, 6]], "R_qpc": 4, "alpha0": 0.3, "beta0": [1, 2], "out": "x.csv", "workers": 3}
    )
    assert cfg.R["qpc"] == 4 and cfg.dgp.alpha0 == 0.3 and cfg.dgp.beta0 == (1.0, 2.0)
    with pytest.raises(ValueError):
        McConfig.from_mapping({"grid": []})
    with pytest.raises(ValueError):
        McConfig.from_mapping({"estimators": ["ols"]})


def test_module_entry_point(csv_panel):
    proc = subprocess.run(
        [sys.executable, "-m", "qpcpanel", "fit", "--data", str(csv_panel / "panel.csv"), "--estimator", "ls"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert "alpha" in proc.stdout
