import json
import math
from pathlib import Path

import numpy as np
import pytest

from marktail.cli import RunManifest, main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def report(text):
    return dict(line.split(": ", 1) for line in text.strip().splitlines() if ": " in line)


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return path


def test_solve_two_state(capsys):
    code, out, _ = run(capsys, "solve", CONFIGS / "two_state.json")
    assert code == 0
    assert float(report(out)["alpha"]) == pytest.approx(2.0, abs=1e-12)


def test_solve_json_and_tau(capsys):
    code, out, _ = run(capsys, "solve", CONFIGS / "two_state.json", "--tau", "0.999", "--json")
    d = json.loads(out)
    assert code == 0 and 4 / 3 < d["alpha"] < 1.4
    assert "perron_x" in d


def test_solve_geometric_bounds(tmp_path, capsys):
    spec = write_json(tmp_path / "g.json", {"Pi": [[1.0]], "p": 0.5,
                                            "dists": {"type": "point", "value": 1.0}})
    code, out, _ = run(capsys, "solve", spec, "--bounds")
    r = report(out)
    assert code == 0
    assert float(r["lower_bound"]) == pytest.approx(1.0)
    assert float(r["upper_bound"]) == pytest.approx(2.0)


def test_solve_lower_side(capsys):
    code, out, _ = run(capsys, "solve", CONFIGS / "gaussian_three_state.json", "--side", "lower")
    assert code == 0 and float(report(out)["beta"]) > 0


def test_validation_error_names_row(tmp_path, capsys):
    spec = write_json(tmp_path / "bad.json", {"Pi": [[0.5, 0.5], [0.2, 0.7]], "p": 0.1,
                                              "dists": {"type": "point", "value": 0.0}})
    code, _, err = run(capsys, "solve", spec)
    assert code == 2 and "row 1" in err


@pytest.mark.parametrize("content", ["{not json", None])
def test_bad_files_exit_2(tmp_path, capsys, content):
    p = tmp_path / "x.json"
    if content is not None:
        p.write_text(content)
    code, _, err = run(capsys, "solve", p)
    assert code == 2 and err.startswith("error")


def test_no_solution_exit_3(tmp_path, capsys):
    spec = write_json(tmp_path / "neg.json", {"Pi": [[1.0]], "p": 0.1,
                                              "dists": {"type": "point", "value": -0.01}})
    code, _, err = run(capsys, "solve", spec)
    assert code == 3 and "no solution" in err


def test_unknown_option_exit_2(capsys):
    assert run(capsys, "solve", "x.json", "--side", "middle")[0] == 2
    assert run(capsys, "frobnicate")[0] == 2


def test_compstat(capsys):
    code, out, _ = run(capsys, "compstat", CONFIGS / "gaussian_three_state.json", "--fd", "--json")
    d = json.loads(out)
    assert code == 0
    a, b = np.array(d["dAlpha_dMu"]), np.array(d["fd_dAlpha_dMu"])
    assert np.linalg.norm(a - b) / np.linalg.norm(b) < 1e-5
    assert d["dAlpha_dTau"] < 0


def test_compstat_counterexample(capsys):
    code, out, _ = run(capsys, "compstat", "--counterexample")
    rows = [list(map(float, l.split(","))) for l in out.strip().splitlines()[1:]]
    assert code == 0 and len(rows) == 9
    for tau, solved, closed in rows:
        assert solved == pytest.approx(closed, abs=1e-9)


def test_compstat_needs_location_scale(capsys):
    code, _, err = run(capsys, "compstat", CONFIGS / "two_state.json")
    assert code == 2


def test_simulate_and_manifest_replay(tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    code, out, _ = run(capsys, "simulate", CONFIGS / "gaussian_three_state.json",
                       "--paths", 2000, "--seed", 9, "--out", "s.csv")
    assert code == 0
    m = RunManifest.read("s.csv.manifest.json")
    assert m.seed == 9 and m.command == "simulate" and "s.csv" in m.outputs
    assert str(CONFIGS / "gaussian_three_state.json") in m.inputs
    code, out, _ = run(capsys, "replay", "s.csv.manifest.json")
    assert code == 0 and "ok s.csv" in out
    # a manifest whose recorded hash disagrees with the re-run is reported
    m.outputs["s.csv"] = "0" * 64
    m.write("s.csv.manifest.json")
    code, out, _ = run(capsys, "replay", "s.csv.manifest.json")
    assert code == 4 and "MISMATCH" in out


def test_outputs_have_17_digits(tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    run(capsys, "solve", CONFIGS / "gaussian_three_state.json", "--out", "r.txt")
    alpha = report(Path("r.txt").read_text())["alpha"]
    assert len(alpha.replace(".", "").lstrip("0")) == 17


def pareto_csv(path, alpha=1.3, n=100_000):
    x = np.random.default_rng(0).random(n) ** (-1 / alpha)
    path.write_text("value\n" + "\n".join(f"{v:.17g}" for v in x) + "\n")
    return path


def test_hill_value_column(tmp_path, capsys):
    code, out, _ = run(capsys, "hill", pareto_csv(tmp_path / "p.csv"), "--tail-fraction", 0.1)
    assert code == 0 and abs(float(report(out)["alpha_hat"]) - 1.3) < 0.05


def test_hill_panel_uses_latest_period(tmp_path, capsys):
    x = np.random.default_rng(1).random(2000) ** (-1 / 1.3)
    rows = [f"{i},1,1.0" for i in range(2000)] + [f"{i},2,{v:.17g}" for i, v in enumerate(x)]
    p = tmp_path / "panel.csv"
    p.write_text("unit_id,period,size\n" + "\n".join(rows) + "\n")
    code, out, _ = run(capsys, "hill", p)
    assert code == 0 and int(report(out)["k"]) == 200


def test_hill_bad_csv(tmp_path, capsys):
    p = tmp_path / "b.csv"
    p.write_text("a,b\n1,2\n")
    assert run(capsys, "hill", p)[0] == 2


def recovery_panel(path):
    from marktail.regimefit import RegimeModel, simulate_panel
    m = RegimeModel([[0.9, 0.1], [0.2, 0.8]], [-0.03, 0.05], [0.04, 0.02])
    y = simulate_panel(m, 1000, 8, seed=1)
    lines = ["unit_id,period,size"]
    for u, g in enumerate(y):
        sizes = np.exp(np.concatenate([[0.0], np.cumsum(g)]))
        lines += [f"{u},{t},{s:.17g}" for t, s in enumerate(sizes)]
    path.write_text("\n".join(lines) + "\n")
    return m, path


def test_fit_recovers_parameters(tmp_path, capsys):
    true, p = recovery_panel(tmp_path / "panel.csv")
    code, out, _ = run(capsys, "fit", p, "--states", 2, "--mean-age", 150, 400, "--json")
    assert code == 0
    d = json.loads(out)["fits"][0]
    m = d["model"]
    np.testing.assert_allclose(m["mu"], true.mu, atol=0.01)
    np.testing.assert_allclose(m["sigma"], true.sigma, atol=0.005)
    np.testing.assert_allclose(m["Pi"], true.Pi, atol=0.05)
    assert set(d["implied_exponent"]) == {"150", "400"}
    assert d["implied_exponent"]["150"] > d["implied_exponent"]["400"]


def test_aiyagari_benchmark(capsys):
    code, out, _ = run(capsys, "aiyagari", CONFIGS / "aiyagari_benchmark.json")
    r = report(out)
    assert code == 0
    assert 1.50 <= float(r["omega_star"]) <= 1.65 and 1.00 <= float(r["zeta"]) <= 1.15
    code2, out2, _ = run(capsys, "aiyagari", "benchmark")
    assert report(out2)["zeta"] == r["zeta"]


def test_aiyagari_simulate(tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    code, out, _ = run(capsys, "aiyagari", "benchmark", "--simulate", "--agents", 3000,
                       "--periods", 100, "--panel-out", "w.csv", "--json")
    d = json.loads(out)
    assert code == 0 and "hill_zeta" in d
    assert Path("w.csv.manifest.json").exists()


@pytest.mark.parametrize("kind,extra", [
    ("exponent_vs_tau", ["--spec", CONFIGS / "two_state.json", "--num", 10]),
    ("tail_curve", ["--spec", CONFIGS / "gaussian_three_state.json", "--paths", 20000,
                    "--num", 10]),
    ("rank_size", ["--agents", 2000, "--periods", 50, "--top", 100]),
])
def test_plot_data(tmp_path, capsys, monkeypatch, kind, extra):
    monkeypatch.chdir(tmp_path)
    code, _, _ = run(capsys, "plot-data", kind, "--out", "p.csv", *extra)
    assert code == 0
    head = Path("p.csv").read_text().splitlines()[0]
    from marktail.plotdata import COLUMNS
    assert head == ",".join(COLUMNS[kind])
    assert run(capsys, "replay", "p.csv.manifest.json")[0] == 0


def test_plot_data_missing_input(capsys):
    code, _, err = run(capsys, "plot-data", "exponent_vs_tau", "--out", "x.csv")
    assert code == 2 and "--spec" in err
