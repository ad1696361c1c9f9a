import json
import shutil
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from quantsens import __version__
from quantsens.cli import main, read_csv_rows
from quantsens.config import load_config
from quantsens.errors import ConfigError
from quantsens.validation import LocationScaleDGP, analytic_qs

DATA = resources.files("quantsens") / "data"


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def write_config(path, **fields):
    path.write_text(json.dumps(fields))
    return path


@pytest.fixture
def sample_dir(tmp_path):
    for name in ("sample_m1.csv", "sample_pce.csv", "sample_config.json"):
        shutil.copy(DATA / name, tmp_path / name)
    return tmp_path


@pytest.fixture(scope="module")
def synthetic(tmp_path_factory):
    """Synthetic panel exported as two single-series CSVs plus a config
    that ingests them as rates."""
    root = tmp_path_factory.mktemp("synthetic")
    sim_cfg = write_config(root / "sim.json", p=1, h=2, seed=1, simulate_T=300,
                           grid={"start": 0.1, "stop": 0.9, "step": 0.1}, impulse_taus=[0.5, 0.9],
                           output_dir="sim")
    assert main(["simulate", "--config", str(sim_cfg)]) == 0
    cfg = write_config(
        root / "run.json", p=1, h=2, seed=3, output_dir="out",
        series=[{"name": "y2", "path": "sim/synthetic_y2.csv", "role": "impulse", "is_rate": True},
                {"name": "y1", "path": "sim/synthetic_y1.csv", "role": "response", "is_rate": True}],
        grid={"start": 0.1, "stop": 0.9, "step": 0.1}, impulse_taus=[0.5, 0.9],
        bootstrap={"replicates": 4},
    )
    assert main(["ingest", "--config", str(cfg)]) == 0
    assert main(["fit", "--config", str(cfg)]) == 0
    return root, cfg


def test_ingest_sample_golden(sample_dir, capsys):
    code, out, _ = run(["ingest", "--config", sample_dir / "sample_config.json"], capsys)
    assert code == 0
    meta = json.loads((sample_dir / "out" / "panel.json").read_text())
    assert meta["gaps"] == 0
    assert meta["observations"] == 287
    assert meta["range"] == ["1999-02", "2022-12"]
    assert [s["dropped_rows"] for s in meta["series"]] == [1, 0]
    assert {s["transform"] for s in meta["series"]} == {"yoy_log_growth_pct"}
    assert meta["version"] == __version__
    header, rows = read_csv_rows(sample_dir / "out" / "panel.csv")
    assert header == ["date", "money_growth", "inflation"] and len(rows) == 287
    first = (sample_dir / "out" / "panel.csv").read_text().splitlines()[0]
    assert first.startswith(f"# quantsens {__version__} config_sha256=")


def test_ingest_rate_passthrough(tmp_path, capsys):
    (tmp_path / "a.csv").write_text("date,a\n2000-01,1.5\n2000-02,2.5\n2000-03,0.5\n")
    (tmp_path / "b.csv").write_text("date,b\n2000-01,3\n2000-02,4\n2000-03,5\n")
    cfg = write_config(tmp_path / "c.json", series=[
        {"name": "a", "path": "a.csv", "role": "impulse", "is_rate": True},
        {"name": "b", "path": "b.csv", "is_rate": True}])
    assert run(["ingest", "--config", cfg], capsys)[0] == 0
    meta = json.loads((tmp_path / "out" / "panel.json").read_text())
    assert [s["transform"] for s in meta["series"]] == ["passthrough", "passthrough"]
    _, rows = read_csv_rows(tmp_path / "out" / "panel.csv")
    assert [float(r[1]) for r in rows] == [1.5, 2.5, 0.5]


def test_ingest_missing_file(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", series=[
        {"name": "a", "path": "missing_a.csv", "role": "impulse"},
        {"name": "b", "path": "b.csv"}])
    code, _, err = run(["ingest", "--config", cfg], capsys)
    assert code == 3
    payload = json.loads(err)
    assert payload["error"] == "DataError" and "missing_a.csv" in payload["message"]


def test_config_errors(tmp_path, capsys):
    assert run(["ingest", "--config", tmp_path / "none.json"], capsys)[0] == 2
    bad = write_config(tmp_path / "bad.json", grid=[0.1, 0.5, 0.9], impulse_taus=[0.25])
    code, _, err = run(["simulate", "--config", bad], capsys)
    assert code == 2 and "not a member" in err
    with pytest.raises(ConfigError):
        load_config({"grid": [0.001, 0.5]})
    with pytest.raises(ConfigError):
        load_config({"h": 0})
    with pytest.raises(ConfigError):
        load_config({"series": [{"name": "a", "path": "x"}, {"name": "b", "path": "y"}]})


def test_fit_artifact(synthetic):
    root, _ = synthetic
    data = json.loads((root / "out" / "system.json").read_text())
    assert len(data["fit_status"]) == 2 * 9 * 2
    assert data["fit_counts"] == {"converged": 36}
    assert np.array(data["B1"]).shape == (18, 3)
    assert data["index"][9] == ["y1", 0.1]
    assert np.isfinite(data["cond"]) and data["h"] == 2


def test_fit_default_grid_counts(tmp_path, capsys):
    sim = write_config(tmp_path / "sim.json", p=1, h=3, seed=2, simulate_T=300, output_dir=".")
    assert run(["simulate", "--config", sim], capsys)[0] == 0
    cfg = write_config(tmp_path / "run.json", p=1, h=3, output_dir=".", series=[
        {"name": "y2", "path": "synthetic_y2.csv", "role": "impulse", "is_rate": True},
        {"name": "y1", "path": "synthetic_y1.csv", "is_rate": True}])
    assert run(["ingest", "--config", cfg], capsys)[0] == 0
    assert run(["fit", "--config", cfg], capsys)[0] == 0
    data = json.loads((tmp_path / "system.json").read_text())
    assert len(data["fit_status"]) == 2 * 99 * 2
    assert len(data["taus"]) == 99


def test_fit_rank_deficient(tmp_path, capsys):
    dates = [f"20{y:02d}-{m:02d}" for y in range(0, 10) for m in range(1, 13)]
    rng = np.random.default_rng(0)
    (tmp_path / "a.csv").write_text("date,a\n" + "".join(f"{d},{v}\n" for d, v in zip(dates, rng.normal(size=120))))
    (tmp_path / "b.csv").write_text("date,b\n" + "".join(f"{d},2.0\n" for d in dates))
    cfg = write_config(tmp_path / "c.json", p=1, h=1, series=[
        {"name": "a", "path": "a.csv", "role": "impulse", "is_rate": True},
        {"name": "b", "path": "b.csv", "is_rate": True}])
    assert run(["ingest", "--config", cfg], capsys)[0] == 0
    code, _, err = run(["fit", "--config", cfg], capsys)
    assert code == 4
    payload = json.loads(err)
    assert payload["error"] == "RankDeficientError" and payload["cond"] > 1e12


def test_fit_rerun_byte_identical(synthetic, tmp_path):
    root, cfg = synthetic
    out = tmp_path / "again.json"
    assert main(["fit", "--config", str(cfg), "--out", str(out)]) == 0
    assert out.read_bytes() == (root / "out" / "system.json").read_bytes()


def identity_system(path):
    payload = {
        "kind": "quantile_system", "variables": ["a", "b"], "impulse": "a", "responses": ["b"],
        "p": 1, "h": 1, "d": 4, "taus": [0.25, 0.75],
        "B1": np.eye(4).tolist(), "Bh": np.eye(4).tolist(), "cond_threshold": 1e12,
        "z_last": [1.0, 0.5, -0.5, 2.0], "z_last_date": "2020-01", "rearrange": True,
        "lookup": {"dates": ["2020-02"], "Z": [[1.0, 0.0, 0.0, 0.0]], "impulse_obs": [0.3]},
    }
    path.write_text(json.dumps(payload))
    return path


def test_qs_identity_unit_spike(tmp_path, capsys):
    system = identity_system(tmp_path / "system.json")
    cfg = write_config(tmp_path / "c.json", grid=[0.25, 0.75], impulse_taus=[0.25, 0.75])
    code, out, _ = run(["qs", "--config", cfg, "--system", system, "--response", "a", "--impulse-tau", "0.75"], capsys)
    assert code == 0
    header, rows = read_csv_rows(tmp_path / "out" / "qs_a_tau0.75.csv")
    assert header == ["tau", "qs"]
    assert [[float(v) for v in r] for r in rows] == [[0.25, 0.0], [0.75, 1.0]]


def test_qs_delta_zero_equals_baseline(tmp_path, capsys):
    system = identity_system(tmp_path / "system.json")
    cfg = write_config(tmp_path / "c.json", grid=[0.25, 0.75], impulse_taus=[0.25])
    code, _, _ = run(["qs", "--config", cfg, "--system", system, "--response", "b", "--delta", "0"], capsys)
    assert code == 0
    header, rows = read_csv_rows(tmp_path / "out" / "qs_b_tau0.25.csv")
    assert header == ["tau", "qs", "perturbed"]
    meta = json.loads((tmp_path / "out" / "qs_b_tau0.25.json").read_text())
    assert [float(r[2]) for r in rows] == meta["baseline"] == [-0.5, 2.0]


def test_qs_at_date(tmp_path, capsys):
    system = identity_system(tmp_path / "system.json")
    cfg = write_config(tmp_path / "c.json", grid=[0.25, 0.75], impulse_taus=[0.25])
    code, _, _ = run(["qs", "--config", cfg, "--system", system, "--response", "b",
                      "--at-date", "2020-02"], capsys)
    assert code == 0
    meta = json.loads((tmp_path / "out" / "qs_b_tau0.75_2020-02.json").read_text())
    # predicted impulse quantiles at z = e1 are (1, 0); sorted (0, 1); 0.3 <= 1 at tau 0.75
    assert meta["resolved_tau"] == 0.75 and meta["at_date"] == "2020-02"
    code, _, err = run(["qs", "--config", cfg, "--system", system, "--response", "b",
                        "--at-date", "1999-01"], capsys)
    assert code == 3


def test_qs_rejects_off_grid_level(tmp_path, capsys):
    system = identity_system(tmp_path / "system.json")
    cfg = write_config(tmp_path / "c.json", grid=[0.25, 0.75], impulse_taus=[0.25])
    code, _, _ = run(["qs", "--config", cfg, "--system", system, "--response", "b", "--impulse-tau", "0.5"], capsys)
    assert code == 2


def test_qs_on_synthetic_system_close_to_truth(synthetic, capsys):
    root, cfg = synthetic
    assert run(["qs", "--config", cfg, "--response", "y1", "--impulse-tau", "0.9"], capsys)[0] == 0
    _, rows = read_csv_rows(root / "out" / "qs_y1_tau0.9.csv")
    taus = [round(0.1 * k, 1) for k in range(1, 10)]
    est = np.array([float(r[1]) for r in rows])
    truth = np.array([analytic_qs(LocationScaleDGP(), taus, 2, "y1", t, "y2", 0.9) for t in taus])
    # T=300 estimate; tolerance is several Monte Carlo standard deviations
    assert np.max(np.abs(est - truth)) < 0.6
    assert len(est) == 9


def test_bootstrap_outputs(synthetic, capsys):
    root, cfg = synthetic
    argv = ["bootstrap", "--config", cfg, "--response", "y1", "--impulse-tau", "0.5", "--replicates", "2"]
    assert run(argv + ["--out-dir", root / "b1"], capsys)[0] == 0
    assert run(argv + ["--out-dir", root / "b2"], capsys)[0] == 0
    a, b = root / "b1" / "band_y1_tau0.5.csv", root / "b2" / "band_y1_tau0.5.csv"
    assert a.read_bytes() == b.read_bytes()
    header, rows = read_csv_rows(a)
    assert header == ["tau", "lower", "center", "upper"] and len(rows) == 9
    meta = json.loads((root / "b1" / "band_y1_tau0.5.json").read_text())
    assert meta["replicates"] == 2 and meta["failures"] == 0
    assert meta["block_length"] == 7 and meta["seed"] == 3


def test_bootstrap_coverage_flag_widens(synthetic, capsys):
    root, cfg = synthetic
    base = ["bootstrap", "--config", cfg, "--response", "y1", "--impulse-tau", "0.9", "--replicates", "20"]
    assert run(base + ["--out-dir", root / "c68"], capsys)[0] == 0
    assert run(base + ["--coverage", "0.9", "--out-dir", root / "c90"], capsys)[0] == 0
    narrow = np.array(read_csv_rows(root / "c68" / "band_y1_tau0.9.csv")[1], dtype=float)
    wide = np.array(read_csv_rows(root / "c90" / "band_y1_tau0.9.csv")[1], dtype=float)
    assert np.all(wide[:, 1] <= narrow[:, 1]) and np.all(wide[:, 3] >= narrow[:, 3])


def test_simulate_truth_recomputed(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", p=1, h=3, seed=1, simulate_T=2000,
                       grid={"start": 0.1, "stop": 0.9, "step": 0.1}, impulse_taus=[0.9])
    assert run(["simulate", "--config", cfg], capsys)[0] == 0
    truth = json.loads((tmp_path / "out" / "truth.json").read_text())
    B1, Bh = np.array(truth["B1"]), np.array(truth["Bh"])
    direct = Bh @ np.linalg.pinv(B1)
    index = [tuple(x) for x in truth["index"]]
    r, c = index.index(("y1", 0.5)), index.index(("y2", 0.9))
    assert truth["Bbar"][r][c] == pytest.approx(direct[r, c], abs=1e-10)
    _, rows = read_csv_rows(tmp_path / "out" / "synthetic_panel.csv")
    assert len(rows) == 2000 and len(truth["taus"]) == 9


def test_simulate_seed_changes_panel_not_truth(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", p=1, h=2, seed=1, simulate_T=100,
                       grid={"start": 0.1, "stop": 0.9, "step": 0.1}, impulse_taus=[0.5])
    assert run(["simulate", "--config", cfg, "--out-dir", tmp_path / "s1"], capsys)[0] == 0
    assert run(["simulate", "--config", cfg, "--seed", "2", "--out-dir", tmp_path / "s2"], capsys)[0] == 0
    t1 = json.loads((tmp_path / "s1" / "truth.json").read_text())
    t2 = json.loads((tmp_path / "s2" / "truth.json").read_text())
    assert t1["Bbar"] == t2["Bbar"] and t1["B1"] == t2["B1"]
    p1 = read_csv_rows(tmp_path / "s1" / "synthetic_panel.csv")[1]
    p2 = read_csv_rows(tmp_path / "s2" / "synthetic_panel.csv")[1]
    assert p1 != p2


def test_subperiods(synthetic, capsys):
    root, cfg = synthetic
    raw = json.loads(Path(cfg).read_text())
    panel_dates = read_csv_rows(root / "out" / "panel.csv")[1]
    raw["breakpoints"] = [panel_dates[150][0]]
    raw["impulse_taus"] = [0.5]
    sub_cfg = write_config(root / "sub.json", **raw)
    assert run(["subperiods", "--config", sub_cfg, "--response", "y1"], capsys)[0] == 0
    assert (root / "out" / "sub0_qs_y1_tau0.5.csv").exists()
    assert (root / "out" / "sub1_qs_y1_tau0.5.csv").exists()


def test_fetch_rejects_plain_http(tmp_path, capsys):
    code, _, err = run(["fetch", "--url", "http://example.com/x.csv", "--out", tmp_path / "x.csv"], capsys)
    assert code == 2 and "https" in err
    assert not (tmp_path / "x.csv").exists()
