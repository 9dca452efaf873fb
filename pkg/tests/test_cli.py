import json
import math

import pytest

from pnph import __version__
from pnph.cli import EXIT_CONFIG, EXIT_REGIME, EXIT_SOLVER, execute, main, resolve_config
from pnph.errors import ConfigError
from pnph.geometry import build_preset, save_raster
from pnph.macro_solver import read_series_csv

CHANNEL = {"preset": "straight_channel_2d", "params": {"p": 0.5, "dims": [8, 8]}}
CURRENT = {"x-": {"type": "APPLIED_CURRENT", "value": 0.5},
           "x+": {"type": "APPLIED_CURRENT", "value": -0.5}}


def _write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def _run(tmp_path, cfg, out="out"):
    code = main(["run", _write(tmp_path, cfg), "--out", str(tmp_path / out)])
    return code, tmp_path / out


def test_cell_run_reports_straight_channel_tensors(tmp_path):
    code, out = _run(tmp_path, {"geometry": CHANNEL, "run": {"model": "cell"}})
    assert code == 0
    rep = json.loads((out / "tensors.json").read_text())
    assert rep["D_hat"] == [[0.5, 0.0], [0.0, pytest.approx(0.0, abs=1e-14)]]
    assert rep["tortuosity"]["PETERSEN"]["tau"][1][1] == "BLOCKED"
    man = json.loads((out / "manifest.json").read_text())
    assert man["version"] == __version__
    assert man["outputs"] == ["tensors.json", "manifest.json"]
    assert man["config"]["solver"]["method"] == "cg"


def test_conductivity_run_on_unit_square(tmp_path):
    geo = {"preset": "rectangle_pore_2d",
           "params": {"a": 1.0, "dims": [64, 64], "lengths": [32 / 31, 32 / 31]}}
    cfg = {"geometry": geo, "run": {"model": "conductivity",
                                    "conductivity": {"rectangle": [1.0, 1.0]}}}
    code, out = _run(tmp_path, cfg)
    assert code == 0
    rep = json.loads((out / "conductivity.json").read_text())
    assert rep["theta_1"] == pytest.approx(2 * math.pi ** 2, rel=1e-2)
    assert rep["bound_holds"] and rep["cheeger_h"] == pytest.approx(2 + math.sqrt(math.pi))
    assert not (out / "tensors.json").exists()


@pytest.mark.parametrize("model", ["macro", "membrane", "thin_dl", "ambipolar"])
def test_macro_family_runs_write_series(tmp_path, model):
    run = {"model": model, "grid": [12], "steps": 3, "dt": 0.01, "bc": CURRENT,
           "initial": {"amplitude": 0.2}, "eps_bar": 0.1}
    if model == "ambipolar":
        run["bc"] = {}
    code, out = _run(tmp_path, {"geometry": dict(CHANNEL, sigma=-0.05), "run": run})
    assert code == 0
    rows = read_series_csv(out / "series.csv")
    assert len(rows) == 4 * 12 and rows[0]["model"] == model
    summary = json.loads((out / "summary.json").read_text())
    assert summary["model"] == model


def test_thin_film_and_micro_runs(tmp_path):
    bc = {"x-": {"type": "DIRICHLET", "c_plus": 1, "c_minus": 1, "phi": 1.0},
          "x+": {"type": "DIRICHLET", "c_plus": 1, "c_minus": 1, "phi": 0.0}}
    code, out = _run(tmp_path, {"geometry": CHANNEL, "run": {"model": "thin_film", "grid": [5], "bc": bc}})
    assert code == 0
    phi = [r["phi"] for r in read_series_csv(out / "series.csv")]
    assert phi == pytest.approx([0.9, 0.7, 0.5, 0.3, 0.1], abs=1e-12)
    cfg = {"geometry": dict(CHANNEL, sigma=-0.05, epsilon=0.2),
           "run": {"model": "micro", "tiles": [2], "steps": 2, "initial": {"amplitude": 0.2}}}
    code, out = _run(tmp_path, cfg, "micro")
    assert code == 0
    assert len((out / "snapshot.csv").read_text().splitlines()) == 1 + 16 * 16
    assert len(read_series_csv(out / "series.csv")) == 3 * 4


def test_compare_run(tmp_path):
    cfg = {"geometry": dict(CHANNEL, sigma=-0.05, epsilon=0.1),
           "run": {"model": "compare", "tiles": [1, 2], "steps": 2, "dt": 5e-3,
                   "initial": {"amplitude": 0.5}}}
    code, out = _run(tmp_path, cfg)
    assert code == 0
    data = json.loads((out / "compare.json").read_text())
    assert data["tiles"] == [1, 2]
    assert [r["n"] for r in data["reports"]] == [1, 2]
    assert all("runtimes" not in r for r in data["reports"])
    assert isinstance(data["strictly_decreasing"], bool)


def test_rerun_is_idempotent(tmp_path):
    cfg = {"geometry": CHANNEL, "run": {"model": "macro", "grid": [8], "steps": 2, "bc": CURRENT,
                                        "initial": {"amplitude": 0.3}}}
    _, out = _run(tmp_path, cfg)
    first = {p.name: p.read_bytes() for p in out.iterdir()}
    _, out = _run(tmp_path, cfg)
    assert {p.name: p.read_bytes() for p in out.iterdir()} == first


def test_execute_is_deterministic_in_memory():
    cfg = resolve_config({"geometry": CHANNEL, "run": {"model": "thin_dl", "grid": [6], "bc": CURRENT}})
    assert execute(cfg) == execute(cfg)


def test_raster_geometry_relative_path(tmp_path):
    save_raster(build_preset("rectangle_pore_2d", a=0.5, dims=(8, 8)), tmp_path / "cell.txt")
    cfg = {"geometry": {"raster": "cell.txt", "epsilon": 0.5, "alpha": 0.25}, "run": {"model": "cell"}}
    code, out = _run(tmp_path, cfg)
    assert code == 0
    rep = json.loads((out / "tensors.json").read_text())
    assert rep["epsilon"] == 0.5 and rep["alpha"] == 0.25


@pytest.mark.parametrize("cfg", [
    {"geometry": CHANNEL},
    {"geometry": CHANNEL, "run": {"model": "fluid"}},
    {"geometry": {"preset": "hexagon"}, "run": {"model": "cell"}},
    {"geometry": {"preset": "straight_channel_2d", "params": {"q": 1}}, "run": {"model": "cell"}},
    {"geometry": {"raster": "missing.txt"}, "run": {"model": "cell"}},
    {"geometry": CHANNEL, "run": {"model": "macro", "dt": 0}},
    {"geometry": CHANNEL, "run": {"model": "macro", "bc": {"x-": {"type": "DIRICHLET"}}}},
    {"geometry": CHANNEL, "solver": {"tol": -1}, "run": {"model": "cell"}},
    {"geometry": CHANNEL, "run": {"model": "thin_film", "grid": [4]}},
    {"geometry": CHANNEL, "run": {"model": "macro", "grid": [4, 4, 4], "axes": [0, 1, 2]}},
])
def test_config_errors_exit_2_without_outputs(tmp_path, cfg):
    code, out = _run(tmp_path, cfg)
    assert code == EXIT_CONFIG
    assert not out.exists()


def test_unreadable_config(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert main(["validate", str(path)]) == EXIT_CONFIG
    assert main(["validate", str(tmp_path / "none.json")]) == EXIT_CONFIG


def test_missing_output_directory(tmp_path):
    path = _write(tmp_path, {"geometry": CHANNEL, "run": {"model": "cell"}})
    assert main(["run", path]) == EXIT_CONFIG


def test_output_directory_from_config(tmp_path):
    cfg = {"geometry": CHANNEL, "run": {"model": "cell"}, "output": {"directory": str(tmp_path / "o")}}
    assert main(["run", _write(tmp_path, cfg)]) == 0
    assert (tmp_path / "o" / "tensors.json").exists()


def test_solver_failure_exit_3(tmp_path):
    bc = {"x-": {"type": "APPLIED_CURRENT", "value": 1.0}}
    code, out = _run(tmp_path, {"geometry": CHANNEL, "run": {"model": "thin_dl", "grid": [10], "bc": bc}})
    assert code == EXIT_SOLVER
    assert not out.exists()


def test_depletion_exit_4(tmp_path):
    bc = {"x-": {"type": "APPLIED_CURRENT", "value": 10.0},
          "x+": {"type": "APPLIED_CURRENT", "value": -10.0}}
    cfg = {"geometry": dict(CHANNEL, sigma=-0.1),
           "run": {"model": "thin_dl", "grid": [20], "dt": 0.05, "steps": 40, "mode": "implicit", "bc": bc}}
    code, out = _run(tmp_path, cfg)
    assert code == EXIT_REGIME
    assert not out.exists()


def test_validate_and_presets(tmp_path, capsys):
    path = _write(tmp_path, {"geometry": CHANNEL, "run": {"model": "cell"}})
    assert main(["validate", path]) == 0
    assert main(["presets"]) == 0
    listed = capsys.readouterr().out
    for name in ("straight_channel_2d", "perturbed_channel_3d", "circular_inclusion_2d"):
        assert name in listed


def test_resolve_config_fills_defaults():
    cfg = resolve_config({"geometry": CHANNEL, "run": {"model": "cell"}})
    assert cfg["run"]["steps"] == 10 and cfg["run"]["initial"]["salt"] == 1.0
    with pytest.raises(ConfigError):
        resolve_config({"geometry": CHANNEL, "run": {"model": "cell", "extra": 1}})
