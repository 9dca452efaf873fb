"""Command-line front end: ``pnph run | validate | presets``.

A run is described by one JSON file::

    {
      "geometry": {"preset": "straight_channel_2d", "params": {"p": 0.5},
                   "sigma": -0.05, "epsilon": 0.1, "alpha": 0.0},
      "solver":   {"tol": 1e-10, "method": "cg"},
      "run":      {"model": "macro", "grid": [64], "dt": 0.01, "steps": 20,
                   "bc": {"x-": {"type": "DIRICHLET", "c_plus": 1, "c_minus": 1, "phi": 0}}},
      "output":   {"directory": "out"}
    }

All outputs are computed in memory and written at the end, so a failing
run leaves no partial files.  Exit codes: 0 success, 2 configuration
error, 3 solver failure, 4 physical-regime error.
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
import time

import jsonschema
import numpy as np

from . import __version__
from .cell_solver import DEFAULT_TOL
from .conductivity import conductivity_report
from .errors import ConfigError, PhysicalRegimeError, SolverError
from .geometry import PRESETS, build_preset, load_raster
from .limits import (ambipolar_coefficients, ambipolar_species, ambipolar_step, membrane_tensors,
                     thin_dl_solve, thin_film_potential)
from .macro_solver import (BoundarySpec, MacroGrid, MacroProblem, MacroState, format_series_csv,
                           run_summary)
from .micro_solver import (average_domain, build_perforated_domain, compare_micro_macro, initial_state,
                           format_snapshot_csv, step_micro_pnp)
from .tensors import effective_tensors, tensor_report

logger = logging.getLogger("pnph")

MODELS = ("cell", "macro", "micro", "thin_dl", "membrane", "thin_film", "ambipolar",
          "conductivity", "compare")
EXIT_CONFIG, EXIT_SOLVER, EXIT_REGIME = 2, 3, 4

_POS = {"type": "number", "exclusiveMinimum": 0}
_BC = {
    "type": "object",
    "propertyNames": {"enum": ["x-", "x+", "y-", "y+", "z-", "z+"]},
    "additionalProperties": {
        "type": "object",
        "properties": {
            "type": {"enum": ["DIRICHLET", "NO_FLUX", "APPLIED_CURRENT"]},
            "c_plus": {"type": "number", "minimum": 0},
            "c_minus": {"type": "number", "minimum": 0},
            "phi": {"type": "number"},
            "value": {"type": "number"},
        },
        "required": ["type"],
        "additionalProperties": False,
        "allOf": [
            {"if": {"properties": {"type": {"const": "DIRICHLET"}}},
             "then": {"required": ["c_plus", "c_minus", "phi"]}},
            {"if": {"properties": {"type": {"const": "APPLIED_CURRENT"}}},
             "then": {"required": ["value"]}},
        ],
    },
}

SCHEMA = {
    "type": "object",
    "required": ["geometry", "run"],
    "additionalProperties": False,
    "properties": {
        "geometry": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "preset": {"enum": list(PRESETS)},
                "params": {"type": "object"},
                "raster": {"type": "string"},
                "sigma": {"type": "number"},
                "epsilon": _POS,
                "alpha": {"type": "number", "minimum": 0},
            },
            "oneOf": [{"required": ["preset"]}, {"required": ["raster"]}],
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tol": _POS,
                "method": {"enum": ["cg", "direct"]},
                "newton_tol": _POS,
                "eig_tol": _POS,
            },
        },
        "run": {
            "type": "object",
            "required": ["model"],
            "additionalProperties": False,
            "properties": {
                "model": {"enum": list(MODELS)},
                "grid": {"type": "array", "items": {"type": "integer", "minimum": 1},
                         "minItems": 1, "maxItems": 3},
                "lengths": {"type": "array", "items": _POS, "minItems": 1, "maxItems": 3},
                "axes": {"type": "array", "items": {"type": "integer", "minimum": 0},
                         "minItems": 1, "maxItems": 3},
                "dt": _POS,
                "steps": {"type": "integer", "minimum": 0},
                "mode": {"enum": ["semi_implicit", "implicit"]},
                "bc": _BC,
                "rho_s": {"type": "number"},
                "initial": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "salt": _POS,
                        "amplitude": {"type": "number"},
                        "wavenumber": {"type": "integer", "minimum": 0},
                    },
                },
                "tiles": {"type": "array", "items": {"type": "integer", "minimum": 1, "maximum": 8},
                          "minItems": 1},
                "eps_bar": _POS,
                "ambipolar": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {k: _POS for k in ("z_plus", "z_minus", "D_plus", "D_minus",
                                                     "M_plus", "M_minus", "kT", "e")},
                },
                "conductivity": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "s": _POS, "c": {"type": "number", "minimum": 0},
                        "p": _POS, "epsilon": {"type": "number", "minimum": 0},
                        "rectangle": {"type": "array", "items": _POS, "minItems": 2, "maxItems": 2},
                    },
                },
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"directory": {"type": "string"}},
        },
    },
}

DEFAULTS = {
    "solver": {"tol": DEFAULT_TOL, "method": "cg", "newton_tol": 1e-10, "eig_tol": 1e-8},
    "run": {"dt": 0.01, "steps": 10, "mode": "semi_implicit", "bc": {},
            "initial": {"salt": 1.0, "amplitude": 0.0, "wavenumber": 1}, "tiles": [1, 2, 4],
            "eps_bar": 1.0},
}


# ---------------------------------------------------------------------------
# configuration


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def resolve_config(cfg: dict, base_dir: str = ".") -> dict:
    """Validate against :data:`SCHEMA` and fill defaults.

    Raises
    ------
    ConfigError
    """
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    out = copy.deepcopy(cfg)
    for sec, vals in DEFAULTS.items():
        section = out.setdefault(sec, {})
        for k, v in vals.items():
            section.setdefault(k, copy.deepcopy(v))
    init = out["run"]["initial"]
    for k, v in DEFAULTS["run"]["initial"].items():
        init.setdefault(k, v)
    geo = out["geometry"]
    if "raster" in geo:
        path = geo["raster"]
        if not os.path.isabs(path):
            path = os.path.normpath(os.path.join(base_dir, path))
        if not os.path.isfile(path):
            raise ConfigError(f"raster file {geo['raster']!r} does not exist")
        geo["raster"] = path
    out.setdefault("output", {})
    BoundarySpec.from_dict(out["run"]["bc"])
    return out


def _cell(cfg):
    geo = cfg["geometry"]
    common = {k: geo[k] for k in ("sigma", "epsilon", "alpha") if k in geo}
    if "raster" in geo:
        cell = load_raster(geo["raster"])
        return cell.replace(**common) if common else cell
    try:
        return build_preset(geo["preset"], geo.get("params", {}), **common)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _grid(cfg, t):
    run = cfg["run"]
    shape = tuple(run.get("grid", [32]))
    axes = tuple(run.get("axes", range(len(shape))))
    if max(axes) >= t.ndim:
        raise ConfigError(f"grid axes {axes} exceed the tensor dimension {t.ndim}")
    return MacroGrid(shape, run.get("lengths"), axes)


def _salt_profile(cfg):
    init = cfg["run"]["initial"]

    def c0(x, y=None):
        return init["salt"] * (1.0 + init["amplitude"] * np.cos(2 * np.pi * init["wavenumber"] * x))

    return c0


def _initial(cfg, grid, t):
    c = _salt_profile(cfg)(grid.centers()[0])
    delta = -t.rho_s / (2.0 * t.p)
    if np.any(c <= abs(delta)):
        raise ConfigError("initial salt too small for a neutral state with this rho_s")
    return c, delta


# ---------------------------------------------------------------------------
# models


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _series(states, model) -> str:
    return format_series_csv(states, model=model)


def _tensors(cfg, cell):
    s = cfg["solver"]
    t = effective_tensors(cell, tol=s["tol"], method=s["method"])
    if "rho_s" in cfg["run"]:
        t = t.with_rho_s(cfg["run"]["rho_s"])
    return t


def _run_macro(cfg, t, model):
    run = cfg["run"]
    grid = _grid(cfg, t)
    bc = BoundarySpec.from_dict(run["bc"])
    c, delta = _initial(cfg, grid, t)
    tt = membrane_tensors(t, run["eps_bar"]) if model == "membrane" else t
    prob = MacroProblem(grid, tt, bc)
    state = MacroState(grid, c + delta, c - delta, np.zeros(grid.shape))
    mode = "implicit" if model == "membrane" else run["mode"]
    states = [state]
    for _ in range(run["steps"]):
        state = prob.step(state, run["dt"], mode=mode, newton_tol=cfg["solver"]["newton_tol"])
        states.append(state)
    summary = run_summary(states, tt, prob.residuals(state), model=model)
    return {"series.csv": _series(states, model), "summary.json": _dump_json(summary)}


def _run_thin_dl(cfg, t):
    run = cfg["run"]
    grid = _grid(cfg, t)
    bc = BoundarySpec.from_dict(run["bc"])
    c, _ = _initial(cfg, grid, t)
    traj = thin_dl_solve(grid, c, t, bc, run["dt"], run["steps"],
                         implicit=run["mode"] == "implicit")
    states = [traj.state(k) for k in range(len(traj.times))]
    summary = run_summary(states, t, model="thin_dl")
    summary["current_residuals"] = traj.current_residuals
    return {"series.csv": _series(states, "thin_dl"), "summary.json": _dump_json(summary)}


def _run_thin_film(cfg, t):
    grid = _grid(cfg, t)
    bc = BoundarySpec.from_dict(cfg["run"]["bc"])
    phi = thin_film_potential(grid, t, bc)
    c, delta = _initial(cfg, grid, t)
    state = MacroState(grid, c + delta, c - delta, phi)
    return {"series.csv": _series([state], "thin_film")}


def _run_ambipolar(cfg, t):
    run = cfg["run"]
    grid = _grid(cfg, t)
    bc = BoundarySpec.from_dict(run["bc"])
    a = {"z_plus": 1.0, "z_minus": 1.0, "D_plus": 1.0, "D_minus": 1.0, "M_plus": 1.0,
         "M_minus": 1.0, "kT": 1.0, "e": 1.0}
    a.update(run.get("ambipolar", {}))
    e = a.pop("e")
    coeffs = ambipolar_coefficients(**a)
    has_dirichlet = any(v["type"] == "DIRICHLET" for v in run["bc"].values())
    phi = thin_film_potential(grid, t, bc) if has_dirichlet else np.zeros(grid.shape)
    salt, _ = _initial(cfg, grid, t)
    # ambipolar salt of the neutral state with species salt -+ rho_s/(2p)
    c = 2.0 * salt
    states, time_ = [], 0.0
    for k in range(run["steps"] + 1):
        if k:
            c = ambipolar_step(grid, c, coeffs, t, t.rho_s, phi, run["dt"], e=e, bc=bc)
            time_ += run["dt"]
        cp, cm = ambipolar_species(c, coeffs, t.rho_s, t.p, e)
        states.append(MacroState(grid, cp, cm, phi, time_))
    out = {"series.csv": _series(states, "ambipolar")}
    out["summary.json"] = _dump_json({"model": "ambipolar", "D_bar": coeffs.D_bar,
                                      "z_bar": coeffs.z_bar, "steps": run["steps"]})
    return out


def _run_micro(cfg, cell, t):
    run = cfg["run"]
    n = run["tiles"][-1]
    bc = BoundarySpec.from_dict(run["bc"])
    dom = build_perforated_domain(cell, n, bc)
    delta = -t.rho_s / (2.0 * t.p)
    c0 = _salt_profile(cfg)
    st = initial_state(dom, lambda x, y: c0(x, y) + delta, lambda x, y: c0(x, y) - delta)
    grid = MacroGrid((n, n), dom.lengths)
    states = []
    for k in range(run["steps"] + 1):
        if k:
            st = step_micro_pnp(dom, st, run["dt"], mode="implicit")
        avg = average_domain(dom, st)
        states.append(MacroState(grid, avg["c_plus"], avg["c_minus"], avg["phi"], st.time))
    return {"snapshot.csv": format_snapshot_csv(dom, st), "series.csv": _series(states, "micro")}


def _run_compare(cfg, cell, t):
    run = cfg["run"]
    bc = BoundarySpec.from_dict(run["bc"])
    reports = []
    for n in run["tiles"]:
        r = compare_micro_macro(cell, n, c0=_salt_profile(cfg), dt=run["dt"], steps=run["steps"],
                                bc=bc, tensors=t, mode="implicit")
        logger.info("compare n=%d: L2=%.3e runtimes %s", n, r.L2, r.runtimes)
        d = r.to_dict()
        d.pop("runtimes")
        reports.append(d)
    L2 = [r["L2"] for r in reports]
    data = {"tiles": run["tiles"], "reports": reports,
            "strictly_decreasing": bool(all(b < a for a, b in zip(L2, L2[1:])))}
    return {"compare.json": _dump_json(data)}


def execute(cfg: dict) -> dict:
    """Run a resolved configuration; returns ``{filename: content}``."""
    model = cfg["run"]["model"]
    if model == "conductivity":
        cell = _cell(cfg)
        opts = dict(cfg["run"].get("conductivity", {}))
        rect = opts.pop("rectangle", None)
        rep = conductivity_report(cell, rectangle=rect, tol=cfg["solver"]["eig_tol"],
                                  geometry=cfg["geometry"], **opts)
        return {"conductivity.json": _dump_json(rep)}
    cell = _cell(cfg)
    t = _tensors(cfg, cell)
    files = {"tensors.json": _dump_json(tensor_report(t))}
    if model in ("macro", "membrane"):
        files.update(_run_macro(cfg, t, model))
    elif model == "thin_dl":
        files.update(_run_thin_dl(cfg, t))
    elif model == "thin_film":
        files.update(_run_thin_film(cfg, t))
    elif model == "ambipolar":
        files.update(_run_ambipolar(cfg, t))
    elif model == "micro":
        files.update(_run_micro(cfg, cell, t))
    elif model == "compare":
        files.update(_run_compare(cfg, cell, t))
    return files


def manifest(cfg: dict, files) -> dict:
    return {"version": __version__, "config": cfg, "outputs": sorted(files) + ["manifest.json"]}


# ---------------------------------------------------------------------------
# entry point


def _cmd_run(args) -> int:
    cfg = resolve_config(load_config(args.config), os.path.dirname(os.path.abspath(args.config)))
    out_dir = args.out or cfg["output"].get("directory")
    if not out_dir:
        raise ConfigError("no output directory: pass --out DIR or set output.directory")
    cfg["output"]["directory"] = out_dir
    t0 = time.perf_counter()
    files = execute(cfg)
    files["manifest.json"] = _dump_json(manifest(cfg, files))
    os.makedirs(out_dir, exist_ok=True)
    for name, content in files.items():
        with open(os.path.join(out_dir, name), "w") as fh:
            fh.write(content)
    logger.info("wrote %d files to %s in %.2f s", len(files), out_dir, time.perf_counter() - t0)
    return 0


def _cmd_validate(args) -> int:
    resolve_config(load_config(args.config), os.path.dirname(os.path.abspath(args.config)))
    print(f"{args.config}: ok")
    return 0


PRESET_HELP = {
    "straight_channel_2d": "slab channel along x1; params p, dims (64, 64)",
    "straight_channel_3d": "slab channel along x1 and x3; params p, dims (64, 64, 64)",
    "perturbed_channel_3d": "slab channel with staggered wall notches; params p, notch_depth, "
                            "notch_width, dims (48, 48, 48)",
    "rectangle_pore_2d": "centred a x b pore in solid; params a, b, dims (64, 64)",
    "circular_inclusion_2d": "solid disk in pore; params radius, dims (64, 64)",
}


def _cmd_presets(args) -> int:
    for name in PRESETS:
        print(f"{name}: {PRESET_HELP.get(name, '')}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pnph", description="Homogenized PNP toolkit")
    ap.add_argument("--version", action="version", version=f"pnph {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a configuration")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (overrides output.directory)")
    r.set_defaults(func=_cmd_run)
    v = sub.add_parser("validate", help="check a configuration without running it")
    v.add_argument("config")
    v.set_defaults(func=_cmd_validate)
    p = sub.add_parser("presets", help="list geometry presets")
    p.set_defaults(func=_cmd_presets)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except PhysicalRegimeError as exc:
        print(f"physical regime error: {exc}", file=sys.stderr)
        return EXIT_REGIME
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
