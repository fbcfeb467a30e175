"""
Batch driver
============

``genesol run CONFIG``
    solve -> coarsen -> construct -> verify, writing a trajectory, a
    measure file, an optional varifold file and a JSON report.
``genesol report PATH``
    Summaries of any file written by ``run``.
``genesol verify TRAJECTORY CONFIG``
    Verification stage only, on an existing trajectory.
``genesol convert TRAJECTORY --to {measure,varifold}``
    Coarse-grain a trajectory into measures or defect varifolds.

Exit codes: 0 success, 1 failed assertion, 2 configuration or input
error, 3 pipeline error. ``GENESOL_THREADS`` caps the worker count.
"""

import argparse
import configparser
import csv
import hashlib
import json
import logging
import os
import sys
import warnings
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .coarse_grain import coarsen_trajectory
from .energy import quadratic_model, regularized_model
from .errors import ConfigError, FormatError, GenesolError, StabilityWarning
from .evi_verifier import (
    TestFunctionBasis,
    compatibility_check,
    elastic_basis,
    evi_residual_elastic,
    hat_profiles,
    mvs_residual_elastic,
    ramp_profiles,
)
from .integrator import (
    ElasticState,
    manufactured_linear_solution,
    oscillatory_initial_data,
    simulate,
)
from .io import (
    FORMAT_VERSION,
    REPORT_KIND,
    read_measures,
    read_report,
    read_trajectory,
    read_varifolds,
    sniff,
    write_measures,
    write_report,
    write_trajectory,
    write_varifolds,
)
from .measure_kit import DefectField, build_varifold
from .torus import TorusField, TorusGrid, integrate

__all__ = ["ExperimentConfig", "load_config", "run_pipeline", "build_model", "main", "PipelineError"]

log = logging.getLogger("genesol")

EXIT_OK, EXIT_ASSERT, EXIT_CONFIG, EXIT_PIPELINE = 0, 1, 2, 3

SCHEMA = {
    "model": {"kind": str, "dim": int, "delta": float},
    "grid": {"extent": "ints", "period": "floats"},
    "initial": {"kind": str, "amplitude": float, "wavelength_cells": int, "path": str,
                "node": int, "noise": float},
    "integrator": {"dt": float, "steps": int, "viscosity": float, "seed": int, "newton_tol": float},
    "coarsen": {"block": int},
    "construct": {"kind": str},
    "verify": {"evi": bool, "mvs": bool, "max_index": int, "hats": bool, "weight_constant": float,
               "evi_tolerance": float, "mvs_tolerance": float, "energy_tolerance": float,
               "threads": int},
    "output": {"directory": str, "trajectory": str, "measure": str, "varifold": str, "report": str},
}


class PipelineError(GenesolError):
    """A pipeline stage failed."""

    def __init__(self, stage, exc):
        super().__init__(f"stage {stage!r} failed: {type(exc).__name__}: {exc}")
        self.stage = stage


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment settings; see ``demos/configs`` for examples."""

    source: str
    model_kind: str = "regularized"
    dim: int = 1
    delta: float = 0.1
    extent: tuple = (64,)
    period: tuple = (1.0,)
    initial_kind: str = "manufactured"
    amplitude: float = 1.0
    wavelength_cells: int = 8
    initial_path: str = None
    initial_node: int = -1
    noise: float = 0.0
    dt: float = 0.0
    steps: int = 1
    viscosity: float = 0.0
    seed: int = 0
    newton_tol: float = 1e-13
    block: int = 1
    construct: str = "none"
    evi: bool = True
    mvs: bool = True
    max_index: int = 3
    hats: bool = True
    weight_constant: float = None
    tolerances: dict = field(default_factory=dict)
    threads: int = 1
    output_dir: str = "."
    trajectory: str = "trajectory.bin"
    measure: str = "measure.jsonl"
    varifold: str = "varifold.jsonl"
    report: str = "report.json"

    def out(self, name):
        return Path(self.output_dir) / getattr(self, name)

    def digest(self, tolerance_scale=1.0):
        """SHA-256 of the resolved settings.

        Paths enter relative to the config file and the initial-data file by
        content, so moving an experiment directory keeps its hash.
        """
        payload = asdict(self)
        base = Path(payload.pop("source")).parent
        payload["output_dir"] = os.path.relpath(self.output_dir, base)
        if self.initial_path:
            payload["initial_path"] = hashlib.sha256(Path(self.initial_path).read_bytes()).hexdigest()
        payload["tolerance_scale"] = float(tolerance_scale)
        text = json.dumps(payload, sort_keys=True, default=list)
        return hashlib.sha256(text.encode()).hexdigest()


def _parse_value(kind, text, where):
    try:
        if kind is bool:
            low = text.strip().lower()
            if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
                raise ValueError(text)
            return low in ("true", "yes", "1", "on")
        if kind == "ints":
            return tuple(int(x) for x in text.replace(",", " ").split())
        if kind == "floats":
            return tuple(float(x) for x in text.replace(",", " ").split())
        return kind(text.strip())
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {text!r}") from exc


def build_model(kind, dim, delta=0.1):
    """Elastic model by name."""
    if kind == "quadratic":
        return quadratic_model(dim)
    if kind == "regularized":
        return regularized_model(dim, delta)
    raise ConfigError(f"unknown model kind {kind!r}")


_RENAMED = {
    ("model", "kind"): "model_kind",
    ("initial", "kind"): "initial_kind",
    ("initial", "path"): "initial_path",
    ("initial", "node"): "initial_node",
    ("construct", "kind"): "construct",
    ("output", "directory"): "output_dir",
}


def load_config(path, seed=None):
    """Parse and validate an INI experiment file.

    Raises
    ------
    ConfigError
        Unreadable file, unknown sections or keys, bad values, missing
        input files, or values violating a module precondition.
    """
    path = Path(path)
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    kw = {}
    tolerances = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, text in parser[section].items():
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            value = _parse_value(SCHEMA[section][key], text, f"[{section}] {key}")
            if key.endswith("_tolerance"):
                tolerances[key[: -len("_tolerance")]] = value
                continue
            name = _RENAMED.get((section, key), key)
            kw[name] = value
    if "dt" not in kw:
        raise ConfigError("[integrator] dt is required")
    if seed is not None:
        kw["seed"] = int(seed)
    base = path.parent
    kw["output_dir"] = str(base / kw.get("output_dir", "."))
    if kw.get("initial_path"):
        kw["initial_path"] = str(base / kw["initial_path"])
    cfg = ExperimentConfig(source=str(path), tolerances=tolerances, **kw)
    _validate(cfg)
    return cfg


def _validate(cfg):
    if len(cfg.extent) != cfg.dim or len(cfg.period) not in (1, cfg.dim):
        raise ConfigError(f"extent {cfg.extent} does not match dim={cfg.dim}")
    try:
        grid = _grid(cfg)
        build_model(cfg.model_kind, cfg.dim, cfg.delta)
        if cfg.block > 1:
            grid.coarsen(cfg.block)
    except GenesolError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    if not (cfg.dt > 0 and cfg.steps >= 1):
        raise ConfigError("need dt > 0 and steps >= 1")
    if cfg.viscosity < 0 or cfg.noise < 0 or cfg.threads < 1 or cfg.max_index < 0:
        raise ConfigError("viscosity, noise and max_index must be nonnegative and threads >= 1")
    if cfg.initial_kind not in ("manufactured", "oscillatory", "file"):
        raise ConfigError(f"unknown initial kind {cfg.initial_kind!r}")
    if cfg.initial_kind == "manufactured" and cfg.dim != 1:
        raise ConfigError("manufactured initial data are one-dimensional")
    if cfg.initial_kind == "file":
        if not cfg.initial_path or not Path(cfg.initial_path).is_file():
            raise ConfigError(f"initial data file {cfg.initial_path!r} does not exist")
    if cfg.construct not in ("none", "varifold"):
        raise ConfigError(f"unknown construct kind {cfg.construct!r}")
    if cfg.weight_constant is not None and cfg.weight_constant <= 0:
        raise ConfigError("weight_constant must be positive")
    if any(t < 0 for t in cfg.tolerances.values()):
        raise ConfigError("tolerances must be nonnegative")


def _grid(cfg):
    period = cfg.period * cfg.dim if len(cfg.period) == 1 else cfg.period
    return TorusGrid(tuple(cfg.extent), tuple(period))


def worker_count(requested):
    cap = os.environ.get("GENESOL_THREADS")
    if cap:
        try:
            return max(1, min(int(requested), int(cap)))
        except ValueError as exc:
            raise ConfigError(f"GENESOL_THREADS={cap!r} is not an integer") from exc
    return max(1, int(requested))


@contextmanager
def stage(name):
    log.info("stage %s", name)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", StabilityWarning)
            yield
    except PipelineError:
        raise
    except (GenesolError, StabilityWarning, OSError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        raise PipelineError(name, exc) from exc


def initial_state(cfg, model):
    grid = _grid(cfg)
    if cfg.initial_kind == "manufactured":
        s = manufactured_linear_solution(grid, 0.0, cfg.amplitude)
    elif cfg.initial_kind == "oscillatory":
        s = oscillatory_initial_data(grid, cfg.amplitude, cfg.wavelength_cells)
    else:
        src = read_trajectory(cfg.initial_path)
        s = src.states[cfg.initial_node]
        if s.grid != grid:
            raise ConfigError("initial data file lives on a different grid")
        s = ElasticState(s.v, s.F, 0.0)
    if cfg.noise > 0:
        rng = np.random.default_rng(cfg.seed)
        dv = cfg.noise * rng.standard_normal(s.v.values.shape)
        s = ElasticState(TorusField(grid, s.v.values + dv), s.F, s.t)
    return s


def _mvs_basis(grid, times, max_index):
    modes = elastic_basis(grid, times, max_index=max_index, include_hats=False).modes
    hp, hl = hat_profiles(times)
    rp, rl = ramp_profiles(len(times))
    return TestFunctionBasis(modes, np.vstack([hp, rp]), hl + rl)


def verify_stage(cfg, model, traj, coarse, workers):
    out = {"evi": None, "mvs": None}
    if cfg.evi:
        basis = elastic_basis(traj.grid, traj.times, max_index=cfg.max_index, include_hats=cfg.hats)
        out["evi"] = evi_residual_elastic(model, traj, basis, cfg.weight_constant, workers).to_dict()
    if cfg.mvs and coarse is not None:
        rep = mvs_residual_elastic(model, coarse, _mvs_basis(coarse[0].grid, traj.times, cfg.max_index))
        out["mvs"] = rep.to_dict()
    return out


def _assertions(cfg, traj, verification, scale):
    rows = []

    def check(name, value, tol):
        tol = float(tol) * scale
        rows.append({"name": name, "value": float(value), "tolerance": tol, "passed": bool(value <= tol)})

    if "energy" in cfg.tolerances:
        check("energy_monotone", max(0.0, float(np.max(np.diff(traj.E), initial=0.0))), cfg.tolerances["energy"])
    if "evi" in cfg.tolerances and verification["evi"] is not None:
        check("evi", verification["evi"]["max_violation"], cfg.tolerances["evi"])
    if "mvs" in cfg.tolerances and verification["mvs"] is not None:
        check("mvs", verification["mvs"]["max_violation"], cfg.tolerances["mvs"])
    return rows


def _report(cfg, model, traj, coarse, verification, construct, stages, scale):
    series = {
        "t": traj.times.tolist(),
        "E": np.asarray(traj.E).tolist(),
        "energy": traj.energies(model).tolist(),
        "dissipation": np.asarray(traj.dissipation).tolist(),
    }
    if coarse is not None:
        series["surplus"] = [float(integrate(c.surplus)) for c in coarse]
    assertions = _assertions(cfg, traj, verification, scale)
    mv = [v["max_violation"] for v in verification.values() if v is not None]
    return {
        "kind": REPORT_KIND,
        "version": FORMAT_VERSION,
        "generator": f"genesol {__version__}",
        "config_hash": cfg.digest(scale),
        "seed": cfg.seed,
        "tolerance_scale": float(scale),
        "tolerances": {k: float(v) * scale for k, v in sorted(cfg.tolerances.items())},
        "model": {"name": model.name, "dim": model.dim, "params": dict(model.params)},
        "grid": {"extent": list(traj.grid.extent), "period": list(traj.grid.period)},
        "stages": stages,
        "series": series,
        "construct": construct,
        "verification": verification,
        "assertions": assertions,
        "max_violation": float(max(mv, default=0.0)),
        "passed": all(a["passed"] for a in assertions),
    }


def _varifolds(coarse):
    out, dist = [], 0.0
    for c in coarse:
        D = DefectField.projected(c.defect)
        dist = max(dist, D.projection_distance)
        out.append(build_varifold(D))
    return out, dist


def run_pipeline(cfg, force=False, tolerance_scale=1.0):
    """Run every configured stage and write outputs.

    Returns
    -------
    dict
        The report, already written to disk.
    """
    model = build_model(cfg.model_kind, cfg.dim, cfg.delta)
    workers = worker_count(cfg.threads)
    names = ["trajectory", "measure", "report"] + (["varifold"] if cfg.construct == "varifold" else [])
    taken = [str(cfg.out(n)) for n in names if cfg.out(n).exists()]
    if taken and not force:
        raise FileExistsError(f"outputs already exist: {', '.join(taken)}")
    Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
    stages = []
    with stage("solve"):
        traj = simulate(model, initial_state(cfg, model), cfg.dt, cfg.steps, viscosity=cfg.viscosity,
                        tol=cfg.newton_tol)
        write_trajectory(cfg.out("trajectory"), traj, force)
    stages.append("solve")
    with stage("coarsen"):
        coarse = coarsen_trajectory(model, traj, cfg.block)
        write_measures(cfg.out("measure"), coarse, force)
    stages.append("coarsen")
    construct = {"kind": cfg.construct}
    if cfg.construct == "varifold":
        with stage("construct"):
            vfs, dist = _varifolds(coarse)
            write_varifolds(cfg.out("varifold"), vfs, traj.times, force)
            construct.update(
                total_mass=[V.total_mass() for V in vfs],
                projection_distance=dist,
                compatibility=max(compatibility_check(V, None) for V in vfs),
            )
        stages.append("construct")
    with stage("verify"):
        verification = verify_stage(cfg, model, traj, coarse, workers)
        stages.append("verify")
        report = _report(cfg, model, traj, coarse, verification, construct, stages, tolerance_scale)
        write_report(cfg.out("report"), report, force)
    return report


# ---------------------------------------------------------------------------
# report verb


def _columns_for(path):
    kind = sniff(path)
    if kind == "trajectory":
        traj = read_trajectory(path)
        model = build_model(traj.model_name or "quadratic", traj.grid.dim, traj.model_params.get("delta", 0.1))
        cols = {"t": traj.times, "E": traj.E, "energy": traj.energies(model), "dissipation": traj.dissipation}
        meta = {"kind": kind, "nodes": len(traj), "grid": list(traj.grid.extent), "model": traj.model_name}
    elif kind == "measure":
        coarse = read_measures(path)
        cols = {
            "t": np.array([c.t for c in coarse]),
            "surplus": np.array([integrate(c.surplus) for c in coarse]),
            "defect_l2": np.array([np.sqrt(integrate(TorusField(c.grid, np.sum(c.defect.values**2, axis=(0, 1)))))
                                   for c in coarse]),
            "atoms": np.array([c.measure.weights.size for c in coarse], dtype=float),
        }
        meta = {"kind": kind, "nodes": len(coarse), "grid": list(coarse[0].grid.extent)}
    elif kind == "varifold":
        vfs, times = read_varifolds(path)
        cols = {"t": times, "mass": np.array([V.total_mass() for V in vfs]),
                "atoms": np.array([len(V) for V in vfs], dtype=float)}
        meta = {"kind": kind, "nodes": len(vfs), "grid": list(vfs[0].grid.extent)}
    else:
        rep = read_report(path)
        s = rep["series"]
        cols = {k: np.asarray(s[k]) for k in ("t", "E", "energy", "dissipation", "surplus") if k in s}
        meta = {"kind": kind, "passed": rep["passed"], "max_violation": rep["max_violation"],
                "config_hash": rep["config_hash"], "assertions": rep["assertions"]}
        for name in ("evi", "mvs"):
            v = rep["verification"].get(name)
            if v is not None:
                top = sorted(v["table"], key=lambda r: -r["value"])[:10]
                meta[name] = {"max_violation": v["max_violation"], "location": v["location"], "top": top}
    return meta, cols


def _print_summary(meta, cols, stream):
    for key in ("kind", "nodes", "grid", "model", "passed", "max_violation", "config_hash"):
        if key in meta:
            print(f"{key:>14}: {meta[key]}", file=stream)
    for a in meta.get("assertions", []):
        mark = "PASS" if a["passed"] else "FAIL"
        print(f"{mark} {a['name']}: {a['value']:.6e} <= {a['tolerance']:.3e}", file=stream)
    for name in ("evi", "mvs"):
        if name in meta:
            print(f"\n{name} residuals (largest first)", file=stream)
            for r in meta[name]["top"]:
                print(f"  {r['value']: .6e}  [{r['s']:.6g}, {r['t']:.6g}]  {r['test']}", file=stream)
    names = list(cols)
    print("\n" + " ".join(f"{n:>22}" for n in names), file=stream)
    for row in zip(*(cols[n] for n in names)):
        print(" ".join(f"{float(x):>22.15e}" for x in row), file=stream)


def cmd_report(args):
    meta, cols = _columns_for(args.path)
    if args.json:
        json.dump({"meta": meta, "columns": {k: np.asarray(v).tolist() for k, v in cols.items()}},
                  sys.stdout, sort_keys=True)
        sys.stdout.write("\n")
    else:
        _print_summary(meta, cols, sys.stdout)
    if args.columns:
        with open(args.columns, "w" if args.force else "x", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(list(cols))
            w.writerows(zip(*(map(repr, map(float, cols[k])) for k in cols)))
    return EXIT_OK


# ---------------------------------------------------------------------------
# verbs


def _finish(report):
    for a in report["assertions"]:
        if not a["passed"]:
            print(f"assertion failed: {a['name']} = {a['value']:.6e} > {a['tolerance']:.3e}", file=sys.stderr)
    print(f"max_violation = {report['max_violation']:.6e}")
    return EXIT_OK if report["passed"] else EXIT_ASSERT


def cmd_run(args):
    cfg = load_config(args.config, args.seed)
    return _finish(run_pipeline(cfg, args.force, args.tolerance_scale))


def cmd_verify(args):
    cfg = load_config(args.config, args.seed)
    traj = read_trajectory(args.trajectory)
    if traj.model_name and traj.model_name != cfg.model_kind:
        raise ConfigError(f"trajectory model {traj.model_name!r} differs from config {cfg.model_kind!r}")
    model = build_model(cfg.model_kind, traj.grid.dim, cfg.delta)
    coarse = None
    with stage("coarsen"):
        if cfg.mvs:
            coarse = coarsen_trajectory(model, traj, cfg.block)
    with stage("verify"):
        verification = verify_stage(cfg, model, traj, coarse, worker_count(cfg.threads))
        report = _report(cfg, model, traj, coarse, verification, {"kind": "none"}, ["verify"],
                         args.tolerance_scale)
        out = args.out or str(Path(cfg.output_dir) / ("verify-" + cfg.report))
        write_report(out, report, args.force)
    return _finish(report)


def cmd_convert(args):
    traj = read_trajectory(args.trajectory)
    if not traj.model_name:
        raise FormatError("trajectory header names no model")
    model = build_model(traj.model_name, traj.grid.dim, traj.model_params.get("delta", 0.1))
    out = args.out or str(Path(args.trajectory).with_suffix(f".{args.to}.jsonl"))
    with stage("coarsen"):
        coarse = coarsen_trajectory(model, traj, args.block)
    with stage("construct"):
        if args.to == "measure":
            write_measures(out, coarse, args.force)
        else:
            vfs, dist = _varifolds(coarse)
            write_varifolds(out, vfs, traj.times, args.force)
            print(f"projection distance to PSD: {dist:.6e}")
    print(out)
    return EXIT_OK


def make_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the configured seed")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("--tolerance-scale", type=float, default=1.0, help="multiply every tolerance")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="genesol", description=__doc__.split("\n\n")[0].strip())
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="verb", required=True)
    r = sub.add_parser("run", parents=[common], help="run a configured pipeline")
    r.add_argument("config")
    r.set_defaults(func=cmd_run)
    rep = sub.add_parser("report", parents=[common], help="summarize an output file")
    rep.add_argument("path")
    rep.add_argument("--json", action="store_true", help="machine-readable output")
    rep.add_argument("--columns", help="write columnar CSV data to this path")
    rep.set_defaults(func=cmd_report)
    v = sub.add_parser("verify", parents=[common], help="verify an existing trajectory")
    v.add_argument("trajectory")
    v.add_argument("config")
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify)
    c = sub.add_parser("convert", parents=[common], help="coarse-grain a trajectory")
    c.add_argument("trajectory")
    c.add_argument("--to", choices=("measure", "varifold"), required=True)
    c.add_argument("--block", type=int, default=1)
    c.add_argument("--out")
    c.set_defaults(func=cmd_convert)
    return p


def main(argv=None):
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    if args.tolerance_scale <= 0:
        print("error: --tolerance-scale must be positive", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    except (ConfigError, FormatError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileExistsError as exc:
        print(f"error: {exc} (use --force to overwrite)", file=sys.stderr)
        return EXIT_PIPELINE
    except GenesolError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
