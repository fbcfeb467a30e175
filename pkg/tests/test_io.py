import json

import jsonschema
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from genesol.coarse_grain import coarsen_trajectory
from genesol.energy import quadratic_model, regularized_model
from genesol.errors import FormatError
from genesol.integrator import ElasticState, Trajectory, oscillatory_initial_data, simulate
from genesol.io import (
    TRAJ_MAGIC,
    read_measures,
    read_report,
    read_trajectory,
    read_varifolds,
    report_schema,
    sniff,
    write_measures,
    write_report,
    write_trajectory,
    write_varifolds,
)
from genesol.measure_kit import DefectField, build_varifold
from genesol.torus import TorusField, TorusGrid


@pytest.fixture(scope="module")
def run2d():
    model = regularized_model(2, 0.5)
    grid = TorusGrid((8, 8))
    s0 = oscillatory_initial_data(grid, 0.3, 4)
    traj = simulate(model, s0, 0.01, 4, viscosity=0.01)
    return model, traj, coarsen_trajectory(model, traj, 2)


def _same(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return a.shape == b.shape and a.dtype == b.dtype and a.tobytes() == b.tobytes()


def test_trajectory_round_trip_bit_exact(tmp_path, run2d):
    _, traj, _ = run2d
    path = tmp_path / "t.bin"
    write_trajectory(path, traj)
    back = read_trajectory(path)
    assert len(back) == len(traj) and back.dt == traj.dt
    assert back.model_name == traj.model_name and back.model_params == traj.model_params
    assert _same(back.E, traj.E) and _same(back.dissipation, traj.dissipation)
    for a, b in zip(back.states, traj.states):
        assert a.t == b.t and a.grid == b.grid
        assert _same(a.v.values, b.v.values) and _same(a.F.values, b.F.values)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=2, max_size=2),
       st.floats(min_value=1e-300, max_value=1e300))
def test_trajectory_payload_preserves_any_double(tmp_path_factory, vals, dt):
    grid = TorusGrid((4,))
    v = TorusField(grid, np.array([[vals[0], -0.0, 1.0, 2.0]]))
    F = TorusField(grid, np.array([[[vals[1], 5e-324, 3.0, 4.0]]]))
    traj = Trajectory([ElasticState(v, F, 0.0)], np.array([np.pi]), dt, np.zeros(1), "quadratic", {})
    path = tmp_path_factory.mktemp("p") / "t.bin"
    write_trajectory(path, traj)
    back = read_trajectory(path)
    assert _same(back.states[0].v.values, v.values) and _same(back.states[0].F.values, F.values)
    assert back.dt == dt


def test_trajectory_layout_is_little_endian_component_major(tmp_path):
    grid = TorusGrid((4,))
    v = TorusField(grid, np.array([[1.0, 2.0, 3.0, 4.0]]))
    F = TorusField(grid, np.array([[[5.0, 6.0, 7.0, 8.0]]]))
    traj = Trajectory([ElasticState(v, F, 0.5)], np.array([7.0]), 0.25, np.array([0.0]), "quadratic", {})
    path = tmp_path / "t.bin"
    write_trajectory(path, traj)
    raw = path.read_bytes()
    assert raw.startswith(TRAJ_MAGIC)
    header_end = raw.index(b"\n", len(TRAJ_MAGIC)) + 1
    header = json.loads(raw[len(TRAJ_MAGIC):header_end])
    assert header["dtype"] == "<f8" and header["extent"] == [4] and header["dt"] == 0.25
    payload = np.frombuffer(raw[header_end:], dtype="<f8")
    np.testing.assert_array_equal(payload, [0.5, 7.0, 0.0, 1, 2, 3, 4, 5, 6, 7, 8])


def test_measure_round_trip_bit_exact(tmp_path, run2d):
    _, _, coarse = run2d
    path = tmp_path / "m.jsonl"
    write_measures(path, coarse)
    back = read_measures(path)
    assert len(back) == len(coarse)
    for a, b in zip(back, coarse):
        assert a.t == b.t
        for name in ("weights", "v_atoms", "F_atoms", "offsets", "gamma"):
            assert _same(getattr(a.measure, name), getattr(b.measure, name)), name
        for x, y in ((a.mean.v, b.mean.v), (a.mean.F, b.mean.F), (a.defect, b.defect), (a.surplus, b.surplus)):
            assert _same(x.values, y.values)


def test_measure_file_has_one_line_per_cell(tmp_path, run2d):
    _, _, coarse = run2d
    path = tmp_path / "m.jsonl"
    write_measures(path, coarse)
    lines = path.read_text().splitlines()
    assert len(lines) == 1 + len(coarse) * coarse[0].grid.size
    rec = json.loads(lines[1])
    assert {"weights", "v", "F", "cell", "node"} <= set(rec)


def test_varifold_round_trip_bit_exact(tmp_path, run2d):
    _, traj, coarse = run2d
    vfs = [build_varifold(DefectField.projected(c.defect)) for c in coarse]
    path = tmp_path / "v.jsonl"
    write_varifolds(path, vfs, traj.times)
    back, times = read_varifolds(path)
    assert _same(times, traj.times)
    for a, b in zip(back, vfs):
        order = np.argsort(b.cells, kind="stable")
        assert _same(a.cells, b.cells[order])
        assert _same(a.directions, b.directions[order])
        assert _same(a.masses, b.masses[order])
        assert _same(a.interface, b.interface[order])


def _minimal_report():
    return {
        "kind": "genesol-report", "version": 1, "config_hash": "0" * 64, "seed": 0,
        "tolerance_scale": 1.0, "tolerances": {"evi": 1e-6},
        "model": {"name": "quadratic", "dim": 1, "params": {}},
        "grid": {"extent": [4], "period": [1.0]}, "stages": ["solve"],
        "series": {"t": [0.0, 0.1], "E": [1.0, 1.0]},
        "verification": {"evi": None, "mvs": None},
        "assertions": [{"name": "evi", "value": 0.1 + 0.2, "tolerance": 1e-6, "passed": False}],
        "max_violation": 0.0, "passed": False,
    }


def test_report_round_trip_exact(tmp_path):
    rep = _minimal_report()
    path = tmp_path / "r.json"
    write_report(path, rep)
    assert read_report(path) == rep
    assert read_report(path)["assertions"][0]["value"] == 0.1 + 0.2


def test_report_schema_rejects_bad_report(tmp_path):
    rep = _minimal_report()
    rep["config_hash"] = "abc"
    with pytest.raises(jsonschema.ValidationError):
        write_report(tmp_path / "r.json", rep)
    assert not (tmp_path / "r.json").exists()
    jsonschema.Draft202012Validator.check_schema(report_schema())


def test_exclusive_create_and_force(tmp_path):
    rep = _minimal_report()
    path = tmp_path / "r.json"
    write_report(path, rep)
    with pytest.raises(FileExistsError):
        write_report(path, rep)
    rep["seed"] = 5
    write_report(path, rep, force=True)
    assert read_report(path)["seed"] == 5


def test_empty_and_corrupt_files_raise_format_error(tmp_path):
    empty = tmp_path / "empty.bin"
    empty.write_bytes(b"")
    with pytest.raises(FormatError):
        read_trajectory(empty)
    with pytest.raises(FormatError):
        sniff(empty)
    nodes0 = tmp_path / "zero.bin"
    header = {"kind": "genesol-trajectory", "version": 1, "nodes": 0, "dt": 0.1, "extent": [4], "period": [1.0]}
    nodes0.write_bytes(TRAJ_MAGIC + json.dumps(header).encode() + b"\n")
    with pytest.raises(FormatError):
        read_trajectory(nodes0)
    short = tmp_path / "short.bin"
    short.write_bytes(TRAJ_MAGIC + json.dumps({**header, "nodes": 1}).encode() + b"\n" + b"\0" * 8)
    with pytest.raises(FormatError):
        read_trajectory(short)
    with pytest.raises(FormatError):
        write_trajectory(tmp_path / "x.bin", Trajectory([], np.zeros(0), 0.1, np.zeros(0)))


def test_version_mismatch_is_format_error(tmp_path, run2d):
    _, traj, coarse = run2d
    path = tmp_path / "t.bin"
    write_trajectory(path, traj)
    raw = path.read_bytes().replace(b'"version":1', b'"version":99', 1)
    path.write_bytes(raw)
    with pytest.raises(FormatError):
        read_trajectory(path)
    mpath = tmp_path / "m.jsonl"
    write_measures(mpath, coarse)
    lines = mpath.read_text().splitlines(keepends=True)
    lines[0] = lines[0].replace('"version":1', '"version":2')
    mpath.write_text("".join(lines))
    with pytest.raises(FormatError):
        read_measures(mpath)
    rpath = tmp_path / "r.json"
    rep = _minimal_report()
    rpath.write_text(json.dumps({**rep, "version": 3}))
    with pytest.raises(FormatError):
        read_report(rpath)


def test_sniff_kinds(tmp_path, run2d):
    _, traj, coarse = run2d
    write_trajectory(tmp_path / "t.bin", traj)
    write_measures(tmp_path / "m.jsonl", coarse)
    write_varifolds(tmp_path / "v.jsonl", [build_varifold(DefectField.projected(c.defect)) for c in coarse],
                    traj.times)
    write_report(tmp_path / "r.json", _minimal_report())
    kinds = [sniff(tmp_path / n) for n in ("t.bin", "m.jsonl", "v.jsonl", "r.json")]
    assert kinds == ["trajectory", "measure", "varifold", "report"]


def test_quadratic_trajectory_header_names_model(tmp_path):
    model = quadratic_model(1)
    grid = TorusGrid((8,))
    traj = simulate(model, oscillatory_initial_data(grid, 0.1, 4), 0.01, 2)
    write_trajectory(tmp_path / "t.bin", traj)
    assert read_trajectory(tmp_path / "t.bin").model_name == model.name
