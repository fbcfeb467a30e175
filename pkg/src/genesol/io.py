"""
File formats
============

Trajectories
    One magic line, one JSON header line, then a little-endian float64
    payload: times, ``E`` and cumulative dissipation (``N`` values each),
    followed by ``v`` and ``F`` of every node in component-major order.

Measures and varifolds
    JSON lines. The first line is a header; every further line describes
    one coarse cell at one node.

Reports
    One JSON document validated against ``schemas/report.schema.json``.

Floats are written with ``repr`` precision, so every format round-trips
bit-exactly. Files are created exclusively unless ``force`` is set.
"""

import json
from importlib import resources

import jsonschema
import numpy as np

from .coarse_grain import CoarseData, YoungMeasureField
from .errors import FormatError
from .integrator import ElasticState, Trajectory
from .measure_kit import Varifold
from .torus import TorusField, TorusGrid

__all__ = [
    "FORMAT_VERSION",
    "write_trajectory",
    "read_trajectory",
    "write_measures",
    "read_measures",
    "write_varifolds",
    "read_varifolds",
    "write_report",
    "read_report",
    "report_schema",
    "sniff",
]

FORMAT_VERSION = 1
TRAJ_MAGIC = b"GENESOL-TRAJECTORY\n"
MEASURE_KIND = "genesol-measure"
VARIFOLD_KIND = "genesol-varifold"
REPORT_KIND = "genesol-report"
DTYPE = np.dtype("<f8")


def _open(path, force, binary=False):
    mode = ("w" if force else "x") + ("b" if binary else "")
    return open(path, mode) if binary else open(path, mode, encoding="utf-8", newline="\n")


def _dumps(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _grid_header(grid):
    return {"extent": list(grid.extent), "period": [float(p) for p in grid.period]}


def _grid_from(header):
    try:
        return TorusGrid(tuple(header["extent"]), tuple(header["period"]))
    except (KeyError, TypeError) as exc:
        raise FormatError(f"bad grid header: {exc}") from exc


def _check_version(header, kind):
    if header.get("kind") != kind:
        raise FormatError(f"expected a {kind} file, found {header.get('kind')!r}")
    if header.get("version") != FORMAT_VERSION:
        raise FormatError(f"unsupported {kind} version {header.get('version')!r}")


# ---------------------------------------------------------------------------
# trajectories


def write_trajectory(path, traj, force=False):
    """Write a trajectory in the binary format."""
    if len(traj) == 0:
        raise FormatError("cannot write an empty trajectory")
    grid = traj.grid
    header = {
        "kind": "genesol-trajectory",
        "version": FORMAT_VERSION,
        "dim": grid.dim,
        "nodes": len(traj),
        "dt": float(traj.dt),
        "model": traj.model_name,
        "model_params": traj.model_params,
        "dtype": DTYPE.str,
        "layout": ["t", "E", "dissipation", "v", "F"],
        **_grid_header(grid),
    }
    parts = [traj.times, np.asarray(traj.E), np.asarray(traj.dissipation)]
    for s in traj.states:
        parts += [s.v.values.ravel(), s.F.values.ravel()]
    payload = np.concatenate([np.asarray(p, dtype=DTYPE).ravel() for p in parts])
    with _open(path, force, binary=True) as fh:
        fh.write(TRAJ_MAGIC)
        fh.write(_dumps(header).encode() + b"\n")
        fh.write(payload.tobytes())


def read_trajectory(path):
    """Read a trajectory written by :func:`write_trajectory`."""
    with open(path, "rb") as fh:
        magic = fh.readline()
        if magic != TRAJ_MAGIC:
            raise FormatError(f"{path} is not a trajectory file")
        try:
            header = json.loads(fh.readline())
        except json.JSONDecodeError as exc:
            raise FormatError(f"bad trajectory header: {exc}") from exc
        _check_version(header, "genesol-trajectory")
        payload = np.frombuffer(fh.read(), dtype=DTYPE)
    grid = _grid_from(header)
    n = int(header.get("nodes", 0))
    if n < 1:
        raise FormatError("trajectory has no nodes")
    d = grid.dim
    nv, nF = d * grid.size, d * d * grid.size
    if payload.size != 3 * n + n * (nv + nF):
        raise FormatError(f"payload has {payload.size} values, expected {3 * n + n * (nv + nF)}")
    times, E, diss = payload[:n], payload[n:2 * n], payload[2 * n:3 * n]
    states = []
    pos = 3 * n
    for i in range(n):
        v = payload[pos:pos + nv].reshape((d,) + grid.extent).copy()
        pos += nv
        F = payload[pos:pos + nF].reshape((d, d) + grid.extent).copy()
        pos += nF
        states.append(ElasticState(TorusField(grid, v), TorusField(grid, F), float(times[i])))
    return Trajectory(states, E.copy(), float(header["dt"]), diss.copy(),
                      header.get("model", ""), dict(header.get("model_params", {})))


# ---------------------------------------------------------------------------
# measures


def write_measures(path, coarse, force=False):
    """Write coarse data of every node as JSON lines."""
    if not coarse:
        raise FormatError("no coarse data to write")
    grid = coarse[0].grid
    with _open(path, force) as fh:
        fh.write(_dumps({"kind": MEASURE_KIND, "version": FORMAT_VERSION, "nodes": len(coarse),
                         "dim": grid.dim, **_grid_header(grid)}) + "\n")
        for n, c in enumerate(coarse):
            m = c.measure
            R = c.defect.cellwise()
            S = c.surplus.cellwise()
            vbar = c.mean.v.cellwise()
            Fbar = c.mean.F.cellwise()
            for cell in range(grid.size):
                w, v, F = m.cell(cell)
                fh.write(_dumps({
                    "node": n, "t": float(c.t), "cell": cell,
                    "weights": w.tolist(), "v": v.tolist(), "F": F.tolist(),
                    "gamma": float(m.gamma[cell]),
                    "mean_v": vbar[cell].tolist(), "mean_F": Fbar[cell].tolist(),
                    "defect": R[cell].tolist(), "surplus": float(S[cell]),
                }) + "\n")


def _read_lines(path, kind):
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
        if not first:
            raise FormatError(f"{path} is empty")
        try:
            header = json.loads(first)
            rows = [json.loads(line) for line in fh if line.strip()]
        except json.JSONDecodeError as exc:
            raise FormatError(f"bad JSON line in {path}: {exc}") from exc
    _check_version(header, kind)
    return header, rows


def read_measures(path):
    """Read coarse data written by :func:`write_measures`.

    Returns
    -------
    list of CoarseData
    """
    header, rows = _read_lines(path, MEASURE_KIND)
    grid = _grid_from(header)
    n = int(header["nodes"])
    if len(rows) != n * grid.size:
        raise FormatError(f"expected {n * grid.size} cell records, found {len(rows)}")
    out = []
    for node in range(n):
        chunk = rows[node * grid.size:(node + 1) * grid.size]
        if any(r["node"] != node for r in chunk) or [r["cell"] for r in chunk] != list(range(grid.size)):
            raise FormatError(f"records of node {node} are out of order")
        cells = [(r["weights"], r["v"], r["F"]) for r in chunk]
        gamma = [r["gamma"] for r in chunk]
        t = chunk[0]["t"]
        mean = ElasticState(
            TorusField.from_cellwise(grid, np.array([r["mean_v"] for r in chunk])),
            TorusField.from_cellwise(grid, np.array([r["mean_F"] for r in chunk])),
            t,
        )
        out.append(CoarseData(
            mean,
            YoungMeasureField.from_cells(grid, cells, gamma),
            TorusField.from_cellwise(grid, np.array([r["defect"] for r in chunk])),
            TorusField.from_cellwise(grid, np.array([r["surplus"] for r in chunk])),
        ))
    return out


# ---------------------------------------------------------------------------
# varifolds


def write_varifolds(path, varifolds, times, force=False):
    """Write one varifold per node as JSON lines, one record per cell."""
    if not varifolds:
        raise FormatError("no varifolds to write")
    grid = varifolds[0].grid
    with _open(path, force) as fh:
        fh.write(_dumps({"kind": VARIFOLD_KIND, "version": FORMAT_VERSION, "nodes": len(varifolds),
                         "dim": grid.dim, **_grid_header(grid)}) + "\n")
        for n, (V, t) in enumerate(zip(varifolds, times)):
            order = np.argsort(V.cells, kind="stable")
            cells = V.cells[order]
            bounds = np.searchsorted(cells, np.arange(grid.size + 1))
            for cell in range(grid.size):
                sel = order[bounds[cell]:bounds[cell + 1]]
                fh.write(_dumps({
                    "node": n, "t": float(t), "cell": cell,
                    "directions": V.directions[sel].tolist(), "masses": V.masses[sel].tolist(),
                    "interface": V.interface[sel].tolist(),
                }) + "\n")


def read_varifolds(path):
    """Read varifolds written by :func:`write_varifolds`.

    Returns
    -------
    varifolds : list of Varifold
    times : ndarray
    """
    header, rows = _read_lines(path, VARIFOLD_KIND)
    grid = _grid_from(header)
    n = int(header["nodes"])
    d = grid.dim
    out, times = [], []
    for node in range(n):
        chunk = [r for r in rows if r["node"] == node]
        if len(chunk) != grid.size:
            raise FormatError(f"node {node} has {len(chunk)} cell records")
        cells = np.concatenate([np.full(len(r["masses"]), r["cell"], dtype=np.int64) for r in chunk])
        dirs = np.concatenate([np.asarray(r["directions"], dtype=float).reshape(-1, d) for r in chunk])
        masses = np.concatenate([np.asarray(r["masses"], dtype=float) for r in chunk])
        iface = np.concatenate([np.asarray(r["interface"], dtype=bool) for r in chunk])
        out.append(Varifold(grid, cells, dirs, masses, iface))
        times.append(chunk[0]["t"])
    return out, np.array(times)


# ---------------------------------------------------------------------------
# reports


def report_schema():
    """The JSON schema reports are validated against."""
    text = resources.files("genesol").joinpath("schemas", "report.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def write_report(path, report, force=False):
    """Validate and write a report; returns the serialized text."""
    jsonschema.validate(report, report_schema())
    text = json.dumps(report, sort_keys=True, indent=1, allow_nan=False) + "\n"
    with _open(path, force) as fh:
        fh.write(text)
    return text


def read_report(path):
    with open(path, encoding="utf-8") as fh:
        try:
            report = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path} is not a JSON report: {exc}") from exc
    if report.get("kind") != REPORT_KIND or report.get("version") != FORMAT_VERSION:
        raise FormatError(f"unsupported report {report.get('kind')!r} version {report.get('version')!r}")
    jsonschema.validate(report, report_schema())
    return report


def sniff(path):
    """Guess the file kind from its first bytes."""
    with open(path, "rb") as fh:
        head = fh.readline()
    if head == TRAJ_MAGIC:
        return "trajectory"
    if not head.strip():
        raise FormatError(f"{path} is empty")
    try:
        kind = json.loads(head).get("kind")
    except (json.JSONDecodeError, AttributeError):
        kind = None
    if kind == MEASURE_KIND:
        return "measure"
    if kind == VARIFOLD_KIND:
        return "varifold"
    return "report"
