"""
Energy-variational residuals on a converging solver
===================================================

For the linear standing wave the energy-variational inequality is
satisfied by the exact solution, so the largest violation measured on
solver output is pure discretization error. Refining the grid and the
time step together shrinks it by about four each time.
"""

from genesol.energy import quadratic_model
from genesol.evi_verifier import elastic_basis, evi_residual_elastic
from genesol.integrator import manufactured_linear_solution, simulate
from genesol.torus import TorusGrid

model = quadratic_model(1)
previous = None
for n in (32, 64, 128, 256):
    grid = TorusGrid((n,))
    dt = grid.spacing[0] / 4
    traj = simulate(model, manufactured_linear_solution(grid, 0.0), dt, int(round(0.5 / dt)))
    report = evi_residual_elastic(model, traj, elastic_basis(grid, traj.times))
    ratio = "" if previous is None else f"  ratio {previous / report.max_violation:.3f}"
    print(f"N={n:4d}  max violation {report.max_violation:.3e}{ratio}")
    previous = report.max_violation

# the worst test function and time window of the finest run
loc = report.location
print("worst test:", loc["label"], f"on [{loc['s']:.4f}, {loc['t']:.4f}]")
