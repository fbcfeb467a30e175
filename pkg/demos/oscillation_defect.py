"""
From fine oscillations to a measure and a defect varifold
=========================================================

A deformation that alternates between two values on a fine stripe
pattern is averaged over coarse blocks. The block average forgets the
oscillation; the per-cell measure keeps it. Two defects are compared:
the gap between the averaged stress and the stress of the average, whose
sign depends on the curvature of the stress, and the fluctuation
covariance, which is always positive semidefinite and is turned into
atoms on the sphere.
"""

import numpy as np

from genesol.coarse_grain import coarsen, measure_moment
from genesol.energy import regularized_model
from genesol.evi_verifier import compatibility_check
from genesol.integrator import energy, oscillatory_initial_data
from genesol.measure_kit import DefectField, build_varifold
from genesol.torus import TorusField, TorusGrid, integrate

model = regularized_model(2, 0.5)

# stripes of width 4 cells, averaged over 4 x 4 blocks
grid = TorusGrid((32, 16))
fine = oscillatory_initial_data(grid, 0.3, 4)
coarse = coarsen(model, fine, 4)
print("coarse grid:", coarse.grid.extent, "atoms per cell:", coarse.measure.atom_counts[:4])

# the averaged deformation is the midpoint of the two values
print("mean F in cell 0:\n", coarse.mean.F.cellwise()[0])

# energy bookkeeping: fine energy = energy of the mean + Jensen surplus
e_fine = energy(model, fine)
e_mean = energy(model, coarse.mean)
print(f"fine energy {e_fine:.12f} = mean energy {e_mean:.12f} + surplus {integrate(coarse.surplus):.12f}")

# the defect is constant over cells for a periodic stripe pattern; for this
# model the stress curves downward along e1, so the defect is negative
R = coarse.defect.cellwise()[0]
print("stress defect in cell 0:\n", R, "\neigenvalues:", np.linalg.eigvalsh(0.5 * (R + R.T)))
D = DefectField.projected(coarse.defect)
print(f"distance to the PSD cone: {D.projection_distance:.3e}, projected trace {np.abs(D.R.values).max():.1e}")

# first moment of the measure reproduces the mean
first = measure_moment(coarse.measure, lambda v, F: F).values
print(f"first-moment error: {np.max(np.abs(first - coarse.mean.F.values)):.1e}")

# the fluctuation covariance <nu, F F^T> - F_bar F_bar^T is PSD by construction
FFt = measure_moment(coarse.measure, lambda v, F: F @ np.swapaxes(F, -1, -2)).values
Fbar = coarse.mean.F.values
cov = TorusField(coarse.grid, FFt - np.einsum("ik...,jk...->ij...", Fbar, Fbar))
print("covariance in cell 0:\n", cov.cellwise()[0])

# varifold from the covariance: an antipodal pair along e1 in every cell
V = build_varifold(DefectField.from_matrix(cov))
trace_mass = float(np.sum(np.trace(cov.values)) * coarse.grid.cell_volume)
print(f"varifold atoms {len(V)}, mass {V.total_mass():.12f}, integrated trace {trace_mass:.12f}")
print("directions in cell 0:", V.directions[V.cells == 0].tolist())
print(f"compatibility residual: {compatibility_check(V, None):.1e}")
