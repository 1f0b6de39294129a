"""Quasi-local mass functionals on spectral sphere grids.

The public surface re-exported here covers the common workflow: build a
surface, extract its data, evaluate masses and energies, and study critical
points of the Wang-Yau energy.
"""

from .errors import ConvergenceFailure, GridMismatch, HypothesisViolation, QuasiLocalError, RejectedInput
from .mass import (
    EnergyReport,
    brown_york_mass,
    energy_canonical,
    hawking_mass,
    liu_yau_mass,
    rho_and_j,
    wang_yau_energy,
)
from .optimal import (
    CriticalPointReport,
    comparison_check,
    hessian_numeric,
    oiee_residual,
    second_variation_mtx,
    solve_optimal,
)
from .sphere import (
    MetricField,
    ScalarField,
    SphereGrid,
    SymmetricTensorField,
    VectorField,
    covariant_hessian,
    divergence,
    gauss_curvature,
    gradient,
    integrate,
    laplace_beltrami,
    sphere_grid,
)
from .surfaces import (
    AmbientSpace,
    SurfaceDataset,
    SurfaceEmbedding,
    induced_data_slice,
    induced_data_spacetime,
    lightcone_surface,
)
from .weyl import ReferenceGeometry, reference_geometry, solve_weyl

__version__ = "0.1.0"
