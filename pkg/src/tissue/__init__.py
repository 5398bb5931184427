"""Electrical conduction in periodic two-phase tissue with dynamic membrane
interfaces: transient solvers, time-periodic attractors, decay diagnostics
and the homogenized two-scale limit, at desk scale."""

__version__ = "0.1.0"

from .errors import (ConfigError, FixedPointError, GeometryError,
                     LinearSolveError, NewtonError, NonlinearityError,
                     TissueError)
from .geometry import (CellGeometry, Conductivity, EpsilonDomain,
                       build_cell_geometry, make_conductivity,
                       mean_conductivity, tile_domain)
from .membrane import SolverParams
from .nonlinearity import (BoundaryData, Nonlinearity, fit_growth_constants,
                           make_boundary_data, make_nonlinearity, regularize)
from .micro import (MicroState, MicroSystem, MicroTrajectory, assemble_bulk,
                    difference_state, dissipation_identity,
                    elliptic_solve_given_jump, initial_jump, simulate, step)
from .periodic import (PeriodicOrbit, find_periodic, find_periodic_regularized,
                       orbit_distance, poincare_map, verify_energy_estimates)
from .decay import (DecayReport, LyapunovSeries, decay_metrics,
                    elliptic_stability_constant, fit_rate, lyapunov_series,
                    poincare_constant)
from .twoscale import (CellOperator, TwoScaleState, TwoScaleSystem,
                       TwoScaleTrajectory, assemble_cell_operator,
                       find_periodic_two_scale, initial_two_scale_jump,
                       simulate_two_scale, two_scale_decay_metrics,
                       two_scale_step)
