"""Risk-sensitive eigenvalue toolkit: monotone finite-difference generators for
controlled diffusions, principal-eigenpair solvers with policy iteration,
ground-state (Doob) chains with their entropy identity, occupation-measure
linear programs, and Monte Carlo cross-checks."""

from .errors import (ConvergenceError, DivergenceError, EllipticityError,
                     EvaluationError, ExtrapolationError, InvalidArgument,
                     NonMonotoneScheme, NotFound, NotIrreducible, RangeError,
                     RSEigError)
from .model import (AssumptionReport, DiffusionModel, builtin_instance,
                    check_assumptions, polynomial_model)
from .discretize import (FieldTables, GeneratorMatrix, Grid, apply_semilinear,
                         build_generator, build_grid, gradient_on_grid,
                         tabulate_fields)
from .eigensolve import (EigenPair, SweepTable, collatz_wielandt_bounds,
                         domain_sweep, linear_principal_eigenpair,
                         solve_semilinear)
from .twist import (EntropyReport, TwistedChain, doob_transform, entropy_report,
                    gradient_bound_diagnostic, growth_diagnostic,
                    stationary_distribution)
from .occupation import (ExtendedGeneratorSet, OccupationMeasure, RewardTable,
                         SaddleReport, VelocityGrid, build_extended,
                         candidate_measure, solve_occupation_lp,
                         test_function_family, velocity_grid, verify_saddle)
from .montecarlo import (GridPolicy, OptimalityGapReport, PathEstimate,
                         SimConfig, optimality_gap, simulate_value,
                         twisted_value)

__version__ = "0.1.0"
