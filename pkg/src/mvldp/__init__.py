"""Simulation and deviation analysis for multivalued McKean-Vlasov equations.

The package solves ``dX = b(X, L_X) dt + sqrt(eps) sigma(X, L_X) dW - A(X) dt``
with A maximal monotone, by particle systems and a projection-type Euler
scheme, and compares rare-event statistics with large and moderate deviation
rate functions computed from controlled skeleton equations.
"""

from __future__ import annotations

from .coefficients import CoefficientSet, JacobianField, PowerRate, make_coefficients
from .dynamics import (
    Ensemble,
    Scenario,
    SimulationError,
    mdp_process,
    simulate_coupled_limit,
    simulate_particles,
    solve_limit,
)
from .lab import (
    ExperimentPlan,
    PowerLambda,
    ScalingReport,
    emit_report,
    run_convergence_experiment,
    run_laplace_check,
    run_ldp_scan,
    run_mdp_scan,
)
from .measure import EmpiricalMeasure, w2_1d, w2_assignment, w2_coupled_bound
from .monotone import (
    ConvexDomain,
    MonotoneOperator,
    graph_monotonicity_check,
    project,
    resolvent,
    variation_inequality_check,
    yosida,
)
from .paths import ControlPath, FiniteVariationPath, SamplePath, TimeGrid
from .rate import (
    RateQuery,
    RateResult,
    TerminalBall,
    TerminalHalfSpace,
    Tube,
    mdp_rate_of_path,
    rate_of_path,
    rate_optimize,
)
from .skeleton import (
    solve_controlled_perturbed,
    solve_mdp_controlled,
    solve_mdp_skeleton,
    solve_skeleton,
    weak_convergence_probe,
)

__version__ = "0.1.0"
