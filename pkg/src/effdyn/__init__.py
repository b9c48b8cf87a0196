"""Effective dynamics for overdamped Langevin models.

Builds the closed scalar dynamics of the first coordinate (mean force, free
energy, marginal), computes the constants entering its quantitative error
bounds (coupling kappa^2, conditional gap rho, one-sided Lipschitz constant,
running-maximum moments), and verifies the bounds empirically with coupled
Monte Carlo path ensembles and conditional Poisson solves.
"""

__version__ = "0.1.0"

from .bounds import BoundEntry, BoundReport
from .expr import ExprError, ExprPotential1D, parse_potential_expr
from .mean_force import (ConditionalLaw, MeanForceTable, TheoryConstants,
                         build_table, c_alpha, check_f_bound, conditional_law,
                         f_l2, fluctuation, free_energy, kappa_sq,
                         marginal_density, mean_force, one_sided_lipschitz,
                         poincare_constant, theory_constants)
from .potentials import (Decoupled, DoubleWell, ModelError, PotentialModel,
                         QuadraticCoupled, TrackingBath, make_model)
from .poisson import (PoissonSolution, aggregate_gradient_bound,
                      check_gradient_bound, solve_poisson)
from .sde import (CoupledEnsemble, CoupledPair, NoisePlan, NonEquilibriumStart,
                  SamplingError, SimulationError, Trajectory, TwoScaleConfig,
                  coupled_ensemble, effective_drift, equilibrium_start,
                  fixed_start, mala_start, sample_equilibrium, simulate_coupled,
                  simulate_full, simulate_two_scale, terminal_states)
from .estimators import (ErrorEstimate, GronwallRatio, ScalingResult,
                         bound_report, fit_loglog, gronwall_ratio,
                         martingale_sup, pathwise_error, scaling_study)

__all__ = [name for name in dir() if not name.startswith("_")]
