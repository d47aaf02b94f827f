"""Numerics for critical Sobolev quotients with a potential on bounded
domains in R^3: Green's and Robin functions, bubble expansions, coercivity,
and direct minimization with blow-up analysis."""

__version__ = "0.1.0"

from .asymptotics import (ExpansionReport, fit_coefficients, predict_denominator,
                          predict_limit, predict_numerator, predict_quotient,
                          predict_scale, sobolev_constant, trial_sweep, validate_lemma)
from .bubbles import (BubbleBasis, BubbleParams, CoercivityReport, coercivity_min_eig,
                      energy, project_T, project_T_perp, psi_trial, pu_bubble, rayleigh,
                      u_bubble, zero_mode_basis)
from .errors import *  # noqa: F401,F403
from .fields import (Box, Grid3D, MaskedGrid, RadialGrid, ScalarField, UnitBall,
                     h1_inner, integrate, l2_inner, laplacian, lp_norm, sample,
                     solve_poisson)
from .greens import (CriticalityReport, GreensData, RobinMap, calibrate_critical,
                     criticality_check, q_v, robin_map, solve_greens_grid,
                     solve_greens_radial)
from .minimize import (BlowupReport, MinimizeResult, SweepResult, almost_minimizer_gap,
                       epsilon_sweep, fit_decomposition, minimize_rayleigh)
