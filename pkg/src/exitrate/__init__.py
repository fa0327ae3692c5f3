"""Exit-rate estimation and feedback-gain optimization for noisy linear systems."""

from .action import (ActionValue, MinActionProblem, action, asymptotic_rate, d_0T,
                     lemma3_gap, minimize_action, rho_0T)
from .domain import Ball, Box, GridSpec, ball, box, interior_grid, interval
from .gainopt import (GainSearchSpace, RateConfig, evaluate_gain, grid_search,
                      refine_search)
from .model import (DiffusionField, GainTuple, SystemModel, closed_loop_drift,
                    closed_loop_matrix, diffusion_at, is_hurwitz)
from .simulate import (DiscretePath, ExitSample, RateEstimate, SdeConfig,
                       estimate_survival, exit_rate_mc, invariant_set_nonempty,
                       simulate_deterministic, simulate_sde)
from .spectrum import assemble, eigen_rate, moment_boundary_test, principal_eigen

__version__ = "0.1.0"
