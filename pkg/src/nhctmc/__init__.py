"""Minimal transition matrices of nonhomogeneous continuous-time Markov chains.

Build ``P(s, t)`` from a (possibly non-conservative) piecewise-defined rate
matrix ``Q(t)`` by the series of convolution integrals, and check it against
exact matrix-exponential references, integral equations, the pretransition
axioms and Monte Carlo simulation.
"""
from .errors import *  # noqa: F401,F403
from .fields import ArrayField, ChainField, FunctionField, KernelField, TransitionField
from .kernel import (
    MinimalSolution,
    TimeGrid,
    backward_residual,
    forward_residual,
    make_grid,
    minimal_solution,
    pq_equality_check,
    regularity_defect,
    series_term_backward,
    series_term_forward,
    survival,
)
from .oracle import conservativize, oracle_minimal, pc_exact, restrict, resurrect
from .policy import ActionModel, PiecewisePolicy, compile_policy, mm1_action_model, queue_metrics
from .properties import (
    ck_residual,
    consequence_checks,
    continuity_inequality,
    derivative_at_diagonal,
    rate_row_bound,
    validate_pretransition,
)
from .rates import (
    CallableRates,
    PiecewiseConstantRates,
    StateSpace,
    constant_rates,
    eval_rates,
    integrate_diagonal,
    truncate_birth_death,
    validate_q_matrix,
)
from .sampler import empirical_transition, sample_path

__version__ = "0.1.0"
