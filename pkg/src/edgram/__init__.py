"""Empirical differential Gramians and balanced truncation for nonlinear ODEs.

Models have the form ``xdot = f(x) + B u``, ``y = h(x)`` with a constant
input matrix ``B``.  Gramians are built along a simulated trajectory from
the variational (linearised) system, either by propagating it directly or
by finite differences of nonlinear simulations, and are then used for
balancing and Galerkin truncation.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError, DivergenceError, EdgramError, EvaluationError, GramianError, ParseError, RankError,
)
from .system import SystemModel  # noqa: E402
from .sim import InputSignal, TimeGrid, Trajectory, integrate, integrate_variational, fundamental_matrix  # noqa: E402
from .gramian import (  # noqa: E402
    Gramian, common_nullspace_probe, differential_gramians, lti_gramian_oracle,
    observability_gramian, pd_probe, reachability_gramian,
)
from .balancing import balance, compare_outputs, eigen_truncate_basis, truncate  # noqa: E402
from .symmetry import check_variational_symmetry, dual_reachability_gramian, dual_variational_response  # noqa: E402
from .models import gradient_family, load_model, lti, rl_network  # noqa: E402

__all__ = [
    "ConfigError", "DivergenceError", "EdgramError", "EvaluationError", "GramianError",
    "ParseError", "RankError", "SystemModel", "InputSignal", "TimeGrid", "Trajectory",
    "integrate", "integrate_variational", "fundamental_matrix", "Gramian",
    "common_nullspace_probe", "differential_gramians", "lti_gramian_oracle",
    "observability_gramian", "pd_probe", "reachability_gramian", "balance",
    "compare_outputs", "eigen_truncate_basis", "truncate", "check_variational_symmetry",
    "dual_reachability_gramian", "dual_variational_response", "gradient_family",
    "load_model", "lti", "rl_network",
]
