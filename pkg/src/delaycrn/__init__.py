"""Delayed mass-action kinetic systems: simulation, compatibility classes and stability checks."""

from .analysis import (
    ClassSignature,
    LyapunovRecord,
    class_membership,
    class_signature,
    conserved_functional,
    equilibrium_in_class,
    exp_inequality_check,
    lk_dissipation,
    lk_functional,
    lk_lower_bound_gamma,
)
from .certify import CertificationReport, Tolerances, certify_trajectory
from .exceptions import ConvergenceError, IntegrationError, NotComplexBalancedError, ParseError
from .integrator import Trajectory, integrate, integrate_ode, rhs, segment
from .network import (
    Complex,
    HistoryFunction,
    Reaction,
    ReactionNetwork,
    evaluate_history,
    format_network,
    load_network,
    parse_history,
    parse_network,
)
from .stoichiometry import (
    EquilibriumReport,
    StoichiometryReport,
    equilibrium_set_membership,
    find_equilibrium,
    is_complex_balanced,
    stoichiometric_subspace,
)

__version__ = "0.1.0"
