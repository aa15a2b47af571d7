"""Conjugacies between coupled and partially linearized nonautonomous
difference systems: construction, hypothesis certification, and smoothness
validation via analytic-vs-finite-difference Jacobian checks."""

from .catalog import (
    BUILDERS,
    ExampleParams,
    make_emo,
    make_end,
    make_ex1,
    make_ex2,
    make_remm,
    make_system,
    system_by_name,
)
from .conjugacy import ConjugacyEngine
from .derivatives import (
    JacobianReport,
    best_jacobian_report,
    d_barh_deta,
    d_barh_dxi,
    d_h_deta,
    d_h_dxi,
    d_x2_deta,
    d_x2_dxi,
    d_y_deta,
    fd_jacobian,
    jacobian_report,
    validate_jacobians,
)
from .errors import (
    ConfigError,
    ContractionViolation,
    NoConvergence,
    NonautolinError,
    SingularOperatorError,
    WindowExhausted,
)
from .evolution import (
    SolveOptions,
    backward_step,
    backward_step_detailed,
    coupled_trajectory,
    evolve_coupled,
    evolve_driver,
    evolve_linear,
    lip_C,
    lip_D,
    lip_M,
)
from .hypotheses import (
    CONVERGED,
    DIVERGENT,
    INCONCLUSIVE,
    EstimateOptions,
    HypothesisReport,
    SeriesEstimate,
    certify,
    check_advanced_first,
    check_advanced_second,
    check_basic,
    check_sigma_rho,
    first_variable_bound,
)
from .system import (
    CouplingSpec,
    DriverSpec,
    GeometricTail,
    OperatorSeq,
    SpaceSpec,
    SystemSpec,
    TailEnvelopes,
    WeightSeq,
    green,
    green_norm,
    green_span,
    operator_norm,
    transition,
    vector_norm,
)

__version__ = "0.1.0"

__all__ = [
    "BUILDERS",
    "CONVERGED",
    "ConfigError",
    "ConjugacyEngine",
    "ContractionViolation",
    "CouplingSpec",
    "DIVERGENT",
    "DriverSpec",
    "EstimateOptions",
    "ExampleParams",
    "GeometricTail",
    "HypothesisReport",
    "INCONCLUSIVE",
    "JacobianReport",
    "NoConvergence",
    "NonautolinError",
    "OperatorSeq",
    "SeriesEstimate",
    "SingularOperatorError",
    "SolveOptions",
    "SpaceSpec",
    "SystemSpec",
    "TailEnvelopes",
    "WeightSeq",
    "WindowExhausted",
    "backward_step",
    "backward_step_detailed",
    "best_jacobian_report",
    "certify",
    "check_advanced_first",
    "check_advanced_second",
    "check_basic",
    "check_sigma_rho",
    "coupled_trajectory",
    "d_barh_deta",
    "d_barh_dxi",
    "d_h_deta",
    "d_h_dxi",
    "d_x2_deta",
    "d_x2_dxi",
    "d_y_deta",
    "evolve_coupled",
    "evolve_driver",
    "evolve_linear",
    "fd_jacobian",
    "first_variable_bound",
    "green",
    "green_norm",
    "green_span",
    "jacobian_report",
    "lip_C",
    "lip_D",
    "lip_M",
    "make_emo",
    "make_end",
    "make_ex1",
    "make_ex2",
    "make_remm",
    "make_system",
    "operator_norm",
    "system_by_name",
    "transition",
    "validate_jacobians",
    "vector_norm",
]
