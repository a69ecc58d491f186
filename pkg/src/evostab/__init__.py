"""Numerical toolkit for stability of nonlinear evolution families.

Lipschitz evolution families on sampled half-line signals, mild solutions of
semilinear equations, Green-operator admissibility estimates and exponential
stability certificates.
"""
from .evolution import (
    DomainError,
    EstimationError,
    EvolutionFamily,
    check_axioms,
    classify_stability,
    diagonal_exponential_family,
    estimate_lip_norm,
    exponential_family,
    growth_from_phi,
    identity_family,
    trajectory,
)
from .green import (
    AdmissibilityReport,
    check_l1_linf_characterization,
    estimate_admissibility,
    truncated_trajectories,
    green_apply,
)
from .lp_spaces import INF, Grid, SampledSignal, a_p, b_p, indicator, lp_norm
from .mild_solver import (
    ConvergenceError,
    MildSolveConfig,
    Nonlinearity,
    generate_family,
    gronwall_bound_check,
    solve_mild,
)
from .models import (
    HypothesisViolation,
    TravelTimeTable,
    SpectralHeatModel,
    build_family,
    scalar_flow_family,
    find_fixed_point,
)
from .stability import (
    NonCertifiableError,
    StabilityCertificate,
    certify_from_admissibility,
    convolution_bound,
    extract_exponential,
    verify_certificate,
)

__version__ = "0.1.0"
