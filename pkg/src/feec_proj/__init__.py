"""Local bounded cochain projections onto finite element differential forms."""
from .cochain_projection import (
    CochainProjection,
    apply_pi,
    build_breve_projector,
    build_harmonic_extension,
    build_pi,
    build_tilde_extension,
    verify_decomposition,
)
from .exceptions import FeecError
from .fe_space import DiscreteComplex, FEForm, FormSpaceSpec, SampledForm, build_global_space, parse_sequence
from .harness import SuiteConfig, VerificationReport, emit_report, run_suite
from .mesh import SimplicialComplex, build_complex, mesh_from_name, unit_cube_kuhn, unit_square_crisscross
from .whitney_ops import WhitneyOperators, build_weights

__version__ = "0.1.0"

__all__ = [
    "CochainProjection", "DiscreteComplex", "FEForm", "FeecError", "FormSpaceSpec", "SampledForm",
    "SimplicialComplex", "SuiteConfig", "VerificationReport", "WhitneyOperators", "apply_pi",
    "build_breve_projector", "build_complex", "build_global_space", "build_harmonic_extension",
    "build_pi", "build_tilde_extension", "build_weights", "emit_report", "mesh_from_name",
    "parse_sequence", "run_suite", "unit_cube_kuhn", "unit_square_crisscross", "verify_decomposition",
]
