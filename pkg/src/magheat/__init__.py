"""Small-time heat kernels of magnetic Schroedinger operators.

``H = (-i grad - A)^2 + V`` on R^d: parametrix coefficients by transport
recursions along straight segments, residuals, heat invariants, exact and
finite-difference oracles, Duhamel/Volterra grid machinery and quotient
kernels (half-plane, cylinder, torus).
"""

from __future__ import annotations

import functools
import os
import subprocess

from .exceptions import (
    ConfigurationError,
    DomainError,
    JetEvaluationError,
    MagheatError,
    NumericalError,
)
from .fields import (
    FieldConfig,
    FieldExpr,
    constant_field,
    field_derivative_jet,
    free_field,
    gradient_expr,
    magnetic_field,
    parse_expr,
    symmetric_gauge,
)
from .jets import TaylorJet, multi_indices
from .oracle import (
    GridSpec,
    MehlerParams,
    PowerLawFit,
    crank_nicolson_evolve,
    fit_power_law,
    mehler_kernel,
    oscillator_kernel,
)
from .parametrix import ParametrixEvaluator, apply_hamiltonian, free_kernel
from .quadrature import LineSegment, double_integral, gauss_legendre, line_integral
from .quotients import (
    QuotientSpec,
    check_periodicity,
    check_reflection_symmetry,
    half_plane_kernel,
    image_sum_kernel,
    quotient_diagonal_expansion,
    torus_config,
)
from .volterra import (
    GridKernel,
    convolve,
    degree_estimate,
    sample_kernel,
    uniform_ladder,
    volterra_partial_sum,
)

__version__ = "0.1.0"


@functools.lru_cache(maxsize=1)
def version_string() -> str:
    """``git describe``-style version, falling back to ``v<__version__>``."""
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        out = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=here, capture_output=True, text=True, timeout=5, check=True)
        desc = out.stdout.strip()
        if desc:
            return f"v{__version__}-g{desc}" if not desc.startswith("v") else desc
    except (OSError, subprocess.SubprocessError):
        pass
    return f"v{__version__}"


__all__ = [
    "ConfigurationError", "DomainError", "JetEvaluationError", "MagheatError", "NumericalError",
    "FieldConfig", "FieldExpr", "constant_field", "field_derivative_jet", "free_field",
    "gradient_expr", "magnetic_field", "parse_expr", "symmetric_gauge",
    "TaylorJet", "multi_indices",
    "GridSpec", "MehlerParams", "PowerLawFit", "crank_nicolson_evolve", "fit_power_law",
    "mehler_kernel", "oscillator_kernel",
    "ParametrixEvaluator", "apply_hamiltonian", "free_kernel",
    "LineSegment", "double_integral", "gauss_legendre", "line_integral",
    "QuotientSpec", "check_periodicity", "check_reflection_symmetry", "half_plane_kernel",
    "image_sum_kernel", "quotient_diagonal_expansion", "torus_config",
    "GridKernel", "convolve", "degree_estimate", "sample_kernel", "uniform_ladder",
    "volterra_partial_sum",
    "__version__", "version_string",
]
