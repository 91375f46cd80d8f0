"""qplab: numerical laboratory for one-dimensional quasi-periodic Schroedinger operators.

Modules
-------
arithmetic   continued fractions, growth exponents, Liouville constructions
potential    potential sources and repetition (almost-periodicity) scans
cocycle      transfer matrices, SL(2,R) algebra, Lyapunov exponents
spectrum     periodic approximants, bands, level sets, box counting
subordinacy  half-line solutions, length scales, m-functions, spectral dimension
dynamics     Abel-averaged moments and transport exponents
cli          the ``qplab`` command
"""
__version__ = "0.1.0"

from .arithmetic import (FrequencyExpansion, beta_exponent, cf_expand, construct_liouville_alpha,
                         golden_expansion, is_alpha_diophantine_phase, k_exponents, parse_frequency)
from .errors import (ConstructionError, DomainError, InsufficientDataError, NumericError, PreconditionError,
                     QPLabError, RangeError, TruncationError)
from .potential import (PotentialSource, almost_mathieu, almost_periodicity_scan, custom_analytic, free,
                        from_array, load_potential, periodic, repetition_defect, skew_shift, sturmian)
from .scaling import ScalingFit, fit_loglog

__all__ = [
    "__version__", "FrequencyExpansion", "beta_exponent", "cf_expand", "construct_liouville_alpha",
    "golden_expansion", "is_alpha_diophantine_phase", "k_exponents", "parse_frequency",
    "ConstructionError", "DomainError", "InsufficientDataError", "NumericError", "PreconditionError",
    "QPLabError", "RangeError", "TruncationError", "PotentialSource", "almost_mathieu",
    "almost_periodicity_scan", "custom_analytic", "free", "from_array", "load_potential", "periodic",
    "repetition_defect", "skew_shift", "sturmian", "ScalingFit", "fit_loglog",
]
