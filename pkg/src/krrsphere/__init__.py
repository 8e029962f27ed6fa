"""Kernel ridge regression on the sphere S^d when n ~ d^gamma.

Modules
-------
kernel_spec   inner-product kernel profiles (power series, two-layer ReLU NTK)
spectrum      Mercer eigenvalues, multiplicities, Gegenbauer polynomials
quantities    source-condition targets, N1/N2/M1/M2 and condition checks
rate_theory   piecewise rate curves for KRR and the minimax lower bound
krr_sim       KRR fits with exact series-based risk evaluation
harness       configs, sweeps, slope fits, figure data
"""

from .kernel_spec import KernelSpec, eval_phi, parse_profile, series_coefficients
from .spectrum import Spectrum, TruncationPolicy, build_spectrum, multiplicity
from .quantities import ZonalTarget, build_target, check_approximation_conditions, key_quantities
from .rate_theory import RateQuery, krr_rate, minimax_rate, saturation_gap
from .krr_sim import bias_variance, fit_krr, sample_sphere
from .harness import ExperimentConfig, fit_rate, run_sweep

__version__ = "0.1.0"

__all__ = [
    "KernelSpec", "eval_phi", "parse_profile", "series_coefficients",
    "Spectrum", "TruncationPolicy", "build_spectrum", "multiplicity",
    "ZonalTarget", "build_target", "check_approximation_conditions", "key_quantities",
    "RateQuery", "krr_rate", "minimax_rate", "saturation_gap",
    "bias_variance", "fit_krr", "sample_sphere",
    "ExperimentConfig", "fit_rate", "run_sweep",
]
