"""Crater-function moments to coupled height/composition stability for binary targets."""

from .angle_fit import (
    FitBasis, FourierFit, ParityFourierRegressor, eval_fit, eval_fit_derivative,
    fit_moment_curves,
)
from .coefficients import (
    BsParameters, CoefficientSet, ConcentrationModel, compute_height_coefficients,
    gasb_reference_coefficients, map_to_bs_parameters, steady_concentration,
)
from .errors import (
    ConfigError, CraterError, FilterError, ImpactDataError, NumericalError,
    ParameterSignError, RankDeficientFitError, TruncatedBandError,
)
from .impact_model import (
    AtomEvent, ImpactRecord, ImpactSet, SpeciesId, parse_impact_set, read_impact_set,
    write_impact_set,
)
from .moments import FilterConfig, MomentSample, MomentVector, aggregate_moments, filter_noise
from .pipeline import PipelineConfig, emit_report, run_pipeline
from .stability import (
    Classification, LinearModel, StabilityReport, classify_stability,
    dispersion_sigma_plus, evolve_mode,
)
from .synthetic import SpeciesCraterLaw, SyntheticCraterSpec, generate_synthetic_impacts

__version__ = "0.1.0"

__all__ = [
    "AtomEvent", "BsParameters", "Classification", "CoefficientSet", "ConcentrationModel",
    "ConfigError", "CraterError", "FilterConfig", "FilterError", "FitBasis", "FourierFit",
    "ImpactDataError", "ImpactRecord", "ImpactSet", "LinearModel", "MomentSample",
    "MomentVector", "NumericalError", "ParameterSignError", "ParityFourierRegressor",
    "PipelineConfig", "RankDeficientFitError", "SpeciesCraterLaw", "SpeciesId",
    "StabilityReport", "SyntheticCraterSpec", "TruncatedBandError", "aggregate_moments",
    "classify_stability", "compute_height_coefficients", "dispersion_sigma_plus",
    "emit_report", "eval_fit", "eval_fit_derivative", "evolve_mode", "filter_noise",
    "fit_moment_curves", "gasb_reference_coefficients", "generate_synthetic_impacts",
    "map_to_bs_parameters", "parse_impact_set", "read_impact_set", "run_pipeline",
    "steady_concentration", "write_impact_set",
]
