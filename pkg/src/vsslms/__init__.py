"""Variable step-size LMS adaptive filters and their mean-square analysis."""
from .curves import LearningCurve
from .errors import ConfigError, DivergenceError, InstabilityError, NumericalError
from .filter import FilterState, TrialTrajectory, lms_step, run_trial
from .model import (Explicit, Sample, SpectralModel, Stream, SystemModel, ToeplitzAR1,
                    ValueField, White, build_covariance, generate_stream,
                    snr_to_noise_variance, spectral_decompose, unit_norm_w_o)
from .rules import AM, KJ, NC, VSQ, Fixed, RuleState, Sp, advance, clamp_policy, init_rule

__version__ = "0.1.0"

__all__ = [
    "AM", "KJ", "NC", "VSQ", "Fixed", "Sp", "RuleState", "advance", "clamp_policy", "init_rule",
    "ConfigError", "DivergenceError", "InstabilityError", "NumericalError",
    "Explicit", "Sample", "SpectralModel", "Stream", "SystemModel", "ToeplitzAR1", "ValueField",
    "White", "build_covariance", "generate_stream", "snr_to_noise_variance",
    "spectral_decompose", "unit_norm_w_o",
    "FilterState", "TrialTrajectory", "lms_step", "run_trial", "LearningCurve",
]
