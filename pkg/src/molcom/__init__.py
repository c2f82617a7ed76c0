"""Channel models, fitting and simulation for vertical molecular communication."""

from .channel_models import (
    DiffusionParams,
    KinematicsParams,
    PeakNotFoundError,
    VerticalChannelParams,
    diffusion_response,
    peak_time,
    uniform_acceleration_velocity,
    vertical_response,
    vertical_response_gradient,
    zero_crossing_time,
)
from .estimators import BaselineSubtractor, PeakNormalizer, VerticalChannelRegressor
from .fitting import FitConfig, FitResult, average_fit, fit_arrays, fit_vertical_model
from .particle_sim import ConcentrationProfile, SimConfig, simulate, synthetic_trace
from .traces import (
    TimeSeries,
    TrialSet,
    average_trials,
    normalize_peak,
    parse_trace,
    resample,
    serialize_trace,
    subtract_baseline,
    window,
)

__version__ = "0.1.0"
