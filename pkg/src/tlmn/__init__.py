"""Physics-bounded hourly solar irradiance forecasting.

A delay-embedded dilated causal convolution network whose output is a
transmissivity alpha in [alpha_min, alpha_max], multiplied by Ineichen-Perez
clear-sky GHI. Night hours are exactly zero by construction.
"""
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .errors import TLMNError
from .evaluation import EvalReport, ForecastRecord, Forecasts, evaluate_forecasts
from .features import FEATURE_NAMES, FeatureSet, MeteoRecord, MeteoSeries, SplitSpec, build_features
from .ingest import SyntheticConfig, parse_power_csv, synth_generate
from .network import ModelConfig, ModelState, forward, init_state, parameter_count, predict
from .solar_geometry import OMDURMAN, ClearSkyParams, GeoLocation, clear_sky_ghi, solar_position
from .training import TrainConfig, log_cosh_loss, train

__version__ = "0.1.0"
