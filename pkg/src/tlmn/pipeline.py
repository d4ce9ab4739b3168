"""Glue between raw records, windows, training and evaluation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .errors import DataError
from .evaluation import EvalReport, Forecasts, evaluate_forecasts
from .features import (
    FeatureSet,
    MeteoSeries,
    NormStats,
    WindowSet,
    apply_normalization,
    build_features_segmented,
    fit_normalization,
    make_windows,
)
from .network import ModelState, predict
from .training import TrainResult, train


@dataclass
class PreparedData:
    features: FeatureSet  # normalized
    norm_stats: NormStats
    train: WindowSet
    test: WindowSet


def prepare(series: MeteoSeries, cfg: RunConfig, norm_stats: NormStats | None = None) -> PreparedData:
    """Features -> normalization (fit on the train partition unless given) -> windows."""
    raw = build_features_segmented(series, cfg.location, cfg.clearsky, cfg.utc_offset_hours)
    if norm_stats is None:
        in_train = cfg.split.partition(raw.timestamps) == 0
        if not np.any(in_train):
            raise DataError(f"no records fall in the training years {cfg.split.train_range}")
        norm_stats = fit_normalization(raw.values[in_train])
    feats = apply_normalization(raw, norm_stats)
    train_set, test_set = make_windows(feats, None, cfg.split, cfg.model.window_len)
    return PreparedData(feats, norm_stats, train_set, test_set)


def run_training(series: MeteoSeries, cfg: RunConfig) -> tuple[TrainResult, PreparedData]:
    data = prepare(series, cfg)
    if len(data.train) == 0:
        raise DataError("no training windows; check the split years against the data")
    fit_set, val_set = data.train.split_tail(cfg.train.validation_fraction)
    result = train(fit_set, val_set, cfg.model, cfg.train, norm_stats=data.norm_stats)
    return result, data


def forecast_windows(state: ModelState, windows: WindowSet) -> Forecasts:
    pred, alpha = predict(state, windows)
    return Forecasts(windows.target_time, pred, windows.target_ghi, windows.target_ghi_clear, alpha)


def run_evaluation(state: ModelState, series: MeteoSeries, cfg: RunConfig) -> tuple[EvalReport, Forecasts]:
    if state.norm_stats is None:
        raise DataError("checkpoint carries no normalization statistics")
    data = prepare(series, cfg, state.norm_stats)
    if len(data.test) == 0:
        raise DataError(f"no test windows in years {cfg.split.test_range}")
    fc = forecast_windows(state, data.test)
    report = evaluate_forecasts(fc, cfg.utc_offset_hours, config=cfg.to_dict())
    return report, fc
