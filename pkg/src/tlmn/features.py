"""Hourly weather records to the 22-feature normalized input windows.

Feature order is part of the checkpoint contract; bump ``FEATURE_ORDER_VERSION``
whenever ``FEATURE_NAMES`` changes.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, fields
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import ConfigError, DataError, DomainError
from .solar_geometry import (
    ClearSkyParams,
    GeoLocation,
    hourly_clear_sky,
    hourly_extraterrestrial,
    hourly_solar_position,
)
from .timeutil import HOUR, calendar_fields, isoformat, to_datetime64

FEATURE_NAMES = (
    "ghi", "kt", "sza", "dni", "dhi", "t2m", "rh", "ws", "ps",
    "d_t2m", "d_rh", "d_ws", "d_ps", "mean_dni_24h", "mean_dhi_24h", "tsi",
    "sin_m", "cos_m", "sin_d", "cos_d", "sin_h", "cos_h",
)  # fmt: skip
FEATURE_ORDER_VERSION = 1
N_FEATURES = len(FEATURE_NAMES)
FEATURE_INDEX = {name: i for i, name in enumerate(FEATURE_NAMES)}
EXEMPT_FEATURES = ("kt", "sin_m", "cos_m", "sin_d", "cos_d", "sin_h", "cos_h")

KT_MAX = 1.2
NIGHT_CLEAR_SKY = 1.0  # Wh/m2; below this Kt is forced to zero
MEMORY_HOURS = 24
WINDOW_HOURS = 24
DEFAULT_UTC_OFFSET = 2.0  # Central Africa Time
CELESTIAL_NAMES = ("cos_sza", "ghi_clear_norm", "kt")

METEO_FIELDS = ("ghi", "dni", "dhi", "t2m", "rh", "ws", "ps")


@dataclass(frozen=True)
class MeteoRecord:
    timestamp: np.datetime64  # UTC, start of the hour
    ghi: float
    dni: float
    dhi: float
    t2m: float
    rh: float
    ws: float
    ps: float

    def __post_init__(self):
        object.__setattr__(self, "timestamp", np.datetime64(to_datetime64(self.timestamp), "s"))
        for name in ("ghi", "dni", "dhi"):
            if not getattr(self, name) >= 0:
                raise DomainError(f"{name} must be non-negative, got {getattr(self, name)}")
        if not 0.0 <= self.rh <= 100.0:
            raise DomainError(f"relative humidity {self.rh} outside [0, 100]")
        if not self.ws >= 0:
            raise DomainError(f"wind speed {self.ws} is negative")
        if not self.ps > 0:
            raise DomainError(f"surface pressure {self.ps} must be positive")


@dataclass
class MeteoSeries:
    """Column-oriented, chronologically ordered hourly records."""

    timestamps: np.ndarray
    ghi: np.ndarray
    dni: np.ndarray
    dhi: np.ndarray
    t2m: np.ndarray
    rh: np.ndarray
    ws: np.ndarray
    ps: np.ndarray

    def __post_init__(self):
        self.timestamps = to_datetime64(self.timestamps).reshape(-1)
        for name in METEO_FIELDS:
            col = np.asarray(getattr(self, name), dtype=np.float64).reshape(-1)
            if col.shape != self.timestamps.shape:
                raise DataError(f"column {name} has {col.size} rows, expected {self.timestamps.size}")
            setattr(self, name, col)
        if self.timestamps.size > 1 and np.any(np.diff(self.timestamps) <= np.timedelta64(0, "s")):
            raise DataError("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return self.timestamps.size

    def __getitem__(self, idx) -> "MeteoRecord | MeteoSeries":
        if isinstance(idx, (int, np.integer)):
            return MeteoRecord(self.timestamps[idx], *(float(getattr(self, f)[idx]) for f in METEO_FIELDS))
        return MeteoSeries(self.timestamps[idx], *(getattr(self, f)[idx] for f in METEO_FIELDS))

    def __iter__(self) -> Iterator[MeteoRecord]:
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def from_records(cls, records: Iterable[MeteoRecord]) -> "MeteoSeries":
        records = list(records)
        ts = np.array([r.timestamp for r in records], dtype="datetime64[s]")
        cols = [np.array([getattr(r, f) for r in records], dtype=np.float64) for f in METEO_FIELDS]
        return cls(ts, *cols)

    def gaps(self) -> list[tuple[np.datetime64, np.datetime64]]:
        """(last timestamp before, first timestamp after) for every break in hourly spacing."""
        d = np.diff(self.timestamps)
        idx = np.flatnonzero(d != HOUR)
        return [(self.timestamps[i], self.timestamps[i + 1]) for i in idx]

    def segments(self) -> list["MeteoSeries"]:
        """Split into maximal runs of contiguous hours."""
        cuts = np.flatnonzero(np.diff(self.timestamps) != HOUR) + 1
        bounds = np.concatenate([[0], cuts, [len(self)]])
        return [self[int(a):int(b)] for a, b in zip(bounds[:-1], bounds[1:])]


@dataclass(frozen=True)
class FeatureVector:
    ghi: float
    kt: float
    sza: float
    dni: float
    dhi: float
    t2m: float
    rh: float
    ws: float
    ps: float
    d_t2m: float
    d_rh: float
    d_ws: float
    d_ps: float
    mean_dni_24h: float
    mean_dhi_24h: float
    tsi: float
    sin_m: float
    cos_m: float
    sin_d: float
    cos_d: float
    sin_h: float
    cos_h: float

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in FEATURE_NAMES], dtype=np.float64)

    @classmethod
    def from_array(cls, values) -> "FeatureVector":
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (N_FEATURES,):
            raise DomainError(f"expected {N_FEATURES} values, got shape {values.shape}")
        return cls(*(float(v) for v in values))


assert tuple(f.name for f in fields(FeatureVector)) == FEATURE_NAMES


@dataclass
class FeatureSet:
    """Per-hour feature matrix plus the physical anchors needed downstream.

    ``values`` is (N, 22) in ``FEATURE_NAMES`` order. ``ghi_clear`` and
    ``cos_zenith`` are raw (never normalized) and evaluated at each hour's
    midpoint. ``normalized`` records whether ``values`` has been z-scored.
    """

    timestamps: np.ndarray
    values: np.ndarray
    ghi: np.ndarray
    ghi_clear: np.ndarray
    cos_zenith: np.ndarray
    kt: np.ndarray
    solar_constant: float
    normalized: bool = False

    def __len__(self) -> int:
        return self.timestamps.size

    def vectors(self) -> list[FeatureVector]:
        return [FeatureVector.from_array(row) for row in self.values]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, FEATURE_INDEX[name]]

    def celestial(self) -> np.ndarray:
        """(N, 3) celestial conditioning signal: cos SZA, GHI_clear / S0, Kt."""
        return np.stack([self.cos_zenith, self.ghi_clear / self.solar_constant, self.kt], axis=1)

    @staticmethod
    def concatenate(parts: Sequence["FeatureSet"]) -> "FeatureSet":
        if not parts:
            raise DataError("nothing to concatenate")
        if len({p.normalized for p in parts}) > 1:
            raise DataError("cannot mix normalized and raw feature sets")
        out = FeatureSet(
            np.concatenate([p.timestamps for p in parts]),
            np.concatenate([p.values for p in parts]),
            np.concatenate([p.ghi for p in parts]),
            np.concatenate([p.ghi_clear for p in parts]),
            np.concatenate([p.cos_zenith for p in parts]),
            np.concatenate([p.kt for p in parts]),
            parts[0].solar_constant,
            parts[0].normalized,
        )
        if out.timestamps.size > 1 and np.any(np.diff(out.timestamps) <= np.timedelta64(0, "s")):
            raise DataError("feature sets overlap or are out of order")
        return out


def clearness_index(ghi, ghi_clear):
    """Measured over clear-sky GHI, clamped to [0, 1.2] and zero near the horizon."""
    ghi = np.asarray(ghi, dtype=np.float64)
    clear = np.asarray(ghi_clear, dtype=np.float64)
    if np.any(ghi < 0) or np.any(clear < 0):
        raise DomainError("irradiances must be non-negative")
    ok = clear >= NIGHT_CLEAR_SKY
    kt = np.where(ok, ghi / np.where(ok, clear, 1.0), 0.0)
    kt = np.clip(kt, 0.0, KT_MAX)
    return float(kt) if kt.ndim == 0 else kt


def temporal_embedding(t_local) -> np.ndarray:
    """Cyclical month, day-of-year and hour encodings of local clock time.

    Returns an array (..., 6): sin_m, cos_m, sin_d, cos_d, sin_h, cos_h.
    Month and day phases advance continuously through the hour, so the
    calendar rolls over without jumps; whole hours land on the grid points
    2*pi*hour/24.
    """
    cal = calendar_fields(t_local)
    hours = cal["seconds_of_day"] / 3600.0
    month_phase = (cal["month"] - 1 + (cal["day"] - 1 + hours / 24.0) / cal["days_in_month"]) / 12.0
    day_phase = (cal["doy"] - 1 + hours / 24.0) / 365.25
    hour_phase = hours / 24.0
    angles = 2.0 * np.pi * np.stack([month_phase, day_phase, hour_phase], axis=-1)
    out = np.empty(angles.shape[:-1] + (6,))
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


def first_difference(series) -> np.ndarray:
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise DomainError("first_difference needs a non-empty 1-D series")
    out = np.zeros_like(x)
    out[1:] = np.diff(x)
    return out


def rolling_mean(series, window: int) -> np.ndarray:
    """Trailing mean over the last ``window`` values, expanding at the start."""
    if int(window) != window or window < 1:
        raise DomainError(f"window must be a positive integer, got {window}")
    x = np.asarray(series, dtype=np.float64)
    csum = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(x.size)
    lo = np.maximum(idx + 1 - window, 0)
    return (csum[idx + 1] - csum[lo]) / (idx + 1 - lo)


def _check_contiguous(ts: np.ndarray) -> None:
    if ts.size > 1:
        bad = np.flatnonzero(np.diff(ts) != HOUR)
        if bad.size:
            i = bad[0]
            raise DataError(
                f"records are not contiguous hourly: gap after {isoformat(ts[i])} (next {isoformat(ts[i + 1])})"
            )


def build_features(
    records: MeteoSeries | Sequence[MeteoRecord],
    loc: GeoLocation,
    params: ClearSkyParams = ClearSkyParams(),
    utc_offset_hours: float = DEFAULT_UTC_OFFSET,
) -> FeatureSet:
    """Assemble the 22 features for every hour of a contiguous series."""
    series = records if isinstance(records, MeteoSeries) else MeteoSeries.from_records(records)
    if len(series) == 0:
        raise DataError("no records")
    ts = series.timestamps
    _check_contiguous(ts)

    pos = hourly_solar_position(loc, ts)
    clear = np.asarray(hourly_clear_sky(loc, ts, params), dtype=np.float64).reshape(-1)
    tsi = np.asarray(hourly_extraterrestrial(loc, ts, params.solar_constant), dtype=np.float64).reshape(-1)
    kt = clearness_index(series.ghi, clear)
    local = ts + np.timedelta64(int(round(utc_offset_hours * 3600)), "s")

    cols = {
        "ghi": series.ghi,
        "kt": kt,
        "sza": np.asarray(pos.zenith).reshape(-1),
        "dni": series.dni,
        "dhi": series.dhi,
        "t2m": series.t2m,
        "rh": series.rh,
        "ws": series.ws,
        "ps": series.ps,
        "d_t2m": first_difference(series.t2m),
        "d_rh": first_difference(series.rh),
        "d_ws": first_difference(series.ws),
        "d_ps": first_difference(series.ps),
        "mean_dni_24h": rolling_mean(series.dni, MEMORY_HOURS),
        "mean_dhi_24h": rolling_mean(series.dhi, MEMORY_HOURS),
        "tsi": tsi,
    }
    emb = temporal_embedding(local)
    for j, name in enumerate(("sin_m", "cos_m", "sin_d", "cos_d", "sin_h", "cos_h")):
        cols[name] = emb[:, j]
    values = np.stack([cols[name] for name in FEATURE_NAMES], axis=1)
    return FeatureSet(
        ts.copy(), values, series.ghi.copy(), clear, np.asarray(pos.cos_zenith).reshape(-1), kt, params.solar_constant
    )


def build_features_segmented(
    records: MeteoSeries,
    loc: GeoLocation,
    params: ClearSkyParams = ClearSkyParams(),
    utc_offset_hours: float = DEFAULT_UTC_OFFSET,
) -> FeatureSet:
    """Like :func:`build_features` but restarts derivatives and memory at every gap."""
    parts = [build_features(seg, loc, params, utc_offset_hours) for seg in records.segments() if len(seg)]
    return FeatureSet.concatenate(parts)


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    exempt: np.ndarray  # bool mask, True = passed through unchanged
    feature_names: tuple[str, ...] = FEATURE_NAMES

    def __post_init__(self):
        for name in ("mean", "std"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        exempt = np.array(self.exempt, dtype=bool)
        exempt.setflags(write=False)
        object.__setattr__(self, "exempt", exempt)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if not (self.mean.shape == self.std.shape == self.exempt.shape == (len(self.feature_names),)):
            raise DomainError("normalization arrays must match the feature count")
        if np.any(self.std[~self.exempt] <= 0):
            raise DomainError("standard deviations must be positive")

    def to_dict(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "mean": [float(v) for v in self.mean],
            "std": [float(v) for v in self.std],
            "exempt": [bool(v) for v in self.exempt],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.array(d["mean"]), np.array(d["std"]), np.array(d["exempt"]), tuple(d["feature_names"]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, NormStats):
            return NotImplemented
        return (
            self.feature_names == other.feature_names
            and np.array_equal(self.mean, other.mean)
            and np.array_equal(self.std, other.std)
            and np.array_equal(self.exempt, other.exempt)
        )


def fit_normalization(features: FeatureSet | np.ndarray, min_samples: int = 100) -> NormStats:
    """Per-feature z-score statistics. Fit on the training partition only."""
    x = features.values if isinstance(features, FeatureSet) else np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != N_FEATURES:
        raise DomainError(f"expected an (N, {N_FEATURES}) matrix, got {x.shape}")
    if x.shape[0] < min_samples:
        raise DomainError(f"need at least {min_samples} vectors to fit normalization, got {x.shape[0]}")
    exempt = np.array([name in EXEMPT_FEATURES for name in FEATURE_NAMES])
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    mean[exempt] = 0.0
    std[exempt] = 1.0
    flat = (~exempt) & ~(std > 0)
    if np.any(flat):
        names = [FEATURE_NAMES[i] for i in np.flatnonzero(flat)]
        warnings.warn(f"zero-variance features {names}; using std = 1", RuntimeWarning, stacklevel=2)
        std[flat] = 1.0
    return NormStats(mean, std, exempt)


def apply_normalization(x, stats: NormStats):
    """Z-score the non-exempt columns. Accepts a FeatureSet, FeatureVector or array (..., 22)."""
    if isinstance(x, FeatureSet):
        if x.normalized:
            raise DataError("feature set is already normalized")
        return FeatureSet(
            x.timestamps, apply_normalization(x.values, stats), x.ghi, x.ghi_clear, x.cos_zenith, x.kt,
            x.solar_constant, normalized=True,
        )  # fmt: skip
    if isinstance(x, FeatureVector):
        return FeatureVector.from_array(apply_normalization(x.to_array(), stats))
    arr = np.asarray(x, dtype=np.float64)
    return np.where(stats.exempt, arr, (arr - stats.mean) / stats.std)


def invert_normalization(x, stats: NormStats):
    if isinstance(x, FeatureVector):
        return FeatureVector.from_array(invert_normalization(x.to_array(), stats))
    arr = np.asarray(x, dtype=np.float64)
    return np.where(stats.exempt, arr, arr * stats.std + stats.mean)


@dataclass(frozen=True)
class SplitSpec:
    """Inclusive calendar-year ranges (UTC) for the train and test partitions."""

    train_range: tuple[int, int] = (2010, 2015)
    test_range: tuple[int, int] = (2020, 2024)

    def __post_init__(self):
        object.__setattr__(self, "train_range", tuple(int(v) for v in self.train_range))
        object.__setattr__(self, "test_range", tuple(int(v) for v in self.test_range))
        for label, (a, b) in (("train", self.train_range), ("test", self.test_range)):
            if a > b:
                raise ConfigError(f"{label} range {a}-{b} is reversed")
        if not self.train_range[1] < self.test_range[0]:
            raise ConfigError(
                f"train range {self.train_range} must end at least one year before test range {self.test_range}"
            )

    def partition(self, timestamps) -> np.ndarray:
        """0 = train, 1 = test, -1 = neither, per timestamp."""
        years = calendar_fields(timestamps)["year"]
        out = np.full(years.shape, -1, dtype=np.int8)
        out[(years >= self.train_range[0]) & (years <= self.train_range[1])] = 0
        out[(years >= self.test_range[0]) & (years <= self.test_range[1])] = 1
        return out


@dataclass(frozen=True)
class FeatureWindow:
    features: np.ndarray  # (24, 22) normalized
    target_time: np.datetime64
    target_ghi: float
    target_ghi_clear: float
    celestial: np.ndarray  # (24, 3) raw cos SZA, GHI_clear / S0, Kt per input hour


@dataclass
class WindowSet:
    """A batch of windows stored as stacked arrays."""

    features: np.ndarray  # (M, T, F)
    celestial: np.ndarray  # (M, T, 3)
    target_time: np.ndarray  # (M,)
    target_ghi: np.ndarray  # (M,)
    target_ghi_clear: np.ndarray  # (M,)

    def __len__(self) -> int:
        return self.target_time.size

    def __getitem__(self, idx) -> "FeatureWindow | WindowSet":
        if isinstance(idx, (int, np.integer)):
            return FeatureWindow(
                self.features[idx], self.target_time[idx], float(self.target_ghi[idx]),
                float(self.target_ghi_clear[idx]), self.celestial[idx],
            )  # fmt: skip
        return WindowSet(
            self.features[idx], self.celestial[idx], self.target_time[idx], self.target_ghi[idx],
            self.target_ghi_clear[idx],
        )  # fmt: skip

    def __iter__(self) -> Iterator[FeatureWindow]:
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def from_windows(cls, windows: Sequence[FeatureWindow]) -> "WindowSet":
        return cls(
            np.stack([w.features for w in windows]),
            np.stack([w.celestial for w in windows]),
            np.array([w.target_time for w in windows], dtype="datetime64[s]"),
            np.array([w.target_ghi for w in windows], dtype=np.float64),
            np.array([w.target_ghi_clear for w in windows], dtype=np.float64),
        )

    @classmethod
    def empty(cls, window: int = WINDOW_HOURS, width: int = N_FEATURES) -> "WindowSet":
        return cls(
            np.zeros((0, window, width)), np.zeros((0, window, 3)), np.zeros(0, dtype="datetime64[s]"),
            np.zeros(0), np.zeros(0),
        )  # fmt: skip

    def split_tail(self, fraction: float) -> tuple["WindowSet", "WindowSet"]:
        """Chronological (head, tail) split with ``fraction`` of windows in the tail."""
        if not 0.0 < fraction < 1.0:
            raise ConfigError("validation fraction must lie in (0, 1)")
        order = np.argsort(self.target_time, kind="stable")
        n_tail = max(1, int(round(len(self) * fraction)))
        if n_tail >= len(self):
            raise DataError("too few windows for a validation split")
        return self[order[:-n_tail]], self[order[-n_tail:]]


def window_indices(timestamps: np.ndarray, window: int = WINDOW_HOURS) -> np.ndarray:
    """Start indices i such that hours i .. i+window (target) are contiguous."""
    n = timestamps.size
    if n <= window:
        return np.zeros(0, dtype=np.int64)
    ok_step = np.diff(timestamps) == HOUR
    # count of good steps in each run of `window` consecutive steps
    csum = np.concatenate([[0], np.cumsum(ok_step)])
    starts = np.arange(n - window)
    return starts[csum[starts + window] - csum[starts] == window]


def make_windows(
    features: FeatureSet,
    targets: MeteoSeries | None,
    split: SplitSpec,
    window: int = WINDOW_HOURS,
) -> tuple[WindowSet, WindowSet]:
    """Sliding one-hour-ahead windows, assigned to train or test partitions.

    A window is kept only if its inputs and its target hour are contiguous
    and all fall in the same partition. ``targets`` defaults to the raw GHI
    carried by ``features``; when given it must be aligned with them.
    """
    if not features.normalized:
        raise DataError("make_windows expects normalized features")
    ghi = features.ghi
    if targets is not None:
        if len(targets) != len(features) or not np.array_equal(targets.timestamps, features.timestamps):
            raise DataError("targets are not aligned with features")
        ghi = targets.ghi
    ts = features.timestamps
    starts = window_indices(ts, window)
    part = split.partition(ts)
    # partition must be constant across inputs and target
    if starts.size:
        span = np.stack([part[starts + j] for j in range(window + 1)], axis=1)
        same = np.all(span == span[:, :1], axis=1)
        starts, labels = starts[same], span[same, 0]
    else:
        labels = np.zeros(0, dtype=np.int8)

    celestial = features.celestial()
    out = []
    for label in (0, 1):
        s = starts[labels == label]
        if s.size == 0:
            out.append(WindowSet.empty(window, features.values.shape[1]))
            continue
        rows = s[:, None] + np.arange(window)[None, :]
        tgt = s + window
        out.append(WindowSet(features.values[rows], celestial[rows], ts[tgt], ghi[tgt], features.ghi_clear[tgt]))
    return out[0], out[1]


def latest_window(features: FeatureSet, target_ghi_clear: float, window: int = WINDOW_HOURS) -> FeatureWindow:
    """The window formed by the last ``window`` hours, targeting the hour after."""
    if not features.normalized:
        raise DataError("latest_window expects normalized features")
    if len(features) < window:
        raise DataError(f"need at least {window} hours of history, got {len(features)}")
    ts = features.timestamps[-window:]
    _check_contiguous(ts)
    return FeatureWindow(
        features.values[-window:], ts[-1] + HOUR, float("nan"), float(target_ghi_clear), features.celestial()[-window:]
    )
