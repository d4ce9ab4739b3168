"""Forecast metrics, diagnostics and persistence baselines."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, EvaluationError
from .features import NIGHT_CLEAR_SKY, clearness_index
from .timeutil import HOUR, calendar_fields, isoformat, to_datetime64

KT_CLASSES = (
    ("clear", "KT > 0.70"),
    ("partly_cloudy", "0.30 <= KT <= 0.70"),
    ("overcast_dust", "KT < 0.30"),
)
RAMP_THRESHOLD = 150.0
LAG_SEARCH_HOURS = 6
LAG_WINDOW_HOURS = 12


@dataclass(frozen=True)
class ForecastRecord:
    timestamp: np.datetime64
    ghi_pred: float
    ghi_meas: float
    ghi_clear: float
    alpha: float


@dataclass
class Forecasts:
    """Column-oriented forecast records, kept in chronological order."""

    timestamps: np.ndarray
    ghi_pred: np.ndarray
    ghi_meas: np.ndarray
    ghi_clear: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        self.timestamps = to_datetime64(self.timestamps).reshape(-1)
        n = self.timestamps.size
        for name in ("ghi_pred", "ghi_meas", "ghi_clear", "alpha"):
            arr = np.asarray(getattr(self, name), dtype=np.float64).reshape(-1)
            if arr.size != n:
                raise DataError(f"{name} has {arr.size} entries, expected {n}")
            setattr(self, name, arr)
        order = np.argsort(self.timestamps, kind="stable")
        if np.any(order != np.arange(n)):
            for name in ("timestamps", "ghi_pred", "ghi_meas", "ghi_clear", "alpha"):
                setattr(self, name, getattr(self, name)[order])

    def __len__(self) -> int:
        return self.timestamps.size

    def __getitem__(self, idx) -> "Forecasts":
        return Forecasts(self.timestamps[idx], self.ghi_pred[idx], self.ghi_meas[idx], self.ghi_clear[idx], self.alpha[idx])

    @classmethod
    def from_records(cls, records: Iterable[ForecastRecord]) -> "Forecasts":
        recs = list(records)
        return cls(
            np.array([r.timestamp for r in recs], dtype="datetime64[s]"),
            [r.ghi_pred for r in recs], [r.ghi_meas for r in recs], [r.ghi_clear for r in recs],
            [r.alpha for r in recs],
        )  # fmt: skip

    def records(self) -> list[ForecastRecord]:
        return [
            ForecastRecord(self.timestamps[i], float(self.ghi_pred[i]), float(self.ghi_meas[i]),
                           float(self.ghi_clear[i]), float(self.alpha[i]))
            for i in range(len(self))
        ]  # fmt: skip

    def daylight(self) -> "Forecasts":
        return self[self.ghi_clear > 0]

    def with_predictions(self, pred) -> "Forecasts":
        pred = np.asarray(pred, dtype=np.float64)
        alpha = np.full(pred.shape, np.nan)
        return Forecasts(self.timestamps, pred, self.ghi_meas, self.ghi_clear, alpha)


def _as_forecasts(records) -> Forecasts:
    return records if isinstance(records, Forecasts) else Forecasts.from_records(records)


def _pick(records, daylight_only: bool) -> Forecasts:
    fc = _as_forecasts(records)
    return fc.daylight() if daylight_only else fc


def rmse(records, daylight_only: bool = False) -> float:
    fc = _pick(records, daylight_only)
    if len(fc) == 0:
        raise EvaluationError("no records to score")
    return float(np.sqrt(np.mean((fc.ghi_pred - fc.ghi_meas) ** 2)))


def mae(records, daylight_only: bool = False) -> float:
    fc = _pick(records, daylight_only)
    if len(fc) == 0:
        raise EvaluationError("no records to score")
    return float(np.mean(np.abs(fc.ghi_pred - fc.ghi_meas)))


def pearson(records, daylight_only: bool = False) -> float:
    fc = _pick(records, daylight_only)
    if len(fc) < 2:
        raise EvaluationError("Pearson correlation needs at least two records")
    p = fc.ghi_pred - fc.ghi_pred.mean()
    m = fc.ghi_meas - fc.ghi_meas.mean()
    sm = math.sqrt(float(m @ m))
    sp = math.sqrt(float(p @ p))
    if sm == 0.0:
        raise EvaluationError("Pearson correlation undefined: measured series has zero variance")
    if sp == 0.0:
        raise EvaluationError("Pearson correlation undefined: predicted series has zero variance")
    return float(np.clip((p @ m) / (sp * sm), -1.0, 1.0))


def night_noise_audit(records) -> dict:
    """Count hours with zero clear-sky GHI but a non-zero prediction."""
    fc = _as_forecasts(records)
    night = fc.ghi_clear == 0.0
    bad = night & (fc.ghi_pred != 0.0)
    max_pred = float(np.max(np.abs(fc.ghi_pred[night]))) if np.any(night) else 0.0
    return {"violating_hours": int(bad.sum()), "max_night_pred": max_pred}


def _check_hourly(ts: np.ndarray) -> None:
    if ts.size > 1 and np.any(np.diff(ts) != HOUR):
        raise DataError("phase-lag analysis needs contiguous hourly records")


def _corr(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    den = math.sqrt(float(a @ a) * float(b @ b))
    return float(a @ b) / den if den > 0 else math.nan


def best_lag(pred: np.ndarray, meas: np.ndarray, center: int, search: int, window: int) -> int | None:
    """Lag maximizing corr(pred[t + lag], meas[t]) over ``window`` hours around ``center``.

    Ties go to the smallest |lag|, then the negative side. None if every lag
    is undefined (constant segments).
    """
    lo = center - window // 2
    idx = np.arange(lo, lo + window)
    best, best_c = None, -math.inf
    for lag in sorted(range(-search, search + 1), key=lambda v: (abs(v), v)):
        c = _corr(pred[idx + lag], meas[idx])
        if not math.isnan(c) and c > best_c + 1e-12:
            best, best_c = lag, c
    return best


def phase_lag(
    records,
    ramp_threshold: float = RAMP_THRESHOLD,
    search_window: int = LAG_SEARCH_HOURS,
    corr_window: int = LAG_WINDOW_HOURS,
) -> dict:
    """Median lag (hours) between prediction and measurement around ramp events.

    A ramp event is an hour where |meas[t] - meas[t-1]| exceeds the threshold.
    Events too close to either end for the full lag scan are skipped.
    """
    fc = _as_forecasts(records)
    _check_hourly(fc.timestamps)
    meas, pred = fc.ghi_meas, fc.ghi_pred
    n = len(fc)
    events = []
    half = corr_window // 2
    for t in np.flatnonzero(np.abs(np.diff(meas)) > ramp_threshold) + 1:
        if t - half - search_window < 0 or t - half + corr_window - 1 + search_window >= n:
            continue
        lag = best_lag(pred, meas, int(t), search_window, corr_window)
        if lag is not None:
            events.append({"timestamp": isoformat(fc.timestamps[t]), "lag_hours": int(lag)})
    lags = [e["lag_hours"] for e in events]
    return {
        "median_lag_hours": float(np.median(lags)) if lags else None,
        "n_events": len(events),
        "no_events": not events,
        "events": events,
    }


def local_calendar(ts: np.ndarray, utc_offset_hours: float) -> dict[str, np.ndarray]:
    return calendar_fields(ts + np.timedelta64(int(round(utc_offset_hours * 3600)), "s"))


def _local_days(ts: np.ndarray, utc_offset_hours: float) -> np.ndarray:
    return (ts + np.timedelta64(int(round(utc_offset_hours * 3600)), "s")).astype("datetime64[D]")


def classify_kt(kt: float) -> str:
    if kt > 0.70:
        return "clear"
    if kt >= 0.30:
        return "partly_cloudy"
    return "overcast_dust"


def kt_stratified_rmse(records, utc_offset_hours: float = 2.0) -> list[dict]:
    """RMSE by daily clearness class; daily KT is sum(meas) / sum(clear) over daylight hours."""
    fc = _as_forecasts(records).daylight()
    days = _local_days(fc.timestamps, utc_offset_hours)
    uniq, inv = np.unique(days, return_inverse=True)
    meas_sum = np.bincount(inv, weights=fc.ghi_meas, minlength=uniq.size)
    clear_sum = np.bincount(inv, weights=fc.ghi_clear, minlength=uniq.size)
    day_kt = meas_sum / clear_sum
    labels = np.array([classify_kt(k) for k in day_kt])
    rows = []
    n_days = uniq.size
    for name, rng in KT_CLASSES:
        chosen = labels == name
        mask = chosen[inv]
        err = fc.ghi_pred[mask] - fc.ghi_meas[mask]
        rows.append({
            "class": name,
            "kt_range": rng,
            "days": int(chosen.sum()),
            "day_fraction": float(chosen.sum() / n_days) if n_days else 0.0,
            "hours": int(mask.sum()),
            "rmse": float(np.sqrt(np.mean(err**2))) if mask.any() else None,
        })  # fmt: skip
    return rows


def diurnal_envelope(records, utc_offset_hours: float = 2.0) -> list[dict]:
    """Mean prediction and measurement for each local hour of day."""
    fc = _as_forecasts(records)
    hour = local_calendar(fc.timestamps, utc_offset_hours)["hour"]
    rows = []
    for h in range(24):
        m = hour == h
        n = int(m.sum())
        rows.append({
            "hour": h,
            "count": n,
            "mean_pred": float(fc.ghi_pred[m].mean()) if n else None,
            "mean_meas": float(fc.ghi_meas[m].mean()) if n else None,
        })  # fmt: skip
    return rows


def envelope_max_deviation(rows: list[dict]) -> float | None:
    diffs = [abs(r["mean_pred"] - r["mean_meas"]) for r in rows if r["count"]]
    return max(diffs) if diffs else None


def cumulative_abs_error(records) -> np.ndarray:
    fc = _as_forecasts(records)
    return np.cumsum(np.abs(fc.ghi_pred - fc.ghi_meas))


def yearly_rmse(records, utc_offset_hours: float = 0.0) -> list[dict]:
    fc = _as_forecasts(records)
    years = local_calendar(fc.timestamps, utc_offset_hours)["year"]
    out = []
    for y in np.unique(years):
        m = years == y
        err = fc.ghi_pred[m] - fc.ghi_meas[m]
        out.append({"year": int(y), "hours": int(m.sum()), "rmse": float(np.sqrt(np.mean(err**2)))})
    return out


def residual_histogram(records, bin_width: float = 10.0, daylight_only: bool = True) -> list[dict]:
    fc = _pick(records, daylight_only)
    r = fc.ghi_pred - fc.ghi_meas
    if r.size == 0:
        return []
    lo = math.floor(r.min() / bin_width) * bin_width
    hi = math.floor(r.max() / bin_width) * bin_width + bin_width
    edges = np.arange(lo, hi + bin_width / 2, bin_width)
    counts, edges = np.histogram(r, bins=edges)
    return [
        {"bin_lo": float(a), "bin_hi": float(b), "count": int(c)} for a, b, c in zip(edges[:-1], edges[1:], counts)
    ]


def persistence_forecast(meas) -> np.ndarray:
    """pred[t] = meas[t-1]; the first hour has no forecast (NaN)."""
    meas = np.asarray(meas, dtype=np.float64)
    out = np.full(meas.shape, np.nan)
    out[1:] = meas[:-1]
    return out


def smart_persistence_forecast(meas, clear_sky) -> np.ndarray:
    """pred[t] = Kt[t-1] * clear[t], with Kt zero near the horizon."""
    meas = np.asarray(meas, dtype=np.float64)
    clear = np.asarray(clear_sky, dtype=np.float64)
    kt = clearness_index(meas, clear)
    out = np.full(meas.shape, np.nan)
    out[1:] = kt[:-1] * clear[1:]
    return out


def _baseline_forecasts(fc: Forecasts) -> dict[str, Forecasts]:
    """Persistence baselines over the same target hours, from the preceding hour."""
    ts = fc.timestamps
    prev_ok = np.concatenate([[False], np.diff(ts) == HOUR])
    naive = persistence_forecast(fc.ghi_meas)
    smart = smart_persistence_forecast(fc.ghi_meas, fc.ghi_clear)
    return {"persistence": fc.with_predictions(naive)[prev_ok], "smart_persistence": fc.with_predictions(smart)[prev_ok]}


def _metric_block(fc: Forecasts) -> dict:
    out = {}
    for label, day in (("all_hours", False), ("daylight", True)):
        sub = _pick(fc, day)
        block = {"n": len(sub)}
        block["rmse"] = rmse(sub) if len(sub) else None
        block["mae"] = mae(sub) if len(sub) else None
        try:
            block["pearson_r"] = pearson(sub)
        except EvaluationError:
            block["pearson_r"] = None
        out[label] = block
    return out


@dataclass
class EvalReport:
    metrics: dict
    night_noise: dict
    phase_lag: dict
    kt_strata: list[dict]
    diurnal_envelope: list[dict]
    envelope_max_deviation: float | None
    yearly_rmse: list[dict]
    baselines: dict
    cumulative_abs_error: np.ndarray = field(repr=False)
    residual_histogram: list[dict] = field(repr=False)
    timestamps: np.ndarray = field(repr=False)
    config: dict | None = None
    generated_at: str = ""

    @property
    def rmse(self) -> float:
        return self.metrics["all_hours"]["rmse"]

    def to_dict(self) -> dict:
        return {
            "generated_at": self.generated_at,
            "config": self.config,
            "metrics": self.metrics,
            "night_noise": self.night_noise,
            "phase_lag": self.phase_lag,
            "kt_strata": self.kt_strata,
            "diurnal_envelope": self.diurnal_envelope,
            "envelope_max_deviation": self.envelope_max_deviation,
            "yearly_rmse": self.yearly_rmse,
            "baselines": self.baselines,
            "cumulative_abs_error_final": float(self.cumulative_abs_error[-1]) if self.cumulative_abs_error.size else 0.0,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False)


def evaluate_forecasts(
    records,
    utc_offset_hours: float = 2.0,
    ramp_threshold: float = RAMP_THRESHOLD,
    search_window: int = LAG_SEARCH_HOURS,
    config: dict | None = None,
) -> EvalReport:
    fc = _as_forecasts(records)
    if len(fc) == 0:
        raise EvaluationError("no forecasts to evaluate")
    envelope = diurnal_envelope(fc, utc_offset_hours)
    baselines = {name: _metric_block(b) for name, b in _baseline_forecasts(fc).items()}
    return EvalReport(
        metrics=_metric_block(fc),
        night_noise=night_noise_audit(fc),
        phase_lag=_phase_lag_segmented(fc, ramp_threshold, search_window),
        kt_strata=kt_stratified_rmse(fc, utc_offset_hours),
        diurnal_envelope=envelope,
        envelope_max_deviation=envelope_max_deviation(envelope),
        yearly_rmse=yearly_rmse(fc, utc_offset_hours),
        baselines=baselines,
        cumulative_abs_error=cumulative_abs_error(fc),
        residual_histogram=residual_histogram(fc),
        timestamps=fc.timestamps,
        config=config,
        generated_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )


def _phase_lag_segmented(fc: Forecasts, ramp_threshold: float, search_window: int) -> dict:
    """Run :func:`phase_lag` on each contiguous run and pool the events."""
    ts = fc.timestamps
    cuts = np.flatnonzero(np.diff(ts) != HOUR) + 1
    bounds = np.concatenate([[0], cuts, [len(fc)]])
    events = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        events += phase_lag(fc[int(a) : int(b)], ramp_threshold, search_window)["events"]
    lags = [e["lag_hours"] for e in events]
    return {
        "median_lag_hours": float(np.median(lags)) if lags else None,
        "n_events": len(events),
        "no_events": not events,
        "events": events,
    }


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow(["" if v is None else v for v in r])


def write_report(report: EvalReport, out_dir: str | Path, forecasts: Forecasts | None = None) -> dict[str, Path]:
    """Write report.json plus per-figure CSV files into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"report": out / "report.json"}
    paths["report"].write_text(report.to_json() + "\n")

    paths["diurnal_envelope"] = out / "diurnal_envelope.csv"
    _write_csv(paths["diurnal_envelope"], ["hour", "count", "mean_pred", "mean_meas"],
               ([r["hour"], r["count"], r["mean_pred"], r["mean_meas"]] for r in report.diurnal_envelope))  # fmt: skip
    paths["cumulative_abs_error"] = out / "cumulative_abs_error.csv"
    _write_csv(paths["cumulative_abs_error"], ["timestamp", "cumulative_abs_error"],
               ([isoformat(t), repr(float(v))] for t, v in zip(report.timestamps, report.cumulative_abs_error)))  # fmt: skip
    paths["yearly_rmse"] = out / "yearly_rmse.csv"
    _write_csv(paths["yearly_rmse"], ["year", "hours", "rmse"],
               ([r["year"], r["hours"], r["rmse"]] for r in report.yearly_rmse))  # fmt: skip
    paths["kt_strata"] = out / "kt_strata.csv"
    _write_csv(paths["kt_strata"], ["class", "kt_range", "days", "day_fraction", "hours", "rmse"],
               ([r["class"], r["kt_range"], r["days"], r["day_fraction"], r["hours"], r["rmse"]] for r in report.kt_strata))  # fmt: skip
    paths["residual_histogram"] = out / "residual_histogram.csv"
    _write_csv(paths["residual_histogram"], ["bin_lo", "bin_hi", "count"],
               ([r["bin_lo"], r["bin_hi"], r["count"]] for r in report.residual_histogram))  # fmt: skip
    if forecasts is not None:
        paths["forecasts"] = out / "forecasts.csv"
        _write_csv(paths["forecasts"], ["timestamp", "ghi_pred", "ghi_meas", "ghi_clear", "alpha"],
                   ([isoformat(forecasts.timestamps[i]), repr(float(forecasts.ghi_pred[i])), repr(float(forecasts.ghi_meas[i])),
                     repr(float(forecasts.ghi_clear[i])), repr(float(forecasts.alpha[i]))] for i in range(len(forecasts))))  # fmt: skip
    return paths
