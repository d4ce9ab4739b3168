"""NASA POWER acquisition and parsing, plus an offline synthetic weather generator."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import threading
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ConfigError, FetchError, IntegrityError, ParseError
from .features import METEO_FIELDS, MeteoSeries
from .solar_geometry import OMDURMAN, ClearSkyParams, GeoLocation, hourly_clear_sky, hourly_solar_position
from .timeutil import HOUR, calendar_fields, isoformat, to_datetime64

log = logging.getLogger(__name__)

POWER_HOURLY_URL = "https://power.larc.nasa.gov/api/temporal/hourly/point"
CACHE_ENV = "TLMN_CACHE_DIR"
TIME_COLUMNS = ("YEAR", "MO", "DY", "HR")
IRRADIANCE_SCALE = {"Wh/m2": 1.0, "W/m2": 1.0, "kWh/m2": 1000.0, "MJ/m2": 1e6 / 3600.0}


@dataclass(frozen=True)
class PowerColumnMap:
    columns: tuple[tuple[str, str], ...] = (
        ("ALLSKY_SFC_SW_DWN", "ghi"),
        ("ALLSKY_SFC_SW_DNI", "dni"),
        ("ALLSKY_SFC_SW_DIFF", "dhi"),
        ("T2M", "t2m"),
        ("RH2M", "rh"),
        ("WS2M", "ws"),
        ("PS", "ps"),
    )
    missing_value: float = -999.0
    irradiance_unit: str = "Wh/m2"

    def __post_init__(self):
        targets = [f for _, f in self.columns]
        if sorted(targets) != sorted(METEO_FIELDS):
            raise ConfigError(f"column map must cover each of {METEO_FIELDS} exactly once, got {targets}")
        if len({s for s, _ in self.columns}) != len(self.columns):
            raise ConfigError("duplicate source column in column map")
        if self.irradiance_unit not in IRRADIANCE_SCALE:
            raise ConfigError(f"unknown irradiance unit {self.irradiance_unit!r}; use one of {list(IRRADIANCE_SCALE)}")

    @property
    def source_for(self) -> dict[str, str]:
        return {f: s for s, f in self.columns}

    @property
    def parameters(self) -> list[str]:
        return [s for s, _ in self.columns]


@dataclass
class GapRun:
    start: np.datetime64
    end: np.datetime64  # inclusive, last missing hour
    hours: int

    def __str__(self) -> str:
        return f"{isoformat(self.start)} .. {isoformat(self.end)} ({self.hours} h)"


@dataclass
class GapReport:
    runs: list[GapRun] = field(default_factory=list)

    @property
    def missing_hours(self) -> int:
        return sum(r.hours for r in self.runs)

    def __bool__(self) -> bool:
        return bool(self.runs)


def _gap_runs(present: np.ndarray) -> list[GapRun]:
    """Missing-hour runs strictly inside the span of ``present`` (sorted timestamps)."""
    runs = []
    if present.size < 2:
        return runs
    steps = np.diff(present)
    for i in np.flatnonzero(steps > HOUR):
        start = present[i] + HOUR
        end = present[i + 1] - HOUR
        runs.append(GapRun(start, end, int((end - start) // HOUR) + 1))
    return runs


def _read_table(text: str, path: str) -> tuple[list[str], list[tuple[int, list[str]]], int]:
    lines = text.splitlines()
    first = 0
    if lines and lines[0].strip().startswith("-BEGIN HEADER-"):
        for i, line in enumerate(lines):
            if line.strip().startswith("-END HEADER-"):
                first = i + 1
                break
        else:
            raise ParseError(f"{path}: line 1: header block never closed")
    while first < len(lines) and not lines[first].strip():
        first += 1
    if first >= len(lines):
        raise ParseError(f"{path}: no header row")
    reader = csv.reader(lines[first:])
    header = [h.strip() for h in next(reader)]
    rows = [(first + 2 + i, row) for i, row in enumerate(reader) if any(c.strip() for c in row)]
    return header, rows, first + 1


def parse_power_csv(path: str | Path, column_map: PowerColumnMap = PowerColumnMap()) -> tuple[MeteoSeries, GapReport]:
    """Parse a NASA POWER hourly CSV (or the package's own CSV layout).

    POWER files carry YEAR, MO, DY, HR columns (UTC) followed by parameter
    columns; native files carry an ISO-8601 ``timestamp`` column and the
    record field names. Rows holding the sentinel in any field are dropped
    and reported as gaps, as are hours absent from the file.
    """
    path = str(path)
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"{path}: cannot read: {exc.strerror}") from None
    header, rows, header_line = _read_table(text, path)

    native = "timestamp" in header
    if native:
        time_cols: tuple[str, ...] = ("timestamp",)
        source = {f: f for f in METEO_FIELDS}
    else:
        time_cols = TIME_COLUMNS
        source = column_map.source_for
    known = set(time_cols) | set(source.values())
    unknown = [h for h in header if h not in known]
    if unknown:
        raise ParseError(f"{path}: line {header_line}: unknown columns {unknown}")
    missing = [c for c in known if c not in header]
    if missing:
        raise ParseError(f"{path}: line {header_line}: missing columns {sorted(missing)}")
    col = {h: i for i, h in enumerate(header)}
    scale = IRRADIANCE_SCALE[column_map.irradiance_unit]

    stamps: list[np.datetime64] = []
    values: list[list[float]] = []
    flagged: list[np.datetime64] = []
    for lineno, row in rows:
        if len(row) != len(header):
            raise ParseError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            if native:
                ts = np.datetime64(row[col["timestamp"]].strip().rstrip("Z"), "s")
            else:
                y, mo, d, hr = (int(float(row[col[c]])) for c in TIME_COLUMNS)
                ts = np.datetime64(date(y, mo, d).isoformat(), "s") + hr * HOUR
            vals = [float(row[col[source[f]]]) for f in METEO_FIELDS]
        except (ValueError, TypeError) as exc:
            raise ParseError(f"{path}: line {lineno}: {exc}") from None
        if any(v == column_map.missing_value or not np.isfinite(v) for v in vals):
            flagged.append(ts)
            continue
        stamps.append(ts)
        values.append(vals)

    order = np.argsort(np.array(stamps, dtype="datetime64[s]"), kind="stable")
    ts_arr = np.array(stamps, dtype="datetime64[s]")[order]
    if ts_arr.size > 1 and np.any(np.diff(ts_arr) == np.timedelta64(0, "s")):
        dup = ts_arr[np.flatnonzero(np.diff(ts_arr) == np.timedelta64(0, "s"))[0]]
        raise ParseError(f"{path}: duplicate timestamp {isoformat(dup)}")
    mat = np.array(values, dtype=np.float64).reshape(-1, len(METEO_FIELDS))[order]
    cols = {f: mat[:, i] for i, f in enumerate(METEO_FIELDS)}
    if not native:
        for f in ("ghi", "dni", "dhi"):
            cols[f] = cols[f] * scale
    for f in ("ghi", "dni", "dhi", "ws"):
        cols[f] = np.maximum(cols[f], 0.0)
    cols["rh"] = np.clip(cols["rh"], 0.0, 100.0)
    series = MeteoSeries(ts_arr, *(cols[f] for f in METEO_FIELDS))

    # gaps: hours absent between the first and last timestamp seen in the file
    seen = np.sort(np.concatenate([ts_arr, np.array(flagged, dtype="datetime64[s]")]))
    report = GapReport(_gap_runs(ts_arr))
    if seen.size and ts_arr.size:
        lead = ts_arr[0] - seen[0]
        trail = seen[-1] - ts_arr[-1]
        if lead > np.timedelta64(0, "s"):
            report.runs.insert(0, GapRun(seen[0], ts_arr[0] - HOUR, int(lead // HOUR)))
        if trail > np.timedelta64(0, "s"):
            report.runs.append(GapRun(ts_arr[-1] + HOUR, seen[-1], int(trail // HOUR)))
    elif seen.size:
        report.runs.append(GapRun(seen[0], seen[-1], int((seen[-1] - seen[0]) // HOUR) + 1))
    return series, report


def write_meteo_csv(series: MeteoSeries, path: str | Path) -> Path:
    """Write records in the native layout; floats use repr so re-parsing is exact."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("timestamp",) + METEO_FIELDS)
        for i in range(len(series)):
            w.writerow([isoformat(series.timestamps[i])] + [repr(float(getattr(series, f)[i])) for f in METEO_FIELDS])
    return path


def read_meteo_csv(path: str | Path) -> MeteoSeries:
    return parse_power_csv(path)[0]


# -- fetching ----------------------------------------------------------------

Transport = Callable[[str, dict], tuple[int, bytes]]


def urllib_transport(url: str, params: dict, timeout: float = 120.0) -> tuple[int, bytes]:
    full = url + "?" + urllib.parse.urlencode(params)
    try:
        with urllib.request.urlopen(full, timeout=timeout) as resp:
            return resp.status, resp.read()
    except urllib.error.HTTPError as exc:
        return exc.code, exc.read() or b""
    except urllib.error.URLError as exc:
        raise FetchError(f"cannot reach {url}: {exc.reason}") from None


def default_cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV, Path.home() / ".cache" / "tlmn"))


def power_request(loc: GeoLocation, start: date, end: date, column_map: PowerColumnMap = PowerColumnMap()) -> dict:
    return {
        "parameters": ",".join(column_map.parameters),
        "community": "RE",
        "longitude": f"{loc.longitude:.4f}",
        "latitude": f"{loc.latitude:.4f}",
        "start": start.strftime("%Y%m%d"),
        "end": end.strftime("%Y%m%d"),
        "format": "CSV",
        "time-standard": "UTC",
    }


def cache_key(params: dict) -> str:
    blob = json.dumps(params, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:24]


_key_locks: dict[str, threading.Lock] = {}
_locks_guard = threading.Lock()


def _lock_for(key: str) -> threading.Lock:
    with _locks_guard:
        return _key_locks.setdefault(key, threading.Lock())


def _check_payload(body: bytes, start: date, end: date) -> None:
    try:
        text = body.decode("utf-8")
        header, rows, _ = _read_table(text, "<download>")
    except (UnicodeDecodeError, ParseError) as exc:
        raise IntegrityError(f"downloaded payload is not a POWER CSV: {exc}") from None
    if not set(TIME_COLUMNS) <= set(header):
        raise IntegrityError("downloaded payload lacks YEAR/MO/DY/HR columns")
    expected = ((end - start).days + 1) * 24
    if len(rows) < expected:
        raise IntegrityError(f"partial download: {len(rows)} of {expected} hourly rows")


def fetch_power(
    loc: GeoLocation,
    start: date,
    end: date,
    cache_dir: str | Path | None = None,
    column_map: PowerColumnMap = PowerColumnMap(),
    transport: Transport | None = None,
) -> Path:
    """Download hourly POWER data for ``start..end`` (inclusive) unless cached.

    The cache file name is a hash of the request parameters, so an identical
    request is served from disk with no network access.
    """
    if end < start:
        raise ConfigError("end date precedes start date")
    cache = Path(cache_dir) if cache_dir is not None else default_cache_dir()
    params = power_request(loc, start, end, column_map)
    key = cache_key(params)
    target = cache / f"power_{key}.csv"
    with _lock_for(key):
        if target.exists():
            log.debug("cache hit %s", target)
            return target
        send = transport or urllib_transport
        status, body = send(POWER_HOURLY_URL, params)
        if status != 200:
            raise FetchError(f"POWER request failed with HTTP {status}", status=status)
        _check_payload(body, start, end)
        cache.mkdir(parents=True, exist_ok=True)
        tmp = target.with_name(target.name + ".part")
        tmp.write_bytes(body)
        os.replace(tmp, target)
    return target


def fetch_power_years(
    loc: GeoLocation,
    first_year: int,
    last_year: int,
    cache_dir: str | Path | None = None,
    column_map: PowerColumnMap = PowerColumnMap(),
    transport: Transport | None = None,
) -> list[Path]:
    """One cached request per calendar year."""
    return [
        fetch_power(loc, date(y, 1, 1), date(y, 12, 31), cache_dir, column_map, transport)
        for y in range(first_year, last_year + 1)
    ]


def merge_series(parts: list[MeteoSeries]) -> MeteoSeries:
    ts = np.concatenate([p.timestamps for p in parts])
    order = np.argsort(ts, kind="stable")
    ts = ts[order]
    keep = np.concatenate([[True], np.diff(ts) > np.timedelta64(0, "s")])
    cols = [np.concatenate([getattr(p, f) for p in parts])[order][keep] for f in METEO_FIELDS]
    return MeteoSeries(ts[keep], *cols)


# -- synthetic weather -------------------------------------------------------

REGIMES = ("clear", "partly", "overcast")


@dataclass(frozen=True)
class SyntheticConfig:
    """Markov-switching transmissivity model on top of the clear-sky envelope.

    Regimes mirror the three clearness classes: clear, partly cloudy and
    overcast/dust. ``step_transients_per_year`` injects abrupt midday drops
    into the overcast level lasting ``step_hours``.
    """

    location: GeoLocation = OMDURMAN
    start_year: int = 2021
    n_years: int = 3
    seed: int = 0
    transition: tuple[tuple[float, ...], ...] = (
        (0.97, 0.025, 0.005),
        (0.06, 0.90, 0.04),
        (0.02, 0.06, 0.92),
    )
    regime_mean: tuple[float, float, float] = (0.95, 0.65, 0.30)
    regime_vol: tuple[float, float, float] = (0.02, 0.08, 0.06)
    ar_coeff: float = 0.8
    initial_regime: int = 0
    linke_turbidity: float = 3.5
    weather_noise: float = 1.0
    step_transients_per_year: int = 0
    step_hours: int = 3
    utc_offset_hours: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "transition", tuple(tuple(float(v) for v in row) for row in self.transition))
        p = np.array(self.transition)
        if p.shape != (3, 3) or np.any(p < 0) or not np.allclose(p.sum(axis=1), 1.0, atol=1e-12):
            raise ConfigError("transition matrix must be 3x3, non-negative, with rows summing to 1")
        if not all(0.05 <= m <= 1.1 for m in self.regime_mean):
            raise ConfigError("regime mean transmissivity must lie in [0.05, 1.1]")
        if any(v < 0 for v in self.regime_vol) or not 0 <= self.ar_coeff < 1:
            raise ConfigError("volatility must be non-negative and 0 <= ar_coeff < 1")
        if self.n_years < 1 or self.initial_regime not in (0, 1, 2):
            raise ConfigError("n_years must be >= 1 and initial_regime one of 0, 1, 2")


@dataclass
class SyntheticData:
    series: MeteoSeries
    tau: np.ndarray  # ground-truth transmissivity per hour
    regime: np.ndarray  # regime index per hour
    step_starts: np.ndarray  # timestamps of injected step transients


def synth_generate(cfg: SyntheticConfig = SyntheticConfig()) -> SyntheticData:
    rng = np.random.default_rng(cfg.seed)
    start = np.datetime64(f"{cfg.start_year:04d}-01-01T00:00:00", "s")
    stop = np.datetime64(f"{cfg.start_year + cfg.n_years:04d}-01-01T00:00:00", "s")
    ts = np.arange(start, stop, HOUR)
    n = ts.size
    loc = cfg.location
    clear = np.asarray(hourly_clear_sky(loc, ts, ClearSkyParams(cfg.linke_turbidity)))
    cos_z = np.asarray(hourly_solar_position(loc, ts).cos_zenith)

    # regime chain and AR(1) transmissivity
    cum = np.cumsum(np.array(cfg.transition), axis=1)
    u = rng.random(n)
    regime = np.empty(n, dtype=np.int64)
    r = cfg.initial_regime
    for i in range(n):
        if i:
            r = int(min(np.searchsorted(cum[r], u[i], side="right"), 2))
        regime[i] = r
    shocks = rng.standard_normal(n)
    vol = np.asarray(cfg.regime_vol)[regime] * np.sqrt(1.0 - cfg.ar_coeff**2)
    noise = np.empty(n)
    e = 0.0
    for i in range(n):
        e = cfg.ar_coeff * e + vol[i] * shocks[i]
        noise[i] = e
    tau = np.clip(np.asarray(cfg.regime_mean)[regime] + noise, 0.05, 1.1)

    local = ts + np.timedelta64(int(round(cfg.utc_offset_hours * 3600)), "s")
    cal = calendar_fields(local)
    step_starts = []
    if cfg.step_transients_per_year > 0:
        n_days = n // 24
        for y in range(cfg.n_years):
            days = rng.choice(np.arange(y * 365, min((y + 1) * 365, n_days)), cfg.step_transients_per_year, replace=False)
            for d in np.sort(days):
                hour = int(rng.integers(9, 15))
                i0 = int(d * 24 + hour - round(cfg.utc_offset_hours))
                i1 = min(i0 + cfg.step_hours, n)
                tau[i0:i1] = cfg.regime_mean[2]
                regime[i0:i1] = 2
                step_starts.append(ts[i0])

    ghi = tau * clear
    dhi_frac = np.clip(1.05 - tau, 0.1, 1.0)
    dhi = dhi_frac * ghi
    beam = ghi - dhi
    sunny = cos_z > 0.05
    dni = np.where(sunny, beam / np.where(sunny, cos_z, 1.0), 0.0)
    dhi = np.where(sunny, dhi, ghi)

    k = cfg.weather_noise
    season = 2 * np.pi * (cal["doy"] - 1) / 365.25
    diurnal = 2 * np.pi * (cal["seconds_of_day"] / 3600.0) / 24.0
    overcast = np.where(clear > 0, 1.0 - tau, 0.0)
    t2m = 30.0 - 5.0 * np.cos(season - 0.4) + 7.0 * np.sin(diurnal - 1.8) - 4.0 * overcast + k * 0.5 * rng.standard_normal(n)
    rh = np.clip(
        30.0 - 15.0 * np.cos(season - 4.0) - 10.0 * np.sin(diurnal - 1.8) + 20.0 * overcast + k * 2.0 * rng.standard_normal(n),
        1.0,
        100.0,
    )
    ws = np.abs(3.0 + 1.5 * np.sin(diurnal - 2.5) + 2.0 * overcast + k * 0.7 * rng.standard_normal(n))
    ps = 96.9 + 0.4 * np.cos(season) + 0.1 * np.sin(2 * diurnal) - 0.3 * overcast + k * 0.05 * rng.standard_normal(n)

    series = MeteoSeries(ts, ghi, dni, dhi, t2m, rh, ws, ps)
    return SyntheticData(series, tau, regime, np.array(step_starts, dtype="datetime64[s]"))
