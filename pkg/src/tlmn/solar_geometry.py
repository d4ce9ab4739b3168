"""Solar geometry and the Ineichen-Perez clear-sky model.

Declination and eccentricity follow the Spencer (1971) Fourier series when
only a day of year is available. :func:`solar_position` works from the full
timestamp and uses the NOAA/Meeus low-precision ephemeris (Julian centuries
since J2000), which keeps zenith errors around 0.01 deg from 1950 to 2100.

Every function accepts scalars or numpy arrays and broadcasts.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .timeutil import HOUR, calendar_fields, to_datetime64, unix_seconds

SOLAR_CONSTANT = 1361.0
DEFAULT_LINKE_TURBIDITY = 3.5
MAX_DECLINATION = 0.4095
NIGHT_AIR_MASS = np.inf


@dataclass(frozen=True)
class GeoLocation:
    latitude: float
    longitude: float
    altitude: float = 0.0

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise DomainError(f"latitude {self.latitude} outside [-90, 90]")
        if not -180.0 <= self.longitude <= 180.0:
            raise DomainError(f"longitude {self.longitude} outside [-180, 180]")
        if not self.altitude >= -430.0:
            raise DomainError(f"altitude {self.altitude} m below -430 m")


OMDURMAN = GeoLocation(15.65, 32.48, 380.0)


@dataclass(frozen=True)
class SolarPosition:
    declination: np.ndarray | float  # radians
    hour_angle: np.ndarray | float  # radians, negative before solar noon
    zenith: np.ndarray | float  # degrees
    cos_zenith: np.ndarray | float


@dataclass(frozen=True)
class ClearSkyParams:
    """Linke turbidity and solar constant for the clear-sky model.

    ``monthly_turbidity`` optionally holds a 12-entry climatology that takes
    precedence over the scalar ``linke_turbidity``.
    """

    linke_turbidity: float = DEFAULT_LINKE_TURBIDITY
    solar_constant: float = SOLAR_CONSTANT
    monthly_turbidity: tuple[float, ...] | None = None

    def __post_init__(self):
        if not 1.0 <= self.linke_turbidity <= 10.0:
            raise DomainError(f"Linke turbidity {self.linke_turbidity} outside [1, 10]")
        if not self.solar_constant > 0:
            raise DomainError("solar constant must be positive")
        if self.monthly_turbidity is not None:
            if len(self.monthly_turbidity) != 12:
                raise DomainError("monthly turbidity table needs 12 entries")
            if not all(1.0 <= tl <= 10.0 for tl in self.monthly_turbidity):
                raise DomainError("monthly turbidity entries must lie in [1, 10]")
            object.__setattr__(self, "monthly_turbidity", tuple(float(v) for v in self.monthly_turbidity))

    def turbidity_at(self, month) -> np.ndarray | float:
        if self.monthly_turbidity is None:
            return self.linke_turbidity
        return np.asarray(self.monthly_turbidity)[np.asarray(month) - 1]


def _check_day(day_of_year) -> np.ndarray:
    day = np.asarray(day_of_year)
    if day.dtype.kind not in "iu" and not np.all(np.mod(day, 1) == 0):
        raise DomainError("day of year must be an integer")
    if np.any((day < 1) | (day > 366)):
        raise DomainError(f"day of year outside [1, 366]: {day_of_year}")
    return day


def _day_angle(day_of_year) -> np.ndarray:
    return 2.0 * np.pi * (_check_day(day_of_year) - 1) / 365.0


def _scalar_or_array(x):
    return float(x) if np.ndim(x) == 0 else x


def solar_declination(day_of_year):
    """Solar declination in radians (Spencer 1971)."""
    g = _day_angle(day_of_year)
    dec = (
        0.006918
        - 0.399912 * np.cos(g)
        + 0.070257 * np.sin(g)
        - 0.006758 * np.cos(2 * g)
        + 0.000907 * np.sin(2 * g)
        - 0.002697 * np.cos(3 * g)
        + 0.00148 * np.sin(3 * g)
    )
    return _scalar_or_array(dec)


def eccentricity_correction(day_of_year):
    """Earth-sun distance correction factor (r0/r)^2 (Spencer 1971)."""
    g = _day_angle(day_of_year)
    e0 = (
        1.000110
        + 0.034221 * np.cos(g)
        + 0.001280 * np.sin(g)
        + 0.000719 * np.cos(2 * g)
        + 0.000077 * np.sin(2 * g)
    )
    return _scalar_or_array(e0)


def _ephemeris(t):
    """Declination (rad) and equation of time (minutes) from the NOAA/Meeus series."""
    jd = unix_seconds(t) / 86400.0 + 2440587.5
    c = (jd - 2451545.0) / 36525.0
    mean_long = np.mod(280.46646 + c * (36000.76983 + c * 0.0003032), 360.0)
    mean_anom = np.radians(357.52911 + c * (35999.05029 - 0.0001537 * c))
    ecc = 0.016708634 - c * (0.000042037 + 0.0000001267 * c)
    center = (
        np.sin(mean_anom) * (1.914602 - c * (0.004817 + 0.000014 * c))
        + np.sin(2 * mean_anom) * (0.019993 - 0.000101 * c)
        + np.sin(3 * mean_anom) * 0.000289
    )
    omega = np.radians(125.04 - 1934.136 * c)
    apparent_long = np.radians(mean_long + center - 0.00569 - 0.00478 * np.sin(omega))
    obliq = 23.0 + (26.0 + (21.448 - c * (46.815 + c * (0.00059 - c * 0.001813))) / 60.0) / 60.0
    obliq = np.radians(obliq + 0.00256 * np.cos(omega))
    declination = np.arcsin(np.sin(obliq) * np.sin(apparent_long))

    y = np.tan(obliq / 2) ** 2
    l0 = np.radians(mean_long)
    eot = 4.0 * np.degrees(
        y * np.sin(2 * l0)
        - 2 * ecc * np.sin(mean_anom)
        + 4 * ecc * y * np.sin(mean_anom) * np.cos(2 * l0)
        - 0.5 * y * y * np.sin(4 * l0)
        - 1.25 * ecc * ecc * np.sin(2 * mean_anom)
    )
    return declination, eot


def solar_position(loc: GeoLocation, t) -> SolarPosition:
    """Declination, hour angle and zenith for a location at UTC time(s) ``t``.

    The hour angle comes from true solar time: UTC clock time shifted by
    4 minutes per degree of longitude plus the equation of time. No
    refraction correction is applied.
    """
    t = to_datetime64(t)
    years = calendar_fields(t)["year"]
    if np.any((years < 1950) | (years > 2100)):
        raise DomainError("timestamps must fall within 1950-2100")
    declination, eot = _ephemeris(t)
    minutes = calendar_fields(t)["seconds_of_day"] / 60.0
    true_solar_minutes = minutes + 4.0 * loc.longitude + eot
    hour_angle = np.radians(true_solar_minutes / 4.0 - 180.0)
    hour_angle = np.mod(hour_angle + np.pi, 2 * np.pi) - np.pi

    lat = np.radians(loc.latitude)
    cos_z = np.sin(lat) * np.sin(declination) + np.cos(lat) * np.cos(declination) * np.cos(hour_angle)
    cos_z = np.clip(cos_z, -1.0, 1.0)
    zenith = np.degrees(np.arccos(cos_z))
    # recompute so cos_zenith and zenith agree to rounding
    cos_z = np.cos(np.radians(zenith))
    if t.ndim == 0:
        return SolarPosition(float(declination), float(hour_angle), float(zenith), float(cos_z))
    return SolarPosition(declination, hour_angle, zenith, cos_z)


def relative_air_mass(zenith):
    """Kasten-Young (1989) relative optical air mass; +inf once the sun is down."""
    z = np.asarray(zenith, dtype=float)
    if np.any((z < 0) | (z > 180)):
        raise DomainError("zenith must lie in [0, 180] degrees")
    day = z < 90.0
    zd = np.where(day, z, 0.0)
    am = 1.0 / (np.cos(np.radians(zd)) + 0.50572 * (96.07995 - zd) ** -1.6364)
    am = np.where(day, am, NIGHT_AIR_MASS)
    return _scalar_or_array(am)


def ineichen_perez_ghi(zenith, day_of_year, altitude, linke_turbidity, solar_constant=SOLAR_CONSTANT):
    """Ineichen-Perez global clear-sky irradiance (W/m2) from zenith in degrees.

    Returns exactly 0.0 wherever ``zenith >= 90``.
    """
    z = np.asarray(zenith, dtype=float)
    day = z < 90.0
    am = np.where(day, relative_air_mass(np.where(day, z, 0.0)), 1.0)
    alt = float(altitude)
    fh1 = np.exp(-alt / 8000.0)
    fh2 = np.exp(-alt / 1250.0)
    cg1 = 5.09e-5 * alt + 0.868
    cg2 = 3.92e-5 * alt + 0.0387
    tl = np.asarray(linke_turbidity, dtype=float)
    i0 = solar_constant * eccentricity_correction(day_of_year)
    cos_z = np.cos(np.radians(np.where(day, z, 0.0)))
    ghi = cg1 * i0 * cos_z * np.exp(-cg2 * am * (fh1 + fh2 * (tl - 1.0)))
    ghi = np.where(day, np.maximum(ghi, 0.0), 0.0)
    return _scalar_or_array(ghi)


def clear_sky_ghi(loc: GeoLocation, t, params: ClearSkyParams = ClearSkyParams()):
    """Instantaneous Ineichen-Perez clear-sky GHI (W/m2) at UTC time(s) ``t``."""
    t = to_datetime64(t)
    pos = solar_position(loc, t)
    cal = calendar_fields(t)
    ghi = ineichen_perez_ghi(
        pos.zenith, cal["doy"], loc.altitude, params.turbidity_at(cal["month"]), params.solar_constant
    )
    return _scalar_or_array(ghi)


def extraterrestrial_horizontal(loc: GeoLocation, t, solar_constant: float = SOLAR_CONSTANT):
    """Top-of-atmosphere irradiance on a horizontal plane (W/m2)."""
    t = to_datetime64(t)
    pos = solar_position(loc, t)
    e0 = eccentricity_correction(calendar_fields(t)["doy"])
    toa = np.where(np.asarray(pos.zenith) < 90.0, solar_constant * e0 * np.maximum(pos.cos_zenith, 0.0), 0.0)
    return _scalar_or_array(toa)


def hour_midpoints(hour_starts) -> np.ndarray:
    """Centre of each hourly interval labelled by its start time."""
    return to_datetime64(hour_starts) + HOUR // 2


def hourly_clear_sky(loc: GeoLocation, hour_starts, params: ClearSkyParams = ClearSkyParams()):
    """Hourly clear-sky energy (Wh/m2) for intervals labelled by their start.

    Taken equal to the instantaneous irradiance at the interval midpoint.
    """
    return clear_sky_ghi(loc, hour_midpoints(hour_starts), params)


def hourly_extraterrestrial(loc: GeoLocation, hour_starts, solar_constant: float = SOLAR_CONSTANT):
    return extraterrestrial_horizontal(loc, hour_midpoints(hour_starts), solar_constant)


def hourly_solar_position(loc: GeoLocation, hour_starts) -> SolarPosition:
    return solar_position(loc, hour_midpoints(hour_starts))
