"""Timestamp coercion helpers.

All timestamps inside the package are naive ``numpy.datetime64[s]`` values
interpreted as UTC.
"""
from __future__ import annotations

from datetime import datetime, timezone

import numpy as np

HOUR = np.timedelta64(3600, "s")


def to_datetime64(t) -> np.ndarray:
    """Coerce a datetime, string, datetime64 or array-like to datetime64[s] (UTC).

    Timezone-aware datetimes are converted to UTC; naive ones are taken as UTC.
    """
    if isinstance(t, datetime):
        if t.tzinfo is not None:
            t = t.astimezone(timezone.utc).replace(tzinfo=None)
        return np.datetime64(t, "s")
    if isinstance(t, (list, tuple)):
        return np.array([to_datetime64(x) for x in t], dtype="datetime64[s]")
    arr = np.asarray(t)
    if arr.dtype.kind == "M":
        return arr.astype("datetime64[s]")
    if arr.dtype.kind in "OU":
        if arr.ndim == 0:
            item = arr.item()
            if isinstance(item, datetime):
                return to_datetime64(item)
            return np.datetime64(str(item).rstrip("Z"), "s")
        return np.array([to_datetime64(x) for x in arr.ravel()], dtype="datetime64[s]").reshape(arr.shape)
    raise TypeError(f"cannot interpret {type(t).__name__} as a timestamp")


def unix_seconds(t) -> np.ndarray:
    return to_datetime64(t).astype(np.int64).astype(np.float64)


def calendar_fields(t) -> dict[str, np.ndarray]:
    """Break datetime64 values into year, month, day, day-of-year, hour, minute, second."""
    t = to_datetime64(t)
    years = t.astype("datetime64[Y]")
    months = t.astype("datetime64[M]")
    days = t.astype("datetime64[D]")
    secs = (t - days).astype(np.int64)
    return {
        "year": years.astype(np.int64) + 1970,
        "month": (months - years).astype(np.int64) + 1,
        "day": (days - months).astype(np.int64) + 1,
        "doy": (days - years).astype(np.int64) + 1,
        "days_in_month": ((months + 1).astype("datetime64[D]") - months.astype("datetime64[D]")).astype(np.int64),
        "hour": secs // 3600,
        "minute": (secs % 3600) // 60,
        "second": secs % 60,
        "seconds_of_day": secs,
    }


def day_of_year(t) -> np.ndarray:
    return calendar_fields(t)["doy"]


def isoformat(t: np.datetime64) -> str:
    return str(np.datetime64(t, "s")) + "Z"
