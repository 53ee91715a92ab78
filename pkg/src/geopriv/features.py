"""Daily feature vectors: location-function, address, academic, time and raw-GPS groups."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Iterable, Mapping, Optional, Sequence
from zoneinfo import ZoneInfo

import numpy as np

from .semantic import CATEGORIES, NOWHERE, Category, SemanticVisit

DAY_S = 86400
ATTENDANCE_THRESHOLD = 0.7
SKIP_LAGS = (0, 1, 2, 3, 7)
DEADLINE_LEADS = (1, 2, 3)

CATEGORY_PREFIX = {
    Category.HOME: "home",
    Category.SCHOOL: "school",
    Category.SHOP: "shopping",
    Category.WORKPLACE: "working",
    Category.RECREATION: "recreational_activities",
    Category.TRAVEL: "travel",
    Category.OTHERS: "others",
}


def _lf_names() -> list[str]:
    names = []
    for cat in CATEGORIES:
        p = CATEGORY_PREFIX[cat]
        names += [f"{p}_time", f"{p}_time_daytime", f"{p}_time_nighttime",
                  f"{p}_time_daytime_std", f"{p}_time_nighttime_std"]
    names += ["School_and_home_off_time", "home_time_day_vs_night", "school_time_day_vs_night"]
    return names


def _skip_name(k: int) -> str:
    if k == 0:
        return "skip_class"
    return f"{k}_day_after_skip_class" if k == 1 else f"{k}_days_after_skip_class"


LOCATION_FUNCTION = tuple(_lf_names())
ADDRESS = ("number_of_location_visited", "daily_repetition", "weekly_repetition")
ACADEMIC = (("class_schedule", "attendance_rate")
            + tuple(_skip_name(k) for k in SKIP_LAGS)
            + ("deadline",) + tuple(f"{k}_day_to_DL" for k in DEADLINE_LEADS))
TIME = ("week_date", "week")
RAW_GPS = tuple(f"{axis}_{stat}" for axis in ("lat", "lon")
                for stat in ("mean", "max", "min", "std", "iqr"))

ALL_SEMANTIC = LOCATION_FUNCTION + ADDRESS + ACADEMIC + TIME


class FeatureSet(str, Enum):
    AF = "AF"
    PA = "PA"
    LF = "LF"
    AO = "AO"
    LFAO = "LFAO"
    RAW = "RAW"

    @property
    def names(self) -> tuple[str, ...]:
        return FEATURE_SETS[self]


FEATURE_SETS = {
    FeatureSet.AF: ALL_SEMANTIC,
    FeatureSet.PA: LOCATION_FUNCTION + TIME,
    FeatureSet.LF: LOCATION_FUNCTION,
    FeatureSet.AO: ACADEMIC,
    FeatureSet.LFAO: LOCATION_FUNCTION + ACADEMIC,
    FeatureSet.RAW: RAW_GPS,
}


@dataclass
class DailyFeatureRow:
    user_id: str
    date: dt.date
    values: dict[str, float] = field(default_factory=dict)
    complete: dict[str, bool] = field(default_factory=lambda: {"semantic": False, "raw": False})


DAYTIME = (6, 18)


@lru_cache(maxsize=4096)
def day_bounds(day: dt.date, tz: str = "UTC",
               daytime: tuple[int, int] = DAYTIME) -> tuple[float, float, float, float]:
    """UTC seconds of local midnight, daytime start, daytime end and the next midnight."""
    zone = ZoneInfo(tz)
    if not 0 <= daytime[0] < daytime[1] <= 23:
        raise ValueError(f"bad daytime window {daytime}")

    def at(d, hour):
        return dt.datetime.combine(d, dt.time(hour), tzinfo=zone).timestamp()

    return at(day, 0), at(day, daytime[0]), at(day, daytime[1]), at(day + dt.timedelta(days=1), 0)


def local_date(ts: float, tz: str = "UTC") -> dt.date:
    return dt.datetime.fromtimestamp(ts, ZoneInfo(tz)).date()


def split_day_night(start: float, end: float, six: float, eighteen: float):
    """Cut [start, end) at 06:00 and 18:00. Returns (daytime_pieces, nighttime_pieces) as durations."""
    day, night = [], []
    cuts = sorted({start, end} | {c for c in (six, eighteen) if start < c < end})
    for a, b in zip(cuts, cuts[1:]):
        (day if six <= a < eighteen else night).append(b - a)
    return day, night


def _std(durations: Sequence[float]) -> float:
    return float(np.std(durations)) if len(durations) >= 2 else 0.0


def location_function_features(visits: Sequence[SemanticVisit], day: dt.date,
                               tz: str = "UTC", daytime: tuple[int, int] = DAYTIME) -> dict[str, float]:
    """The 38 location-function features of one user-day.

    Time before local midnight is dropped; time after the next midnight (at most
    one trailing dwell) is kept and counts as nighttime.
    """
    d0, six, eighteen, _ = day_bounds(day, tz, tuple(daytime))
    day_pieces = {c: [] for c in CATEGORIES}
    night_pieces = {c: [] for c in CATEGORIES}
    for v in visits:
        start = max(v.start, d0)
        if v.end <= start:
            continue
        dp, np_ = split_day_night(start, v.end, six, eighteen)
        day_pieces[v.category] += dp
        night_pieces[v.category] += np_

    out: dict[str, float] = {}
    totals = {}
    for c in CATEGORIES:
        p = CATEGORY_PREFIX[c]
        d_tot = float(sum(day_pieces[c]))
        n_tot = float(sum(night_pieces[c]))
        totals[c] = d_tot + n_tot
        out[f"{p}_time"] = totals[c]
        out[f"{p}_time_daytime"] = d_tot
        out[f"{p}_time_nighttime"] = n_tot
        out[f"{p}_time_daytime_std"] = _std(day_pieces[c])
        out[f"{p}_time_nighttime_std"] = _std(night_pieces[c])
    out["School_and_home_off_time"] = float(sum(
        totals[c] for c in CATEGORIES if c not in (Category.HOME, Category.SCHOOL)))
    out["home_time_day_vs_night"] = out["home_time_daytime"] - out["home_time_nighttime"]
    out["school_time_day_vs_night"] = out["school_time_daytime"] - out["school_time_nighttime"]
    return out


def _revisits(visits: Iterable[SemanticVisit]) -> tuple[int, int]:
    # "@nowhere" is the absence of a place, not an address
    idents = [v.address_identity for v in visits if v.address_identity != NOWHERE]
    return len(idents), len(set(idents))


def address_features(visits: Sequence[SemanticVisit],
                     week_context: Sequence[SemanticVisit]) -> dict[str, float]:
    n_day, distinct_day = _revisits(visits)
    n_week, distinct_week = _revisits(week_context)
    return {
        "number_of_location_visited": float(distinct_day),
        "daily_repetition": float(n_day - distinct_day),
        "weekly_repetition": float(n_week - distinct_week),
    }


def _union(intervals: Iterable[tuple[float, float]]) -> list[tuple[float, float]]:
    merged: list[list[float]] = []
    for a, b in sorted(i for i in intervals if i[1] > i[0]):
        if merged and a <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    return [(a, b) for a, b in merged]


def _measure(intervals) -> float:
    return float(sum(b - a for a, b in intervals))


def _overlap(xs, ys) -> float:
    total, i, j = 0.0, 0, 0
    while i < len(xs) and j < len(ys):
        lo, hi = max(xs[i][0], ys[j][0]), min(xs[i][1], ys[j][1])
        if hi > lo:
            total += hi - lo
        if xs[i][1] < ys[j][1]:
            i += 1
        else:
            j += 1
    return total


def attendance(visits: Sequence[SemanticVisit],
               class_intervals: Sequence[tuple[float, float]]) -> tuple[float, float]:
    """(scheduled seconds, attendance rate). Rate is 1.0 when nothing is scheduled."""
    classes = _union(class_intervals)
    scheduled = _measure(classes)
    if scheduled == 0:
        return 0.0, 1.0
    school = _union((v.start, v.end) for v in visits if v.category == Category.SCHOOL)
    return scheduled, _overlap(classes, school) / scheduled


def academic_features(day: dt.date, visits: Sequence[SemanticVisit],
                      class_intervals: Sequence[tuple[float, float]],
                      deadlines: Mapping[dt.date, int],
                      absence_history: Mapping[dt.date, bool]) -> dict[str, float]:
    """``absence_history`` maps earlier class days to whether the class was skipped."""
    scheduled, rate = attendance(visits, class_intervals)
    out = {"class_schedule": scheduled, "attendance_rate": rate}
    for k in SKIP_LAGS:
        if k == 0:
            skipped = scheduled > 0 and rate < ATTENDANCE_THRESHOLD
        else:
            skipped = bool(absence_history.get(day - dt.timedelta(days=k), False))
        out[_skip_name(k)] = float(skipped)
    out["deadline"] = float(deadlines.get(day, 0))
    for k in DEADLINE_LEADS:
        out[f"{k}_day_to_DL"] = float(deadlines.get(day + dt.timedelta(days=k), 0))
    return out


def time_features(day: dt.date, term_start: dt.date,
                  origin_week: Optional[int] = None) -> dict[str, float]:
    """``origin_week`` defaults to the ISO week number of ``term_start``."""
    if day < term_start:
        raise ValueError(f"{day} is before term start {term_start}")
    if origin_week is None:
        origin_week = term_start.isocalendar()[1]
    return {
        "week_date": float(day.isoweekday()),
        "week": float((day - term_start).days // 7 + origin_week),
    }


def raw_gps_features(lats: Sequence[float], lons: Sequence[float]) -> Optional[dict[str, float]]:
    """Summary statistics of one day's coordinates; None when there are no fixes."""
    if len(lats) == 0:
        return None
    out = {}
    for axis, vals in (("lat", np.asarray(lats, float)), ("lon", np.asarray(lons, float))):
        q1, q3 = np.percentile(vals, [25, 75])
        out[f"{axis}_mean"] = float(vals.mean())
        out[f"{axis}_max"] = float(vals.max())
        out[f"{axis}_min"] = float(vals.min())
        out[f"{axis}_std"] = float(vals.std())
        out[f"{axis}_iqr"] = float(q3 - q1)
    return out


def select_features(row: DailyFeatureRow, feature_set) -> np.ndarray:
    names = FeatureSet(feature_set).names
    missing = [n for n in names if n not in row.values]
    if missing:
        raise KeyError(f"row {row.user_id}/{row.date} lacks feature(s): {', '.join(missing)}")
    return np.array([row.values[n] for n in names], dtype=float)
