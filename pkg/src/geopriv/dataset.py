"""Raw bundles (CSV streams), labelled daily datasets and synthetic cohorts."""

from __future__ import annotations

import datetime as dt
import io
import json
import logging
import math
import os
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from . import features as fx
from .features import DailyFeatureRow, FeatureSet
from .geo import DEFAULT_RADIUS_M, GpsFix, MapIndex
from .labeling import LEVEL_OF_RAW, DailyLabel, daily_label
from .semantic import (DEFAULT_GAP_CAP_S, NOMINAL_INTERVAL_S, CategoryMap, Category,
                       SemanticVisit, fixes_to_visits)

logger = logging.getLogger(__name__)

BUNDLE_FILES = {
    "gps": ("gps.csv", ["user_id", "timestamp", "lat", "lon"]),
    "enrollment": ("enrollment.csv", ["user_id", "class_id"]),
    "class_info": ("class_info.csv", ["class_id", "weekday", "start", "end", "location_hint"]),
    "deadlines": ("deadlines.csv", ["user_id", "date", "count"]),
    "ema": ("ema.csv", ["user_id", "timestamp", "raw_code"]),
}
META_FILE = "meta.json"
MAP_FILE = "map.osm"


@dataclass
class RawBundle:
    gps: pd.DataFrame
    enrollment: pd.DataFrame
    class_info: pd.DataFrame
    deadlines: pd.DataFrame
    ema: pd.DataFrame
    term_start: dt.date
    timezone: str = "UTC"
    osm: Optional[str] = None
    skipped: Counter = field(default_factory=Counter)

    @property
    def users(self) -> list[str]:
        return sorted(set(self.gps["user_id"]) | set(self.ema["user_id"]))

    def user_days(self) -> set[tuple[str, dt.date]]:
        """(user, local date) pairs that have at least one GPS fix."""
        if self.gps.empty:
            return set()
        dates = _local_dates(self.gps["timestamp"], self.timezone)
        return set(zip(self.gps["user_id"], dates))


def _local_dates(ts: pd.Series, tz: str) -> list[dt.date]:
    stamps = pd.to_datetime(ts.astype("int64") if ts.dtype.kind == "i" else ts, unit="s", utc=True)
    return list(stamps.dt.tz_convert(tz).dt.date)


def _clock(s: str) -> int:
    hh, mm = str(s).strip().split(":")[:2]
    minutes = int(hh) * 60 + int(mm)
    if not 0 <= minutes <= 24 * 60:
        raise ValueError(s)
    return minutes


def _validate(kind: str, df: pd.DataFrame, skipped: Counter) -> pd.DataFrame:
    n0 = len(df)
    if kind == "gps":
        for c in ("timestamp", "lat", "lon"):
            df[c] = pd.to_numeric(df[c], errors="coerce")
        ok = df[["timestamp", "lat", "lon"]].notna().all(axis=1)
        ok &= df["lat"].between(-90, 90) & df["lon"].between(-180, 180)
    elif kind == "ema":
        df["timestamp"] = pd.to_numeric(df["timestamp"], errors="coerce")
        df["raw_code"] = pd.to_numeric(df["raw_code"], errors="coerce")
        ok = df["timestamp"].notna() & df["raw_code"].isin(list(LEVEL_OF_RAW))
    elif kind == "deadlines":
        df["count"] = pd.to_numeric(df["count"], errors="coerce")
        dates = pd.to_datetime(df["date"], errors="coerce", format="%Y-%m-%d")
        ok = df["count"].notna() & (df["count"] >= 0) & dates.notna()
    elif kind == "class_info":
        df["weekday"] = pd.to_numeric(df["weekday"], errors="coerce")

        def clock_ok(v):
            try:
                _clock(v)
                return True
            except (ValueError, AttributeError):
                return False

        ok = df["weekday"].between(1, 7) & df["start"].map(clock_ok) & df["end"].map(clock_ok)
    else:
        ok = df.notna().all(axis=1)
    ok &= df["user_id"].notna() if "user_id" in df else True
    bad = int((~ok).sum())
    if bad:
        skipped[kind] += bad
        logger.warning("%s: skipped %d of %d malformed rows", kind, bad, n0)
    df = df[ok].reset_index(drop=True)
    if kind == "gps":
        df = df.sort_values(["user_id", "timestamp"], kind="stable").reset_index(drop=True)
    if kind == "ema":
        df["raw_code"] = df["raw_code"].astype(int)
    if kind == "deadlines":
        df["count"] = df["count"].astype(int)
    if kind == "class_info":
        df["weekday"] = df["weekday"].astype(int)
    return df


def load_bundle(directory: str) -> RawBundle:
    """Read the five stream CSVs plus ``meta.json`` (and ``map.osm`` when present)."""
    frames = {}
    skipped: Counter = Counter()
    meta_path = os.path.join(directory, META_FILE)
    if not os.path.exists(meta_path):
        raise FileNotFoundError(f"bundle is missing {META_FILE} in {directory}")
    for kind, (fname, cols) in BUNDLE_FILES.items():
        path = os.path.join(directory, fname)
        if not os.path.exists(path):
            raise FileNotFoundError(f"bundle is missing {fname} in {directory}")
        if os.path.getsize(path) == 0:
            df = pd.DataFrame(columns=cols)
        else:
            df = pd.read_csv(path, dtype=str, keep_default_na=False, na_values=[""])
            lacking = [c for c in cols if c not in df.columns]
            if lacking:
                raise ValueError(f"{fname}: missing column(s) {lacking}")
            df = df[cols]
        frames[kind] = _validate(kind, df, skipped)
        if frames[kind].empty:
            logger.warning("%s has no usable rows", fname)
        logger.info("%s: %d rows", fname, len(frames[kind]))
    with open(meta_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    osm = None
    map_path = os.path.join(directory, MAP_FILE)
    if os.path.exists(map_path):
        with open(map_path, encoding="utf-8") as fh:
            osm = fh.read()
    bundle = RawBundle(term_start=dt.date.fromisoformat(meta["term_start"]),
                       timezone=meta.get("timezone", "UTC"), osm=osm, skipped=skipped, **frames)
    _check_roster(bundle)
    return bundle


def _check_roster(bundle: RawBundle) -> None:
    roster = set(bundle.users)
    for kind in ("enrollment", "deadlines"):
        df = getattr(bundle, kind)
        ok = df["user_id"].isin(roster)
        if not ok.all():
            bundle.skipped[kind] += int((~ok).sum())
            setattr(bundle, kind, df[ok].reset_index(drop=True))


def save_bundle(bundle: RawBundle, directory: str) -> list[str]:
    os.makedirs(directory, exist_ok=True)
    written = []
    for kind, (fname, cols) in BUNDLE_FILES.items():
        path = os.path.join(directory, fname)
        getattr(bundle, kind)[cols].to_csv(path, index=False, lineterminator="\n")
        written.append(path)
    meta = {"term_start": bundle.term_start.isoformat(), "timezone": bundle.timezone}
    path = os.path.join(directory, META_FILE)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(path)
    if bundle.osm is not None:
        path = os.path.join(directory, MAP_FILE)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(bundle.osm)
        written.append(path)
    return written


def load_studentlife(root: str, term_start: dt.date = dt.date(2013, 3, 25),
                     timezone: str = "America/New_York") -> RawBundle:
    """Normalise a local copy of the StudentLife release into a RawBundle.

    Expected layout (as distributed)::

        sensing/gps/gps_<uid>.csv          time, ..., latitude, longitude, ...
        EMA/response/Stress/Stress_<uid>.json   [{"level": "2", "resp_time": 1364...}, ...]
        education/class.csv                <uid>,<class>,<class>,...   (no header)
        education/class_info.json          {class: {"location": ..., "periods": [{"day":..,"start":..,"end":..}]}}
        education/deadlines.csv            uid,<yyyy-mm-dd>,<yyyy-mm-dd>,...
    """
    gps_rows = []
    gps_dir = os.path.join(root, "sensing", "gps")
    for fname in sorted(os.listdir(gps_dir)):
        if not fname.startswith("gps_") or not fname.endswith(".csv"):
            continue
        uid = fname[len("gps_"):-len(".csv")]
        df = pd.read_csv(os.path.join(gps_dir, fname), index_col=False)
        gps_rows.append(pd.DataFrame({"user_id": uid, "timestamp": df["time"],
                                      "lat": df["latitude"], "lon": df["longitude"]}))
    gps = pd.concat(gps_rows, ignore_index=True) if gps_rows else pd.DataFrame(
        columns=BUNDLE_FILES["gps"][1])

    ema_rows = []
    ema_dir = os.path.join(root, "EMA", "response", "Stress")
    if os.path.isdir(ema_dir):
        for fname in sorted(os.listdir(ema_dir)):
            if not fname.endswith(".json"):
                continue
            uid = fname.rsplit("_", 1)[-1][:-len(".json")]
            with open(os.path.join(ema_dir, fname), encoding="utf-8") as fh:
                for rec in json.load(fh):
                    if "level" in rec and "resp_time" in rec:
                        ema_rows.append((uid, rec["resp_time"], rec["level"]))
    ema = pd.DataFrame(ema_rows, columns=BUNDLE_FILES["ema"][1])

    edu = os.path.join(root, "education")
    enroll_rows = []
    class_path = os.path.join(edu, "class.csv")
    if os.path.exists(class_path):
        with open(class_path, encoding="utf-8") as fh:
            for line in fh:
                parts = [p.strip() for p in line.strip().split(",") if p.strip()]
                if len(parts) >= 2:
                    enroll_rows += [(parts[0], c) for c in parts[1:]]
    enrollment = pd.DataFrame(enroll_rows, columns=BUNDLE_FILES["enrollment"][1])

    info_rows = []
    info_path = os.path.join(edu, "class_info.json")
    if os.path.exists(info_path):
        with open(info_path, encoding="utf-8") as fh:
            info = json.load(fh)
        for cid, rec in sorted(info.items()):
            for p in rec.get("periods", []):
                info_rows.append((cid, p.get("day"), p.get("start"), p.get("end"),
                                  rec.get("location", "")))
    class_info = pd.DataFrame(info_rows, columns=BUNDLE_FILES["class_info"][1])

    dl_path = os.path.join(edu, "deadlines.csv")
    if os.path.exists(dl_path):
        wide = pd.read_csv(dl_path)
        deadlines = wide.melt(id_vars=wide.columns[0], var_name="date", value_name="count")
        deadlines.columns = ["user_id", "date", "count"]
        deadlines = deadlines[deadlines["count"].fillna(0) > 0]
    else:
        deadlines = pd.DataFrame(columns=BUNDLE_FILES["deadlines"][1])

    skipped: Counter = Counter()
    frames = {k: _validate(k, df.astype(str) if k != "gps" else df, skipped)
              for k, df in (("gps", gps), ("enrollment", enrollment), ("class_info", class_info),
                            ("deadlines", deadlines), ("ema", ema))}
    bundle = RawBundle(term_start=term_start, timezone=timezone, skipped=skipped, **frames)
    _check_roster(bundle)
    return bundle


# ---------------------------------------------------------------------------
# dataset construction


@dataclass
class BuildConfig:
    radius_m: float = DEFAULT_RADIUS_M
    gap_cap_s: float = DEFAULT_GAP_CAP_S
    interval_s: float = NOMINAL_INTERVAL_S
    origin_week: Optional[int] = None
    daytime: tuple[int, int] = fx.DAYTIME


@dataclass
class LabeledDataset:
    rows: list[DailyFeatureRow]
    labels: list[DailyLabel]

    def __len__(self):
        return len(self.rows)

    @property
    def users(self) -> np.ndarray:
        return np.array([r.user_id for r in self.rows])

    @property
    def y(self) -> np.ndarray:
        return np.array([lab.binary for lab in self.labels], dtype=int)

    def day_counts(self) -> dict[str, int]:
        return dict(sorted(Counter(r.user_id for r in self.rows).items()))

    def matrix(self, feature_set, require_complete: bool = True):
        """(X, y, users, row_ids) for one feature set.

        RAW drops rows without GPS statistics; semantic sets drop rows flagged
        incomplete when ``require_complete``.
        """
        fs = FeatureSet(feature_set)
        flag = "raw" if fs is FeatureSet.RAW else "semantic"
        keep = [i for i, r in enumerate(self.rows) if r.complete.get(flag) or not require_complete]
        X = np.array([fx.select_features(self.rows[i], fs) for i in keep], dtype=float).reshape(
            len(keep), len(fs.names))
        return X, self.y[keep], self.users[keep], np.array(keep, dtype=int)

    # serialisation

    def to_frame(self) -> pd.DataFrame:
        names = list(fx.ALL_SEMANTIC) + list(fx.RAW_GPS)
        recs = []
        for r, lab in zip(self.rows, self.labels):
            rec = {"user_id": r.user_id, "date": r.date.isoformat()}
            rec.update({n: r.values.get(n, np.nan) for n in names})
            rec["semantic_complete"] = int(bool(r.complete.get("semantic")))
            rec["raw_complete"] = int(bool(r.complete.get("raw")))
            rec["level"] = lab.ordered_level
            rec["label"] = lab.binary
            recs.append(rec)
        cols = ["user_id", "date"] + names + ["semantic_complete", "raw_complete", "level", "label"]
        return pd.DataFrame(recs, columns=cols)

    def to_csv(self, path: str) -> None:
        self.to_frame().to_csv(path, index=False, lineterminator="\n")

    def to_jsonl(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for r, lab in zip(self.rows, self.labels):
                fh.write(json.dumps({
                    "user_id": r.user_id, "date": r.date.isoformat(), "values": r.values,
                    "complete": r.complete,
                    "label": {"ordered_level": lab.ordered_level, "binary": lab.binary},
                }, sort_keys=True) + "\n")

    @classmethod
    def from_csv(cls, path: str) -> "LabeledDataset":
        df = pd.read_csv(path, dtype={"user_id": str}, float_precision="round_trip")
        names = [c for c in df.columns if c in set(fx.ALL_SEMANTIC) | set(fx.RAW_GPS)]
        rows, labels = [], []
        for rec in df.to_dict("records"):
            day = dt.date.fromisoformat(rec["date"])
            values = {n: float(rec[n]) for n in names if not pd.isna(rec[n])}
            complete = {"semantic": bool(rec["semantic_complete"]), "raw": bool(rec["raw_complete"])}
            rows.append(DailyFeatureRow(rec["user_id"], day, values, complete))
            labels.append(DailyLabel(rec["user_id"], day, float(rec["level"]), int(rec["label"])))
        return cls(rows, labels)


def _class_intervals(bundle: RawBundle) -> dict[str, dict[int, list[tuple[int, int]]]]:
    """user -> ISO weekday -> [(start_minute, end_minute)]."""
    meetings: dict[str, list] = defaultdict(list)
    for rec in bundle.class_info.itertuples(index=False):
        meetings[str(rec.class_id)].append((int(rec.weekday), _clock(rec.start), _clock(rec.end)))
    out: dict[str, dict[int, list]] = defaultdict(lambda: defaultdict(list))
    for rec in bundle.enrollment.itertuples(index=False):
        for wd, a, b in meetings.get(str(rec.class_id), []):
            out[str(rec.user_id)][wd].append((a, b))
    return out


def _day_class_intervals(day: dt.date, by_weekday, tz: str) -> list[tuple[float, float]]:
    d0 = fx.day_bounds(day, tz)[0]
    return [(d0 + 60.0 * a, d0 + 60.0 * b) for a, b in by_weekday.get(day.isoweekday(), [])]


def build_dataset(bundle: RawBundle, index: MapIndex, cmap: CategoryMap,
                  config: Optional[BuildConfig] = None) -> LabeledDataset:
    """One row per user-day with at least one GPS fix and at least one EMA response."""
    config = config or BuildConfig()
    tz = bundle.timezone

    labels: dict[tuple[str, dt.date], DailyLabel] = {}
    if bundle.ema.empty:
        logger.warning("bundle has no EMA responses; dataset will be empty")
    else:
        ema = bundle.ema.assign(date=_local_dates(bundle.ema["timestamp"], tz))
        for (uid, day), grp in ema.groupby(["user_id", "date"], sort=True):
            lab = daily_label(str(uid), day, grp["raw_code"].tolist())
            if lab is not None:
                labels[(str(uid), day)] = lab

    deadlines: dict[str, dict[dt.date, int]] = defaultdict(lambda: defaultdict(int))
    for rec in bundle.deadlines.itertuples(index=False):
        deadlines[str(rec.user_id)][dt.date.fromisoformat(str(rec.date))] += int(rec.count)
    classes = _class_intervals(bundle)

    gps = bundle.gps
    rows: list[DailyFeatureRow] = []
    out_labels: list[DailyLabel] = []
    if gps.empty:
        return LabeledDataset(rows, out_labels)
    gps = gps.assign(date=_local_dates(gps["timestamp"], tz))
    for uid, ugrp in gps.groupby("user_id", sort=True):
        uid = str(uid)
        visits_by_day: dict[dt.date, list[SemanticVisit]] = {}
        coords_by_day: dict[dt.date, tuple[np.ndarray, np.ndarray]] = {}
        for day, dgrp in ugrp.groupby("date", sort=True):
            fixes = [GpsFix(uid, float(t), float(a), float(o))
                     for t, a, o in zip(dgrp["timestamp"], dgrp["lat"], dgrp["lon"])]
            visits_by_day[day] = fixes_to_visits(fixes, index, cmap, config.gap_cap_s,
                                                 config.interval_s, config.radius_m)
            coords_by_day[day] = (dgrp["lat"].to_numpy(float), dgrp["lon"].to_numpy(float))

        user_classes = classes.get(uid, {})
        skipped_on: dict[dt.date, bool] = {}
        for day, visits in visits_by_day.items():
            sched, rate = fx.attendance(visits, _day_class_intervals(day, user_classes, tz))
            if sched > 0:
                skipped_on[day] = rate < fx.ATTENDANCE_THRESHOLD

        # week-to-date context: the ISO week up to and including the row's day
        week_so_far: dict[dt.date, list[SemanticVisit]] = {}
        running: dict[tuple[int, int], list[SemanticVisit]] = defaultdict(list)
        for day in sorted(visits_by_day):
            running[day.isocalendar()[:2]].extend(visits_by_day[day])
            week_so_far[day] = list(running[day.isocalendar()[:2]])

        for day in sorted(visits_by_day):
            lab = labels.get((uid, day))
            if lab is None:
                continue
            if day < bundle.term_start:
                logger.debug("skipping %s/%s before term start", uid, day)
                continue
            visits = visits_by_day[day]
            values: dict[str, float] = {}
            values.update(fx.location_function_features(visits, day, tz, tuple(config.daytime)))
            values.update(fx.address_features(visits, week_so_far[day]))
            values.update(fx.academic_features(day, visits,
                                               _day_class_intervals(day, user_classes, tz),
                                               deadlines.get(uid, {}), skipped_on))
            values.update(fx.time_features(day, bundle.term_start, config.origin_week))
            raw = fx.raw_gps_features(*coords_by_day[day])
            if raw is not None:
                values.update(raw)
            rows.append(DailyFeatureRow(uid, day, values,
                                        {"semantic": bool(visits), "raw": raw is not None}))
            out_labels.append(lab)
    return LabeledDataset(rows, out_labels)


# ---------------------------------------------------------------------------
# synthetic cohorts


@dataclass
class CohortSpec:
    n_users: int = 30
    n_weeks: int = 9
    stressed_fraction: float = 0.5  # share of the stress-prone archetype
    center_lat: float = 43.7044
    center_lon: float = -72.2887
    extent_km: float = 4.0
    term_start: dt.date = dt.date(2013, 3, 25)
    ema_rate: float = 0.6  # chance that a day carries any EMA response
    missing_rate: float = 0.05  # chance that a scheduled fix is lost
    dead_day_rate: float = 0.12  # chance that the phone logs nothing all day
    outage_rate: float = 0.35  # chance of one 2-8 h logging gap in a day
    multipath_rate: float = 0.1  # share of fixes with ~60 m instead of ~12 m error
    timezone: str = "UTC"


# latent daily stress: s = base + exam + deadlines + noise; P(stressed) = sigmoid(LABEL_SLOPE * s)
ARCHETYPE_BASE = {"calm": -0.9, "stress_prone": 0.9}
BASE_SPREAD = 0.3
DAILY_NOISE = 1.0
EXAM_BUMP = 0.6
DEADLINE_BUMP = 0.25
LABEL_SLOPE = 1.5
EXAM_WEEKS = (4, 8)  # 0-based weeks of term

HOME_TYPES = ("dormitory", "house", "apartments", "residential")
SCHOOL_TYPES = ("university",)  # a single campus
SHOP_TYPES = ("cafe", "supermarket", "restaurant", "bakery", "books", "clothes", "convenience",
              "bank", "bar", "fast_food", "gift", "florist")
WORK_TYPES = ("office", "post_office", "estate_agent", "insurance", "townhall", "construction",
              "hairdresser", "telecommunication")
RECREATION_TYPES = ("sports_centre", "park", "pitch", "museum", "theatre", "pub", "arts_centre",
                    "golf_course", "artwork", "outdoor_seating")
TRAVEL_TYPES = ("bus_stop", "parking", "bicycle_parking", "railway_station", "bus_station")
OTHER_TYPES = ("place_of_worship", "church", "toilets", "shelter", "fuel", "post_box")

# tag key used when writing each type to OSM; must be one the parser recognises
_TAG_KEY = {
    "dormitory": "building", "house": "building", "apartments": "building", "residential": "building",
    "university": "amenity", "library": "amenity", "college": "amenity",
    "office": "office", "post_office": "amenity", "estate_agent": "office", "insurance": "office",
    "townhall": "amenity", "construction": "building", "hairdresser": "shop",
    "telecommunication": "office",
    "sports_centre": "leisure", "park": "leisure", "pitch": "leisure", "museum": "tourism",
    "theatre": "amenity", "pub": "amenity", "arts_centre": "amenity", "golf_course": "leisure",
    "artwork": "tourism", "outdoor_seating": "leisure",
    "bus_stop": "highway", "parking": "amenity", "bicycle_parking": "amenity",
    "railway_station": "building", "bus_station": "amenity",
    "place_of_worship": "amenity", "church": "building", "toilets": "amenity", "shelter": "amenity",
    "fuel": "amenity", "post_box": "amenity",
}
_SHOP_AMENITIES = {"cafe", "restaurant", "bank", "bar", "fast_food"}


def _class_catalog(n: int = 48) -> tuple:
    """Fixed course catalogue: (class_id, weekdays, start, minutes).

    Meeting lengths are all different, as with lab and studio sections, so
    that a student's per-weekday class total is rarely shared.
    """
    rng = np.random.default_rng(20130325)  # fixed: the catalogue is not part of the cohort seed
    patterns = ((1, 3, 5), (2, 4), (1, 3), (3, 5), (1, 4), (2, 5), (1,), (2,), (3,), (4,), (5,),
                (1, 2, 4), (6,))
    lengths = rng.permutation(np.arange(45, 45 + 4 * n, 4))[:n]
    out = []
    for i in range(n):
        wds = patterns[int(rng.integers(len(patterns)))]
        minutes = int(lengths[i]) // len(wds) + 30
        start = int(rng.integers(8 * 4, 17 * 4)) * 15
        out.append((f"C{i + 1:03d}", wds, f"{start // 60:02d}:{start % 60:02d}", minutes))
    return tuple(out)


CLASS_CATALOG = _class_catalog()


def _sigmoid(z):
    return 1.0 / (1.0 + math.exp(-z))


def archetype_label_rate(archetype: str, exam_share: float = 2 / 9, mean_deadlines: float = 0.0,
                         n_draws: int = 200_000, seed: int = 0) -> float:
    """Monte-Carlo expectation of the daily stress label rate for one archetype."""
    rng = np.random.default_rng(seed)
    s = (ARCHETYPE_BASE[archetype] + BASE_SPREAD * rng.standard_normal(n_draws)
         + EXAM_BUMP * (rng.random(n_draws) < exam_share) + DEADLINE_BUMP * mean_deadlines
         + DAILY_NOISE * rng.standard_normal(n_draws))
    return float(np.mean(1.0 / (1.0 + np.exp(-LABEL_SLOPE * s))))


class _MapBuilder:
    """Places features on a jittered ~220 m lattice so that no two share a 75 m circle."""

    def __init__(self, spec: CohortSpec, rng: np.random.Generator):
        self.spec, self.rng = spec, rng
        step_km = 0.22
        n = int(spec.extent_km / step_km)
        self.slots = [(i, j) for i in range(n) for j in range(n)]
        order = rng.permutation(len(self.slots))
        self.slots = [self.slots[k] for k in order]
        self.n, self.step_km = n, step_km
        self.features: list[dict] = []
        self.next_id = 1000

    def _slot_coords(self, slot, jitter=True):
        i, j = slot
        dy = (i - self.n / 2) * self.step_km + (self.rng.uniform(-0.03, 0.03) if jitter else 0)
        dx = (j - self.n / 2) * self.step_km + (self.rng.uniform(-0.03, 0.03) if jitter else 0)
        lat = self.spec.center_lat + dy / 111.195
        lon = self.spec.center_lon + dx / (111.195 * math.cos(math.radians(self.spec.center_lat)))
        return round(lat, 7), round(lon, 7)

    def add(self, ltype: str, number: Optional[str] = None, as_way: bool = False) -> dict:
        if not self.slots:
            raise ValueError("synthetic map is full; increase extent_km")
        lat, lon = self._slot_coords(self.slots.pop())
        self.next_id += 1
        f = {"id": self.next_id, "type": ltype, "number": number, "lat": lat, "lon": lon,
             "way": as_way}
        self.features.append(f)
        return f

    def to_osm(self) -> str:
        out = io.StringIO()
        out.write('<?xml version="1.0" encoding="UTF-8"?>\n<osm version="0.6" generator="geopriv-synth">\n')
        ways = []
        nid = 1
        for f in self.features:
            key = _TAG_KEY.get(f["type"], "amenity")
            if key == "shop" or f["type"] in _SHOP_AMENITIES:
                key = "amenity" if f["type"] in _SHOP_AMENITIES else "shop"
            if f["type"] in SHOP_TYPES and f["type"] not in _SHOP_AMENITIES:
                key = "shop"
            tags = [(key, f["type"])]
            if f["number"]:
                tags.append(("addr:housenumber", f["number"]))
            if f["way"]:
                # a square footprint ~20 m across whose mean is the feature position
                d = 0.0001
                refs = []
                for sy, sx in ((-1, -1), (-1, 1), (1, 1), (1, -1)):
                    out.write(f'  <node id="{nid}" lat="{f["lat"] + sy * d:.7f}" '
                              f'lon="{f["lon"] + sx * d:.7f}"/>\n')
                    refs.append(nid)
                    nid += 1
                ways.append((f["id"], refs, tags))
            else:
                out.write(f'  <node id="{nid}" lat="{f["lat"]:.7f}" lon="{f["lon"]:.7f}">\n')
                for k, v in tags:
                    out.write(f'    <tag k="{k}" v="{v}"/>\n')
                out.write("  </node>\n")
                nid += 1
        for wid, refs, tags in ways:
            out.write(f'  <way id="{wid}">\n')
            for r in refs + refs[:1]:
                out.write(f'    <nd ref="{r}"/>\n')
            for k, v in tags:
                out.write(f'    <tag k="{k}" v="{v}"/>\n')
            out.write("  </way>\n")
        out.write("</osm>\n")
        return out.getvalue()


def generate_cohort(spec: Optional[CohortSpec] = None, seed: int = 7) -> RawBundle:
    """Deterministic synthetic bundle with planted stress effects and per-user habits.

    Stress-prone days bring less recreation, little or no workplace time and a
    little more travel; each user has their own home, enrolment, wake and bed
    times and favourite venues.
    """
    spec = spec or CohortSpec()
    if spec.n_users < 1 or spec.n_weeks < 1:
        raise ValueError("cohort needs at least one user and one week")
    rng = np.random.default_rng(seed)
    mb = _MapBuilder(spec, rng)

    buildings = [mb.add(t, number=str(10 + 2 * i), as_way=True) for i, t in enumerate(SCHOOL_TYPES)]
    shops = [mb.add(t, number=str(100 + i)) for i, t in enumerate(SHOP_TYPES)]
    works = [mb.add(t, number=str(200 + i), as_way=i % 2 == 0) for i, t in enumerate(WORK_TYPES)]
    recs = [mb.add(t) for t in RECREATION_TYPES]
    travels = [mb.add(t) for t in TRAVEL_TYPES]
    others = [mb.add(t) for t in OTHER_TYPES]
    class_room = {c[0]: buildings[i % len(buildings)] for i, c in enumerate(CLASS_CATALOG)}

    users = [f"u{i:02d}" for i in range(spec.n_users)]
    n_stressed = int(round(spec.stressed_fraction * spec.n_users))
    arche = ["stress_prone"] * n_stressed + ["calm"] * (spec.n_users - n_stressed)
    arche = [arche[k] for k in rng.permutation(spec.n_users)]

    profiles = {}
    enroll_rows = []
    for i, u in enumerate(users):
        htype = HOME_TYPES[i % len(HOME_TYPES)]
        home = mb.add(htype, number=str(1 + i), as_way=htype != "residential")
        n_classes = int(rng.integers(3, 5))
        classes = sorted(rng.choice(len(CLASS_CATALOG), n_classes, replace=False).tolist())
        for c in classes:
            enroll_rows.append((u, CLASS_CATALOG[c][0]))
        calm = arche[i] == "calm"
        profiles[u] = {
            "archetype": arche[i],
            "base": ARCHETYPE_BASE[arche[i]] + BASE_SPREAD * rng.standard_normal(),
            "home": home,
            "classes": [CLASS_CATALOG[c] for c in classes],
            "wake": float(rng.uniform(6.5, 9.5)),
            "bed": float(rng.uniform(22.0, 25.5)),
            "rec_minutes": float(rng.uniform(100, 150)),
            "rec_evening": bool(rng.random() < 0.5),
            # some people stick to one haunt, others spread over several
            "venues": [recs[k] for k in rng.choice(len(recs), int(rng.integers(1, 5)), replace=False)],
            "shops": [shops[k] for k in rng.choice(len(shops), int(rng.integers(1, 5)), replace=False)],
            "job": works[int(rng.integers(len(works)))] if rng.random() < (0.85 if calm else 0.5) else None,
            # shifts move around from week to week
            "job_days": [set(rng.choice([1, 2, 3, 4, 5, 6], int(rng.integers(2, 5)), replace=False).tolist())
                         for _ in range(spec.n_weeks)],
            "stop": travels[int(rng.integers(len(travels)))],
            "attend": float(rng.uniform(0.55, 0.98)),
            "commute": float(rng.uniform(8, 25)),
            "shop_rate": float(rng.uniform(0.2, 0.8)),
            "errand": others[int(rng.integers(len(others)))],
        }

    n_days = 7 * spec.n_weeks
    days = [spec.term_start + dt.timedelta(days=k) for k in range(n_days)]
    # weekly assignments due per class on a fixed weekday
    due_weekday = {c[0]: (k % 5) + 1 for k, c in enumerate(CLASS_CATALOG)}
    deadline_rows = []
    dl_count: dict[tuple[str, dt.date], int] = defaultdict(int)
    for u in users:
        for cid, *_ in profiles[u]["classes"]:
            for day in days:
                if day.isoweekday() == due_weekday[cid] and rng.random() < 0.6:
                    dl_count[(u, day)] += 1
        for day in days:
            if dl_count[(u, day)]:
                deadline_rows.append((u, day.isoformat(), dl_count[(u, day)]))

    tz = spec.timezone
    gps_rows, ema_rows = [], []
    deg_lat_per_m = 1.0 / 111195.0
    deg_lon_per_m = deg_lat_per_m / math.cos(math.radians(spec.center_lat))
    for u in users:
        p = profiles[u]
        for k, day in enumerate(days):
            week = k // 7
            near_dl = dl_count[(u, day)] + dl_count[(u, day + dt.timedelta(days=1))]
            s = (p["base"] + EXAM_BUMP * (week in EXAM_WEEKS) + DEADLINE_BUMP * near_dl
                 + DAILY_NOISE * rng.standard_normal())
            stressed = rng.random() < _sigmoid(LABEL_SLOPE * s)
            q = _sigmoid(2.0 * s)  # behavioural stress load in (0, 1)
            plan = _plan_day(p, day, week, q, class_room, rng)
            d0 = fx.day_bounds(day, tz)[0]
            dead = rng.random() < spec.dead_day_rate
            gap_a = 60 * rng.uniform(0, 24) if rng.random() < spec.outage_rate else -1.0
            gap_b = gap_a + 60 * rng.uniform(2, 8)
            t = 0.0
            while t < 24 * 60 and not dead:
                if rng.random() >= spec.missing_rate and not gap_a <= t < gap_b:
                    minute = t + float(rng.uniform(-1.0, 1.0)) if t > 0 else t
                    place = _place_at(plan, minute, p["home"])
                    err = 60.0 if rng.random() < spec.multipath_rate else 12.0
                    lat = place["lat"] + rng.normal(0, err) * deg_lat_per_m
                    lon = place["lon"] + rng.normal(0, err) * deg_lon_per_m
                    gps_rows.append((u, int(d0 + 60 * minute), round(lat, 7), round(lon, 7)))
                t += NOMINAL_INTERVAL_S / 60
            if rng.random() < spec.ema_rate:
                for _ in range(int(rng.integers(1, 4))):
                    level = int(rng.integers(3, 6)) if stressed else int(rng.integers(1, 3))
                    raw = next(r for r, lv in LEVEL_OF_RAW.items() if lv == level)
                    ema_rows.append((u, int(d0 + 3600 * rng.uniform(9, 22)), raw))

    class_rows = []
    for cid, wds, start, minutes in CLASS_CATALOG:
        h, m = map(int, start.split(":"))
        end = h * 60 + m + minutes
        for wd in wds:
            class_rows.append((cid, wd, start, f"{end // 60:02d}:{end % 60:02d}",
                               f"{class_room[cid]['number']} {class_room[cid]['type']}"))

    gps = pd.DataFrame(gps_rows, columns=BUNDLE_FILES["gps"][1])
    gps = gps.sort_values(["user_id", "timestamp"], kind="stable").reset_index(drop=True)
    ema = pd.DataFrame(ema_rows, columns=BUNDLE_FILES["ema"][1]).sort_values(
        ["user_id", "timestamp"], kind="stable").reset_index(drop=True)
    bundle = RawBundle(
        gps=gps,
        enrollment=pd.DataFrame(enroll_rows, columns=BUNDLE_FILES["enrollment"][1]),
        class_info=pd.DataFrame(class_rows, columns=BUNDLE_FILES["class_info"][1]),
        deadlines=pd.DataFrame(deadline_rows, columns=BUNDLE_FILES["deadlines"][1]),
        ema=ema, term_start=spec.term_start, timezone=tz, osm=mb.to_osm())
    return bundle


def _plan_day(p: dict, day: dt.date, week: int, q: float, class_room: dict, rng) -> list[tuple[float, float, dict]]:
    """Non-overlapping (start_min, end_min, place) blocks; anything uncovered is home."""
    wd = day.isoweekday()
    wake = 60 * (p["wake"] + rng.normal(0, 0.5) + (1.0 if wd >= 6 else 0.0))
    bed = 60 * (p["bed"] + rng.normal(0, 0.5))
    wanted: list[tuple[float, float, dict]] = []
    for cid, wds, start, minutes in p["classes"]:
        if wd in wds and rng.random() < p["attend"] * (1.0 - 0.35 * q):
            h, m = map(int, start.split(":"))
            a = h * 60 + m
            wanted.append((a, a + minutes, class_room[cid]))
    if p["job"] is not None and wd in p["job_days"][week]:
        minutes = 110 * (1.0 - q) ** 2 * rng.uniform(0.7, 1.3)
        if minutes > 15:
            wanted.append((13 * 60 + 30, 13 * 60 + 30 + minutes, p["job"]))
    rec = p["rec_minutes"] * (1.0 - 0.6 * q) * rng.uniform(0.6, 1.4) * (1.3 if wd >= 6 else 1.0)
    evening = rng.random() < (0.85 if p["rec_evening"] else 0.15)
    rec_start = (19 * 60 if evening else 16 * 60) + rng.normal(0, 45)
    venue = p["venues"][int(rng.integers(len(p["venues"])))]
    wanted.append((rec_start, rec_start + rec, venue))
    if rng.random() < p["shop_rate"]:
        a = 12 * 60 + rng.normal(0, 20)
        wanted.append((a, a + rng.uniform(25, 50), p["shops"][int(rng.integers(len(p["shops"])))]))

    if rng.random() < 0.15:
        a = 60 * rng.uniform(9, 17)
        wanted.append((a, a + rng.uniform(20, 40), p["errand"]))

    plan: list[tuple[float, float, dict]] = []
    cursor = wake
    travel = p["commute"] + 25 * q
    for a, b, place in sorted(wanted, key=lambda w: w[0]):
        a = max(a, cursor + travel)
        b = min(b, bed)
        if b - a < 10:
            continue
        plan.append((a - travel, a, p["stop"]))
        plan.append((a, b, place))
        cursor = b
    if plan and cursor + travel < bed:
        plan.append((cursor, cursor + travel, p["stop"]))
    return plan


def _place_at(plan, minute: float, home: dict) -> dict:
    for a, b, place in plan:
        if a <= minute < b:
            return place
    return home
