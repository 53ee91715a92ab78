import datetime as dt
import io
import os

import numpy as np
import pandas as pd
import pytest

from geopriv import dataset as ds, features as F, geo, semantic
from geopriv.semantic import Category

TERM = dt.date(2013, 3, 25)
HOME = (43.7000, -72.2900)
SCHOOL = (43.7050, -72.2900)
OSM = f"""<?xml version="1.0"?>
<osm>
  <node id="1" lat="{HOME[0]}" lon="{HOME[1]}"><tag k="building" v="dormitory"/><tag k="addr:housenumber" v="4"/></node>
  <node id="2" lat="{SCHOOL[0]}" lon="{SCHOOL[1]}"><tag k="amenity" v="university"/><tag k="addr:housenumber" v="1"/></node>
</osm>
"""


def day0(k):
    return F.day_bounds(TERM + dt.timedelta(days=k))[0]


def fixture_bundle(tmp_path=None):
    """2 users x 3 days. u1 sleeps at home and attends a 10:00-12:00 class on Monday."""
    gps = []
    for u in ("u1", "u2"):
        for k in range(3):
            for m in range(0, 24 * 60, 20):
                at_school = u == "u1" and k == 0 and 10 * 60 <= m < 11 * 60 + 30
                lat, lon = SCHOOL if at_school else HOME
                gps.append((u, int(day0(k) + 60 * m), lat, lon))
    b = ds.RawBundle(
        gps=pd.DataFrame(gps, columns=["user_id", "timestamp", "lat", "lon"]),
        enrollment=pd.DataFrame([("u1", "C1")], columns=["user_id", "class_id"]),
        class_info=pd.DataFrame([("C1", 1, "10:00", "12:00", "1 university")],
                                columns=["class_id", "weekday", "start", "end", "location_hint"]),
        deadlines=pd.DataFrame([("u1", "2013-03-26", 2), ("u2", "2013-03-26", -1)],
                               columns=["user_id", "date", "count"]),
        ema=pd.DataFrame([("u1", int(day0(0) + 9 * 3600), 4), ("u1", int(day0(2) + 9 * 3600), 3),
                          ("u2", int(day0(1) + 9 * 3600), 1)],
                         columns=["user_id", "timestamp", "raw_code"]),
        term_start=TERM, osm=OSM)
    return b


@pytest.fixture
def bundle_dir(tmp_path):
    ds.save_bundle(fixture_bundle(), str(tmp_path))
    return str(tmp_path)


def index_for(bundle):
    return geo.build_index(geo.parse_osm(io.StringIO(bundle.osm)))


def test_load_fixture_user_days(bundle_dir):
    b = ds.load_bundle(bundle_dir)
    assert len(b.user_days()) == 6
    assert b.skipped["deadlines"] == 1
    assert len(b.deadlines) == 1
    assert b.osm is not None


def test_missing_file_named(bundle_dir):
    os.remove(os.path.join(bundle_dir, "ema.csv"))
    with pytest.raises(FileNotFoundError, match="ema.csv"):
        ds.load_bundle(bundle_dir)


def test_empty_gps_file(bundle_dir, caplog):
    open(os.path.join(bundle_dir, "gps.csv"), "w").close()
    b = ds.load_bundle(bundle_dir)
    assert len(b.gps) == 0
    assert "gps.csv" in caplog.text


def test_missing_column(bundle_dir):
    pd.DataFrame({"user_id": ["u1"], "timestamp": [0]}).to_csv(os.path.join(bundle_dir, "ema.csv"), index=False)
    with pytest.raises(ValueError, match="raw_code"):
        ds.load_bundle(bundle_dir)


def test_bad_rows_skipped(bundle_dir):
    with open(os.path.join(bundle_dir, "gps.csv"), "a") as fh:
        fh.write("u1,notatime,1,1\nu1,5,95,0\n")
    b = ds.load_bundle(bundle_dir)
    assert b.skipped["gps"] == 2


def test_build_rows_and_hand_values(bundle_dir):
    b = ds.load_bundle(bundle_dir)
    d = ds.build_dataset(b, index_for(b), semantic.shipped_map("human"))
    keys = [(r.user_id, r.date) for r in d.rows]
    assert keys == [("u1", TERM), ("u1", TERM + dt.timedelta(days=2)), ("u2", TERM + dt.timedelta(days=1))]
    assert list(d.y) == [0, 1, 1]
    v = d.rows[0].values
    assert v["class_schedule"] == 7200
    # school fixes 10:00..11:20 each own 20 minutes: 100 of 120 scheduled minutes
    assert v["attendance_rate"] == pytest.approx(100 / 120)
    assert v["skip_class"] == 0
    assert v["school_time"] == 6000 and v["school_time_daytime"] == 6000
    assert v["home_time"] == 86400 - 6000
    assert v["number_of_location_visited"] == 2
    assert v["daily_repetition"] == 1  # home before and after class
    assert v["1_day_to_DL"] == 2 and v["deadline"] == 0
    assert v["week_date"] == 1 and v["week"] == TERM.isocalendar()[1]
    assert v["lat_min"] == HOME[0] and v["lat_max"] == SCHOOL[0]
    w = d.rows[1].values  # Wednesday, two days after class
    assert w["class_schedule"] == 0 and w["attendance_rate"] == 1.0
    assert w["2_days_after_skip_class"] == 0
    assert w["weekly_repetition"] == 1 + 2  # Monday's revisit plus Tuesday and Wednesday at home
    assert d.day_counts() == {"u1": 2, "u2": 1}


def test_labels_on_two_of_five_days():
    b = fixture_bundle()
    gps = b.gps.copy()
    extra = gps[gps["user_id"] == "u1"].copy()
    extra["timestamp"] += 3 * 86400
    b.gps = pd.concat([gps, extra]).sort_values(["user_id", "timestamp"]).reset_index(drop=True)
    d = ds.build_dataset(b, index_for(b), semantic.shipped_map("human"))
    assert len({r.date for r in d.rows if r.user_id == "u1"}) == 2


def test_no_ema_gives_empty_dataset(caplog):
    b = fixture_bundle()
    b.ema = b.ema.iloc[0:0]
    d = ds.build_dataset(b, index_for(b), semantic.shipped_map("human"))
    assert len(d) == 0
    assert "no EMA" in caplog.text


def test_csv_roundtrip(tmp_path):
    b = fixture_bundle()
    d = ds.build_dataset(b, index_for(b), semantic.shipped_map("human"))
    d.to_csv(tmp_path / "d.csv")
    back = ds.LabeledDataset.from_csv(str(tmp_path / "d.csv"))
    for fs in F.FeatureSet:
        np.testing.assert_array_equal(back.matrix(fs)[0], d.matrix(fs)[0])
    assert list(back.y) == list(d.y)
    d.to_jsonl(tmp_path / "d.jsonl")
    assert sum(1 for _ in open(tmp_path / "d.jsonl")) == len(d)


def test_generate_rejects_degenerate_spec():
    with pytest.raises(ValueError):
        ds.generate_cohort(ds.CohortSpec(n_users=0))


def test_generation_is_deterministic(tmp_path):
    spec = ds.CohortSpec(n_users=4, n_weeks=2)
    for name in ("a", "b"):
        ds.save_bundle(ds.generate_cohort(spec, seed=11), str(tmp_path / name))
    for fname in sorted(os.listdir(tmp_path / "a")):
        assert (tmp_path / "a" / fname).read_bytes() == (tmp_path / "b" / fname).read_bytes()
    other = ds.generate_cohort(spec, seed=12)
    assert not other.gps.equals(ds.generate_cohort(spec, seed=11).gps)


def test_distinct_homes():
    b = ds.generate_cohort(ds.CohortSpec(n_users=30, n_weeks=1), seed=0)
    feats = geo.parse_osm(io.StringIO(b.osm))
    homes = {semantic.address_identity(f) for f in feats if f.location_type in ds.HOME_TYPES}
    assert len(homes) == 30
    assert sum(f.location_type in ds.SCHOOL_TYPES for f in feats) == 1


def test_calm_prevalence_matches_logistic_model():
    spec = ds.CohortSpec(n_users=30, n_weeks=9, stressed_fraction=0.0, dead_day_rate=0.0)
    b = ds.generate_cohort(spec, seed=5)
    days = pd.to_datetime(b.ema["timestamp"], unit="s").dt.date
    labels = [ds.daily_label(u, d, g["raw_code"].tolist()).binary
              for (u, d), g in b.ema.assign(d=days).groupby(["user_id", "d"])]
    # expected deadlines due today or tomorrow, per user-day
    n_days = 7 * spec.n_weeks
    near = 2 * b.deadlines["count"].sum() / (spec.n_users * n_days)
    expected = ds.archetype_label_rate("calm", exam_share=len(ds.EXAM_WEEKS) / spec.n_weeks,
                                       mean_deadlines=near)
    assert np.mean(labels) == pytest.approx(expected, abs=0.05)


def test_row_count_invariant(small_cohort):
    bundle, _, d = small_cohort
    ema_days = set(zip(bundle.ema["user_id"], ds._local_dates(bundle.ema["timestamp"], "UTC")))
    assert len(d) == len(ema_days & bundle.user_days())


def test_planted_recreation_effect(small_cohort):
    _, _, d = small_cohort
    X, y, _, _ = d.matrix("AF")
    rec = X[:, F.FeatureSet.AF.names.index("recreational_activities_time")]
    assert rec[y == 0].mean() > rec[y == 1].mean()
