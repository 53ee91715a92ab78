import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from geopriv import geo, semantic as sm
from geopriv.semantic import Category

BOLDED = {"bridge", "fast_food", "industrial", "clinic", "hotel", "picnic_table",
          "commercial", "courtyard", "dentist"}


@pytest.fixture(scope="module")
def human():
    return sm.shipped_map("human")


@pytest.fixture(scope="module")
def llm():
    return sm.shipped_map("llm")


def test_category_enum_is_closed_set_of_seven():
    assert [c.value for c in sm.CATEGORIES] == [
        "home", "school", "shop", "workplace", "recreation", "travel", "others"]


def test_load_examples():
    cmap = sm.load_category_map(["# provenance: human", "dormitory,home", "pub,recreation"])
    assert sm.categorize(cmap, "dormitory") is Category.HOME
    assert sm.categorize(cmap, "pub") is Category.RECREATION
    assert cmap.provenance == "human"


def test_unknown_category_names_line():
    with pytest.raises(sm.CategoryMapError, match="line 2"):
        sm.load_category_map(["a,home", "b,workspace"])


def test_duplicate_key_last_wins(caplog):
    cmap = sm.load_category_map(["a,home", "a,shop"])
    assert cmap.mapping["a"] is Category.SHOP
    assert "duplicate" in caplog.text


def test_shipped_maps_cover_vocabulary(human, llm):
    assert len(human) == len(llm) == 103
    assert human.provenance == "human" and llm.provenance == "llm"


def test_categorize_examples(human, llm):
    assert sm.categorize(human, "university") is Category.SCHOOL
    assert sm.categorize(human, "zzz_unknown") is Category.OTHERS
    assert sm.categorize(human, "bridge") is Category.TRAVEL
    assert sm.categorize(llm, "bridge") is Category.OTHERS
    assert sm.categorize(human, None) is Category.OTHERS


@given(st.text(max_size=20))
def test_categorize_is_total(key):
    assert sm.categorize(sm.shipped_map("human"), key) in sm.CATEGORIES


def test_map_agreement(human, llm):
    assert sm.map_agreement(human, human) == 1.0
    assert sm.map_agreement(llm, human) == pytest.approx(94 / 103, abs=0)
    assert set(sm.map_disagreements(llm, human)) == BOLDED


def test_map_agreement_one_difference(human):
    other = sm.CategoryMap(dict(human.mapping))
    key = sorted(other.mapping)[0]
    other.mapping[key] = Category.SHOP if other.mapping[key] is not Category.SHOP else Category.HOME
    assert sm.map_agreement(human, other) == pytest.approx(102 / 103, abs=0)


def test_map_agreement_key_mismatch():
    a = sm.load_category_map(["x,home", "y,home"])
    b = sm.load_category_map(["x,home", "z,home"])
    with pytest.raises(ValueError, match="y"):
        sm.map_agreement(a, b)


def test_address_identity():
    assert sm.address_identity(geo.MapFeature("w1", 0, 0, "apartments", "10")) == "10 apartments"
    assert sm.address_identity(geo.MapFeature("n77", 0, 0, "bench")) == "@n77 bench"
    a = sm.address_identity(geo.MapFeature("n1", 0, 0, "bench"))
    b = sm.address_identity(geo.MapFeature("n2", 0, 0, "bench"))
    assert a != b


DORM = geo.MapFeature("n1", 43.7, -72.29, "dormitory", "4")
CAFE = geo.MapFeature("n2", 43.71, -72.29, "cafe")


@pytest.fixture(scope="module")
def index():
    return geo.build_index([DORM, CAFE])


def fixes(times, place=DORM):
    return [geo.GpsFix("u", t, place.lat, place.lon) for t in times]


def test_three_fixes_one_visit(index, human):
    v = sm.fixes_to_visits(fixes([0, 1200, 2400]), index, human)
    assert len(v) == 1
    assert v[0].duration == 3600
    assert v[0].category is Category.HOME
    assert v[0].address_identity == "4 dormitory"


def test_single_fix(index, human):
    v = sm.fixes_to_visits(fixes([100]), index, human)
    assert [(x.start, x.end) for x in v] == [(100, 100 + sm.NOMINAL_INTERVAL_S)]


def test_gap_cap(index, human):
    v = sm.fixes_to_visits(fixes([0, 5 * 3600]), index, human, gap_cap_s=2400)
    assert v[0].duration == 2400
    assert sum(x.duration for x in v) == 2400 + sm.NOMINAL_INTERVAL_S


def test_no_geocode_is_nowhere(index, human):
    v = sm.fixes_to_visits([geo.GpsFix("u", 0, 10.0, 10.0)], index, human)
    assert v[0].category is Category.OTHERS
    assert v[0].address_identity == sm.NOWHERE


def test_places_alternate(index, human):
    stream = fixes([0, 1200]) + fixes([2400], CAFE) + fixes([3600])
    v = sm.fixes_to_visits(stream, index, human)
    assert [x.category for x in v] == [Category.HOME, Category.SHOP, Category.HOME]


def test_unsorted_rejected(index, human):
    with pytest.raises(ValueError):
        sm.fixes_to_visits(fixes([100, 50]), index, human)


def test_visit_requires_positive_length():
    with pytest.raises(ValueError):
        sm.SemanticVisit("u", Category.HOME, "x", 5, 5)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 86399), st.booleans()), min_size=1, max_size=120))
def test_dwell_conservation_and_idempotent_merge(draws):
    idx = geo.build_index([DORM, CAFE])
    human = sm.shipped_map("human")
    draws = sorted(draws)
    stream = [geo.GpsFix("u", float(t), *(((DORM if d else CAFE).lat, (DORM if d else CAFE).lon)))
              for t, d in draws]
    v = sm.fixes_to_visits(stream, idx, human)
    total = sum(x.duration for x in v)
    assert total <= 86400 + sm.NOMINAL_INTERVAL_S
    assert sm.merge_visits(v) == v
    assert all(a.end <= b.start for a, b in zip(v, v[1:]))
