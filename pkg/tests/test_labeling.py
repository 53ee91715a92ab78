import datetime as dt
import itertools

import pytest
from hypothesis import given, strategies as st

from geopriv import labeling as lb

DAY = dt.date(2013, 4, 1)


def test_transform_examples():
    assert lb.transform_level(5) == 1
    assert lb.transform_level(3) == 5
    assert [lb.transform_level(r) for r in range(1, 6)] == [3, 4, 5, 2, 1]
    for bad in (0, 6, -1, "x", None):
        with pytest.raises(ValueError):
            lb.transform_level(bad)


def test_transform_is_bijection():
    assert sorted(lb.transform_level(r) for r in range(1, 6)) == [1, 2, 3, 4, 5]


def test_daily_label_examples():
    assert lb.daily_label("u", DAY, [4]).binary == 0
    two = lb.daily_label("u", DAY, [4, 2])
    assert two.ordered_level == 3 and two.binary == 1
    assert lb.daily_label("u", DAY, [1, 1, 1]).binary == 1
    assert lb.daily_label("u", DAY, []) is None


def test_even_median_convention():
    # levels {2, 3} -> 2.5, which is below the threshold
    lab = lb.daily_label("u", DAY, [4, 1])
    assert lab.ordered_level == 2.5 and lab.binary == 0


def test_binarize_monotone():
    levels = [1, 1.5, 2, 2.5, 3, 3.5, 4, 4.5, 5]
    out = [lb.binarize(v) for v in levels]
    assert out == sorted(out) and out.index(1) == levels.index(3)


@given(st.lists(st.integers(1, 5), min_size=1, max_size=9), st.randoms())
def test_permutation_invariant(codes, rnd):
    shuffled = list(codes)
    rnd.shuffle(shuffled)
    assert lb.daily_label("u", DAY, codes) == lb.daily_label("u", DAY, shuffled)


def test_all_pairs_against_hand_rule():
    for a, b in itertools.product(range(1, 6), repeat=2):
        la, lbv = lb.LEVEL_OF_RAW[a], lb.LEVEL_OF_RAW[b]
        assert lb.daily_label("u", DAY, [a, b]).binary == int((la + lbv) / 2 >= 3)


def test_response_validation():
    with pytest.raises(ValueError):
        lb.EmaResponse("u", 0.0, 7)
