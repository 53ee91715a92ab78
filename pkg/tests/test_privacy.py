import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from geopriv import privacy as pv
from geopriv.learners import BoostParams
from conftest import mi_oracle

FAST = BoostParams(n_stages=8, learning_rate=0.3, subsample=0.8, max_depth=3)


def test_scenario_fractions():
    assert {s.value: s.train_fraction for s in pv.AttackScenario} == {
        "rich": 0.8, "moderate": 0.5, "limited": 0.2}


def test_topk_uniform_counts_with_tie_rule():
    K = 6
    prob = np.full((K, K), 1 / K)
    curve = pv.topk_curve(prob, np.arange(K))
    np.testing.assert_allclose(curve, np.arange(1, K + 1) / K)


def test_topk_ranks():
    prob = np.array([[0.1, 0.7, 0.2], [0.5, 0.3, 0.2], [0.2, 0.2, 0.6]])
    curve = pv.topk_curve(prob, [1, 1, 0])
    # row 0: rank 1; row 1: rank 2; row 2: tie with class 1 resolved toward class 0 -> rank 2
    np.testing.assert_allclose(curve, [1 / 3, 1.0, 1.0])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 12), st.integers(1, 30))
def test_topk_monotone_and_complete(seed, K, n):
    rng = np.random.default_rng(seed)
    prob = rng.dirichlet(np.ones(K), n)
    true = rng.integers(0, K, n)
    curve = pv.topk_curve(prob, true)
    assert (np.diff(curve) >= 0).all() and curve[-1] == 1.0
    assert curve[0] == np.mean(prob.argmax(axis=1) == true)


def identity_rows(n_users=6, per_user=10):
    users = np.repeat([f"p{i}" for i in range(n_users)], per_user)
    X = np.eye(n_users)[np.repeat(np.arange(n_users), per_user)]
    return X, users


@pytest.mark.parametrize("scenario", ["rich", "moderate", "limited"])
def test_perfect_leak(scenario):
    # enough rows that even the limited split clears the attacker's min_child_weight
    X, users = identity_rows(6, 60)
    rep = pv.reid_attack(X, users, scenario, seed=0)
    assert rep.top1 == 100.0
    assert rep.curve[-1] == 1.0 and len(rep.curve) == 6


def test_independent_features_near_chance():
    rng = np.random.default_rng(0)
    users = np.repeat([f"p{i}" for i in range(10)], 30)
    X = rng.normal(size=(300, 3))
    rep = pv.reid_attack(X, users, "rich", seed=0, params=FAST)
    assert rep.top1 <= 25


def test_split_keeps_every_user_on_both_sides():
    users = np.repeat(["a", "b", "c"], [2, 5, 11])
    for frac in (0.2, 0.5, 0.8):
        tr, te = pv._per_user_split(users, frac, np.random.default_rng(0))
        assert set(users[tr]) == set(users[te]) == {"a", "b", "c"}
        assert not np.intersect1d(tr, te).size


def test_single_row_user_excluded(caplog):
    X, users = identity_rows(4, 6)
    X = np.vstack([X, np.zeros((1, 4))])
    users = np.append(users, "lonely")
    rep = pv.reid_attack(X, users, "moderate", seed=0, params=FAST)
    assert rep.excluded_users == ["lonely"] and rep.n_users == 4
    assert "lonely" in caplog.text


def test_attack_needs_two_users():
    with pytest.raises(ValueError):
        pv.reid_attack(np.zeros((4, 2)), ["a"] * 4, "rich")


def test_attack_deterministic():
    rng = np.random.default_rng(1)
    users = np.repeat([f"p{i}" for i in range(5)], 12)
    X = rng.normal(size=(60, 3)) + np.repeat(np.arange(5), 12)[:, None] * 0.3
    a = pv.reid_attack(X, users, "moderate", seed=4, params=FAST).to_dict()
    b = pv.reid_attack(X, users, "moderate", seed=4, params=FAST).to_dict()
    assert a == b


def test_mi_constant_is_zero():
    assert pv.mutual_information(np.ones(50), np.repeat(["a", "b"], 25)) == 0.0


def test_mi_identity_feature_is_log_users():
    U = 5
    users = np.repeat([f"u{i}" for i in range(U)], 8)
    values = np.repeat(np.arange(U), 8).astype(float)
    assert pv.mutual_information(values, users, n_bins=10) == pytest.approx(math.log(U), abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_mi_matches_contingency_oracle(seed):
    rng = np.random.default_rng(seed)
    users = rng.choice([f"u{i}" for i in range(7)], 200)
    values = rng.normal(size=200) + (users == "u3") * 2.0
    values[:30] = np.round(values[:30])  # some ties
    assert pv.mutual_information(values, users) == pytest.approx(mi_oracle(values, users), abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 12), st.integers(2, 9))
def test_mi_bounds(seed, n_bins, U):
    rng = np.random.default_rng(seed)
    users = rng.integers(0, U, 120)
    values = rng.normal(size=120) * rng.integers(1, 3) + users * rng.random()
    mi = pv.mutual_information(values, users, n_bins)
    assert -1e-12 <= mi <= min(math.log(n_bins), math.log(len(set(users)))) + 1e-12


def test_mi_bins_validated():
    with pytest.raises(ValueError):
        pv.mutual_information([1.0, 2.0], ["a", "b"], n_bins=1)


def test_mi_table_sorted():
    users = np.repeat(["a", "b", "c"], 20)
    X = np.column_stack([np.zeros(60), np.repeat([0.0, 1.0, 2.0], 20)])
    table = pv.mi_table(X, users, ["flat", "leaky"])
    assert [n for n, _ in table] == ["leaky", "flat"]
