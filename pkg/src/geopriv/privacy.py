"""Re-identification attacks and identity leakage measured by mutual information."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .learners import BoostParams, fit_boosted

logger = logging.getLogger(__name__)


class AttackScenario(str, Enum):
    RICH = "rich"
    MODERATE = "moderate"
    LIMITED = "limited"

    @property
    def train_fraction(self) -> float:
        return {"rich": 0.8, "moderate": 0.5, "limited": 0.2}[self.value]


# lighter than the utility booster: one tree per identity per stage adds up fast
ATTACKER_PARAMS = BoostParams(n_stages=30, learning_rate=0.3, subsample=0.8, max_depth=3,
                              min_samples_leaf=1, reg_lambda=1.0, min_child_weight=1.0)


@dataclass
class AttackReport:
    feature_set: str
    scenario: str
    top1: float  # percent
    top5: float  # percent
    curve: list[float]  # curve[k-1] = top-k accuracy as a fraction
    n_users: int
    n_train: int
    n_test: int
    attacker: dict
    seed: int
    excluded_users: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def topk_curve(prob: np.ndarray, true_idx: Sequence[int]) -> np.ndarray:
    """Fraction of rows whose true class is among the k most probable, for k = 1..n_classes.

    Equal probabilities rank the lower class index first.
    """
    prob = np.asarray(prob, dtype=float)
    true_idx = np.asarray(true_idx, dtype=int)
    n, K = prob.shape
    if n == 0:
        return np.zeros(K)
    p_true = prob[np.arange(n), true_idx]
    cols = np.arange(K)[None, :]
    ahead = (prob > p_true[:, None]) | ((prob == p_true[:, None]) & (cols < true_idx[:, None]))
    rank = ahead.sum(axis=1)  # 0-based position of the true class
    counts = np.bincount(rank, minlength=K)
    return np.cumsum(counts) / n


def _per_user_split(user_ids: np.ndarray, fraction: float, rng: np.random.Generator):
    train, test = [], []
    for u in np.unique(user_ids):
        rows = np.flatnonzero(user_ids == u)
        rows = rows[rng.permutation(len(rows))]
        n_tr = int(round(fraction * len(rows)))
        n_tr = min(max(n_tr, 1), len(rows) - 1)
        train.extend(rows[:n_tr])
        test.extend(rows[n_tr:])
    return np.sort(np.array(train, int)), np.sort(np.array(test, int))


def reid_attack(X: np.ndarray, user_ids: Sequence[str], scenario, seed: int = 0,
                feature_set: str = "?", params: Optional[BoostParams] = None) -> AttackReport:
    """Train a boosted user-id classifier on a per-user split and score it by top-k accuracy."""
    scenario = AttackScenario(scenario)
    params = params or ATTACKER_PARAMS
    X = np.asarray(X, dtype=float)
    user_ids = np.asarray(user_ids).astype(str)
    users, counts = np.unique(user_ids, return_counts=True)
    excluded = [str(u) for u, c in zip(users, counts) if c < 2]
    if excluded:
        logger.warning("excluding users with fewer than 2 rows: %s", excluded)
        keep = ~np.isin(user_ids, excluded)
        X, user_ids = X[keep], user_ids[keep]
        users = np.unique(user_ids)
    if len(users) < 2:
        raise ValueError("re-identification needs at least two users with two or more rows")
    rng = np.random.default_rng(seed)
    tr, te = _per_user_split(user_ids, scenario.train_fraction, rng)
    model = fit_boosted(X[tr], user_ids[tr], params, seed)
    prob = model.predict_proba(X[te])
    true_idx = np.searchsorted(model.classes, user_ids[te])
    curve = topk_curve(prob, true_idx)
    return AttackReport(
        feature_set=str(feature_set), scenario=scenario.value,
        top1=100.0 * float(curve[0]), top5=100.0 * float(curve[min(4, len(curve) - 1)]),
        curve=[float(c) for c in curve], n_users=len(users), n_train=len(tr), n_test=len(te),
        attacker=asdict(params), seed=seed, excluded_users=excluded)


def quantile_bins(values, n_bins: int = 10) -> np.ndarray:
    """Bin index per value using empirical quantile edges; tied edges collapse."""
    if n_bins < 2:
        raise ValueError("n_bins must be at least 2")
    values = np.asarray(values, dtype=float)
    edges = np.quantile(values, np.linspace(0.0, 1.0, n_bins + 1))
    interior = np.unique(edges[1:-1])
    return np.searchsorted(interior, values, side="right")


def mutual_information(values, user_ids, n_bins: int = 10) -> float:
    """Plug-in MI (nats) between the quantile-binned feature and the identity."""
    values = np.asarray(values, dtype=float)
    user_ids = np.asarray(user_ids)
    if len(values) != len(user_ids):
        raise ValueError("values and user_ids differ in length")
    if len(values) == 0:
        return 0.0
    b = quantile_bins(values, n_bins)
    _, u = np.unique(user_ids, return_inverse=True)
    table = np.zeros((b.max() + 1, u.max() + 1))
    np.add.at(table, (b, u), 1.0)
    pxy = table / table.sum()
    px = pxy.sum(axis=1, keepdims=True)
    py = pxy.sum(axis=0, keepdims=True)
    nz = pxy > 0
    mi = float((pxy[nz] * np.log(pxy[nz] / (px @ py)[nz])).sum())
    return max(mi, 0.0)


def mi_table(X: np.ndarray, user_ids, names: Sequence[str], n_bins: int = 10) -> list[tuple[str, float]]:
    """(feature, MI) for every column, highest first; ties keep column order."""
    X = np.asarray(X, dtype=float)
    scores = [(name, mutual_information(X[:, j], user_ids, n_bins)) for j, name in enumerate(names)]
    return sorted(scores, key=lambda t: -t[1])
