"""Univariate screening of features against a binary label: ANOVA F, p-value, point-biserial r."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

_EPS = 1e-15
_TINY = 1e-300


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > _TINY else _TINY)
    h = d
    for m in range(1, 10000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b), relative precision about 1e-10 or better."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def f_sf(f: float, df1: float, df2: float) -> float:
    """P(F > f) for an F(df1, df2) variable."""
    if f <= 0:
        return 1.0
    if math.isinf(f):
        return 0.0
    return betainc(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * f))


@dataclass(frozen=True)
class FeatureStat:
    feature: str
    f_stat: float
    p_value: float
    r_value: float


def _groups(values, labels) -> tuple[np.ndarray, np.ndarray]:
    values = np.asarray(values, dtype=float)
    labels = np.asarray(labels)
    if len(values) != len(labels):
        raise ValueError("values and labels differ in length")
    g0, g1 = values[labels == 0], values[labels == 1]
    if len(g0) == 0 or len(g1) == 0:
        raise ValueError("both label classes must be present")
    return g0, g1


def f_test(values, labels) -> tuple[float, float]:
    """One-way ANOVA between the label-0 and label-1 groups."""
    g0, g1 = _groups(values, labels)
    n = len(g0) + len(g1)
    if len(g0) < 2 or len(g1) < 2:
        raise ValueError("each class needs at least two rows")
    grand = np.concatenate([g0, g1]).mean()
    ss_between = len(g0) * (g0.mean() - grand) ** 2 + len(g1) * (g1.mean() - grand) ** 2
    ss_within = ((g0 - g0.mean()) ** 2).sum() + ((g1 - g1.mean()) ** 2).sum()
    df2 = n - 2
    if ss_within == 0:
        if ss_between == 0:
            return 0.0, 1.0
        return math.inf, 0.0
    F = float(ss_between / (ss_within / df2))
    return F, f_sf(F, 1, df2)


def point_biserial(values, labels) -> float:
    """Pearson r between the values and the 0/1 labels; 0 for constant values."""
    g0, g1 = _groups(values, labels)
    x = np.asarray(values, dtype=float)
    y = (np.asarray(labels) == 1).astype(float)
    sx, sy = x.std(), y.std()
    if sx == 0 or sy == 0:
        return 0.0
    r = float(((x - x.mean()) * (y - y.mean())).mean() / (sx * sy))
    return max(-1.0, min(1.0, r))


def screen_features(X: np.ndarray, labels, names: Sequence[str]) -> list[FeatureStat]:
    """Score every column, most significant first (ties keep column order)."""
    X = np.asarray(X, dtype=float)
    stats = []
    for j, name in enumerate(names):
        F, p = f_test(X[:, j], labels)
        stats.append(FeatureStat(name, F, p, point_biserial(X[:, j], labels)))
    return sorted(stats, key=lambda s: s.p_value)
