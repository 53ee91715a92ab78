"""SMOTE, edited nearest neighbours, and their composition.

Every output row remembers where it came from: ``parents[i] = (a, b)`` are
row indices of the input matrix and ``weights[i] = u`` such that
``X_out[i] = X[a] + u * (X[b] - X[a])``. Original rows carry ``(a, a)`` and
``u = 0``, so provenance survives any chain of resampling steps.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

logger = logging.getLogger(__name__)


@dataclass
class TrainMatrix:
    X: np.ndarray
    y: np.ndarray
    synthetic: np.ndarray
    parents: np.ndarray
    weights: np.ndarray

    @classmethod
    def original(cls, X, y) -> "TrainMatrix":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y)
        if len(X) != len(y):
            raise ValueError("X and y lengths differ")
        idx = np.arange(len(X))
        return cls(X, y, np.zeros(len(X), bool), np.column_stack([idx, idx]), np.zeros(len(X)))

    def take(self, rows) -> "TrainMatrix":
        return TrainMatrix(self.X[rows], self.y[rows], self.synthetic[rows],
                           self.parents[rows], self.weights[rows])

    def source_rows(self) -> np.ndarray:
        """Sorted input-row indices that contributed to any output row."""
        return np.unique(self.parents)


def standardizer(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std == 0] = 1.0
    return mean, std


def _neighbors(Z: np.ndarray, queries: np.ndarray, k: int, exclude_self: bool) -> np.ndarray:
    """k nearest rows of ``Z`` for each row index in ``queries``; distance ties go to the lower index."""
    sq = (Z ** 2).sum(axis=1)
    d2 = sq[queries, None] + sq[None, :] - 2.0 * (Z[queries] @ Z.T)
    if exclude_self:
        d2[np.arange(len(queries)), queries] = np.inf
    order = np.argsort(d2, axis=1, kind="stable")
    return order[:, :k]


def _binary_classes(y: np.ndarray) -> tuple:
    classes, counts = np.unique(y, return_counts=True)
    if len(classes) != 2:
        raise ValueError(f"resampling needs exactly two classes, got {len(classes)}")
    return classes, counts


def smote(X, y, k: int = 5, seed: Optional[int] = 0,
          scale: Optional[tuple[np.ndarray, np.ndarray]] = None) -> TrainMatrix:
    """Oversample the minority class up to the majority count.

    Neighbours are found in standardised space (``scale`` = (mean, std), by
    default from ``X`` itself); interpolation happens in the original units.
    """
    base = TrainMatrix.original(X, y)
    classes, counts = _binary_classes(base.y)
    if counts[0] == counts[1]:
        return base
    minority = classes[np.argmin(counts)]
    n_new = int(counts.max() - counts.min())
    mins = np.flatnonzero(base.y == minority)
    if len(mins) <= k:
        logger.warning("minority class has %d rows; reducing k from %d to %d", len(mins), k, len(mins) - 1)
        k = len(mins) - 1
    mean, std = scale if scale is not None else standardizer(base.X)
    Z = (base.X[mins] - mean) / std
    rng = np.random.default_rng(seed)
    pick = rng.integers(0, len(mins), n_new)
    u = rng.random(n_new)
    if k == 0:
        nn_local = pick
    else:
        nbrs = _neighbors(Z, np.arange(len(mins)), k, exclude_self=True)
        nn_local = nbrs[pick, rng.integers(0, k, n_new)]
    a, b = mins[pick], mins[nn_local]
    X_new = base.X[a] + u[:, None] * (base.X[b] - base.X[a])
    return TrainMatrix(
        np.vstack([base.X, X_new]),
        np.concatenate([base.y, np.full(n_new, minority, dtype=base.y.dtype)]),
        np.concatenate([base.synthetic, np.ones(n_new, bool)]),
        np.vstack([base.parents, np.column_stack([a, b])]),
        np.concatenate([base.weights, u]),
    )


def enn(X, y, k: int = 3, scale: Optional[tuple[np.ndarray, np.ndarray]] = None,
        _base: Optional[TrainMatrix] = None) -> TrainMatrix:
    """Drop rows whose label disagrees with the majority of their k nearest neighbours."""
    tm = _base if _base is not None else TrainMatrix.original(X, y)
    n = len(tm.y)
    if k < 1:
        raise ValueError("k must be at least 1")
    if n < 2:
        return tm
    if k > n - 1:
        logger.warning("k=%d exceeds n-1=%d; clamping", k, n - 1)
        k = n - 1
    mean, std = scale if scale is not None else standardizer(tm.X)
    Z = (tm.X - mean) / std
    nbrs = _neighbors(Z, np.arange(n), k, exclude_self=True)
    agree = (tm.y[nbrs] == tm.y[:, None]).sum(axis=1)
    drop = (k - agree) > agree  # strict majority of neighbours disagrees
    keep = ~drop
    for c in np.unique(tm.y):
        in_c = tm.y == c
        if not keep[in_c].any():
            logger.warning("ENN would remove every row of class %r; keeping that class", c)
            keep[in_c] = True
    return tm.take(np.flatnonzero(keep))


def smoteenn(X, y, k_smote: int = 5, k_enn: int = 3, seed: Optional[int] = 0) -> TrainMatrix:
    """SMOTE then ENN; both use the input matrix's mean/std for distances."""
    X = np.asarray(X, dtype=float)
    scale = standardizer(X)
    over = smote(X, y, k_smote, seed, scale)
    return enn(None, None, k_enn, scale, _base=over)


def balance(X, y, method: str = "smoteenn", seed: Optional[int] = 0) -> TrainMatrix:
    if method == "smoteenn":
        return smoteenn(X, y, seed=seed)
    if method == "smote":
        return smote(X, y, seed=seed)
    if method == "none":
        return TrainMatrix.original(X, y)
    raise ValueError(f"unknown balancing method {method!r}")
