"""Utility evaluation: 75:25 split, stratified k-fold and leave-one-subject-out.

Resampling is always fit on the training rows of a fold only. Each fold keeps
the dataset row ids of its train rows, test rows, and of every row that fed the
fitted model after resampling, so leakage can be checked after the fact.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .learners import fit_model
from .resampling import balance as resample

logger = logging.getLogger(__name__)


@dataclass
class ModelSpec:
    name: str = "rf"
    params: dict = field(default_factory=dict)

    def fit(self, X, y, seed):
        return fit_model(self.name, X, y, seed, **self.params)


def metrics(y_true, y_pred) -> tuple[float, float, float]:
    """(accuracy, F1 of the positive class 1, macro F1).

    F1 of a class that is neither present nor predicted counts as 1.0
    (perfect agreement on its absence).
    """
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if len(y_true) != len(y_pred):
        raise ValueError("length mismatch")
    if len(y_true) == 0:
        raise ValueError("empty input")
    acc = float(np.mean(y_true == y_pred))

    def f1(pos):
        tp = np.sum((y_pred == pos) & (y_true == pos))
        fp = np.sum((y_pred == pos) & (y_true != pos))
        fn = np.sum((y_pred != pos) & (y_true == pos))
        denom = 2 * tp + fp + fn
        return 1.0 if denom == 0 else float(2 * tp / denom)

    return acc, f1(1), (f1(1) + f1(0)) / 2.0


@dataclass
class FoldResult:
    accuracy: float
    f1: float
    macro_f1: float
    n_train: int
    n_test: int
    subject: Optional[str] = None
    train_ids: np.ndarray = field(default=None, repr=False)
    test_ids: np.ndarray = field(default=None, repr=False)
    fit_ids: np.ndarray = field(default=None, repr=False)

    def to_dict(self, provenance: bool = False) -> dict:
        d = {"accuracy": self.accuracy, "f1": self.f1, "macro_f1": self.macro_f1,
             "n_train": self.n_train, "n_test": self.n_test}
        if self.subject is not None:
            d["subject"] = self.subject
        if provenance:
            d.update(train_ids=self.train_ids.tolist(), test_ids=self.test_ids.tolist(),
                     fit_ids=self.fit_ids.tolist())
        return d


@dataclass
class EvalReport:
    regime: str
    feature_set: str
    model: str
    accuracy_mean: float
    accuracy_std: float
    f1_mean: float
    f1_std: float
    balance: str
    seed: int
    folds: list[FoldResult]

    @classmethod
    def from_folds(cls, regime, feature_set, spec: ModelSpec, balance, seed, folds):
        acc = np.array([f.accuracy for f in folds]) * 100.0
        f1 = np.array([f.f1 for f in folds]) * 100.0
        return cls(regime, str(feature_set), spec.name, float(acc.mean()), float(acc.std()),
                   float(f1.mean()), float(f1.std()), balance, seed, folds)

    def to_dict(self, provenance: bool = False) -> dict:
        return {
            "regime": self.regime, "feature_set": self.feature_set, "model": self.model,
            "accuracy_mean": self.accuracy_mean, "accuracy_std": self.accuracy_std,
            "f1_mean": self.f1_mean, "f1_std": self.f1_std, "balance": self.balance,
            "seed": self.seed,
            "macro_f1_mean": float(np.mean([f.macro_f1 for f in self.folds]) * 100.0),
            "folds": [f.to_dict(provenance) for f in self.folds],
        }


def verify_no_leakage(report: EvalReport) -> None:
    """Raise if any fold fitted on a row it was tested on."""
    for i, f in enumerate(report.folds):
        if np.intersect1d(f.test_ids, f.fit_ids).size or np.intersect1d(f.test_ids, f.train_ids).size:
            raise AssertionError(f"fold {i}: test rows leaked into fitting")
        if not np.isin(f.fit_ids, f.train_ids).all():
            raise AssertionError(f"fold {i}: fitted on rows outside the training partition")


def _run_fold(X, y, row_ids, train, test, spec: ModelSpec, balance: str, seed: int,
              subject: Optional[str] = None) -> FoldResult:
    Xtr, ytr = X[train], y[train]
    if balance != "none" and len(np.unique(ytr)) < 2:
        logger.warning("training partition has one class; skipping resampling")
        tm = resample(Xtr, ytr, "none", seed)
    else:
        tm = resample(Xtr, ytr, balance, seed)
    model = spec.fit(tm.X, tm.y, seed)
    pred = model.predict(X[test])
    acc, f1, mf1 = metrics(y[test], pred)
    return FoldResult(acc, f1, mf1, len(tm.y), len(test), subject,
                      np.sort(row_ids[train]), np.sort(row_ids[test]),
                      np.sort(row_ids[train][tm.source_rows()]))


def stratified_split(y, test_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in np.unique(y):
        rows = np.flatnonzero(y == c)
        rows = rows[rng.permutation(len(rows))]
        n_test = int(round(test_fraction * len(rows)))
        test.extend(rows[:n_test])
        train.extend(rows[n_test:])
    return np.sort(np.array(train, int)), np.sort(np.array(test, int))


def random_split_eval(X, y, spec: ModelSpec, seed: int = 0, row_ids=None, feature_set: str = "?",
                      balance: str = "smoteenn", test_fraction: float = 0.25) -> EvalReport:
    X, y = np.asarray(X, float), np.asarray(y)
    if len(np.unique(y)) < 2:
        raise ValueError("random split evaluation needs both classes")
    row_ids = np.arange(len(y)) if row_ids is None else np.asarray(row_ids)
    s = seed
    while True:
        train, test = stratified_split(y, test_fraction, s)
        if len(np.unique(y[train])) == 2 and len(test):
            break
        logger.warning("split with seed %d left a class out of training; resplitting", s)
        s += 1
    fold = _run_fold(X, y, row_ids, train, test, spec, balance, seed)
    return EvalReport.from_folds("split", feature_set, spec, balance, seed, [fold])


def stratified_kfold(y, k: int, seed: int) -> list[np.ndarray]:
    classes, counts = np.unique(y, return_counts=True)
    if k < 2:
        raise ValueError("k must be at least 2")
    if counts.min() < k:
        raise ValueError(f"cannot stratify {k} folds: smallest class has {counts.min()} rows")
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(k)]
    offset = 0
    for c in classes:
        rows = np.flatnonzero(y == c)
        rows = rows[rng.permutation(len(rows))]
        for i, r in enumerate(rows):
            folds[(offset + i) % k].append(r)
        offset += len(rows)
    return [np.sort(np.array(f, int)) for f in folds]


def kfold_eval(X, y, spec: ModelSpec, k: int = 10, seed: int = 0, row_ids=None,
               feature_set: str = "?", balance: str = "smoteenn") -> EvalReport:
    X, y = np.asarray(X, float), np.asarray(y)
    row_ids = np.arange(len(y)) if row_ids is None else np.asarray(row_ids)
    if k > len(y):
        raise ValueError("k exceeds the number of rows")
    folds = stratified_kfold(y, k, seed)
    everything = np.arange(len(y))
    results = []
    for i, test in enumerate(folds):
        train = np.setdiff1d(everything, test)
        results.append(_run_fold(X, y, row_ids, train, test, spec, balance, seed + i))
    return EvalReport.from_folds("kfold", feature_set, spec, balance, seed, results)


def eligible_subjects(users: Sequence[str], min_days: int = 10) -> list[str]:
    """Subjects with strictly more than ``min_days`` labelled days."""
    u, c = np.unique(np.asarray(users).astype(str), return_counts=True)
    return [str(s) for s, n in zip(u, c) if n > min_days]


def loso_eval(X, y, users, spec: ModelSpec, min_days: int = 10, seed: int = 0, row_ids=None,
              feature_set: str = "?", balance: str = "smote") -> EvalReport:
    X, y = np.asarray(X, float), np.asarray(y)
    users = np.asarray(users).astype(str)
    row_ids = np.arange(len(y)) if row_ids is None else np.asarray(row_ids)
    subjects = eligible_subjects(users, min_days)
    if not subjects:
        raise ValueError(f"no subject has more than {min_days} labelled days")
    if len(subjects) < 2:
        raise ValueError("leave-one-subject-out needs at least two eligible subjects")
    results = []
    for i, s in enumerate(subjects):
        test = np.flatnonzero(users == s)
        train = np.flatnonzero(users != s)
        results.append(_run_fold(X, y, row_ids, train, test, spec, balance, seed + i, subject=s))
    return EvalReport.from_folds("loso", feature_set, spec, balance, seed, results)
