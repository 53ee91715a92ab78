"""Decision trees, random forests and gradient-boosted trees, written against numpy only.

Trees are stored as flat arrays (feature, threshold, left, right, value) so that
prediction is a handful of vectorised passes, one per level.

Exact trees are grown level by level, with every node of a level searched in
one vectorised pass. The booster instead bins features once and builds
per-node gradient histograms.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Union

import numpy as np

MODEL_FORMAT_VERSION = 1
_REL_TOL = 1e-12


@dataclass
class TreeParams:
    max_depth: int = 12
    min_samples_leaf: int = 1
    max_features: Union[None, int, str] = None  # None = all, "sqrt", or a count


@dataclass
class ForestParams:
    n_estimators: int = 70
    max_depth: int = 12
    min_samples_leaf: int = 2
    max_features: Union[None, int, str] = "sqrt"
    bootstrap: bool = True


@dataclass
class BoostParams:
    n_stages: int = 100
    learning_rate: float = 0.2
    subsample: float = 0.5
    max_depth: int = 4
    min_samples_leaf: int = 1
    reg_lambda: float = 1.0  # L2 penalty on leaf values
    min_child_weight: float = 1.0  # minimum hessian sum in a child
    max_bin: int = 64  # histogram bins per feature


@dataclass
class DecisionTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # (n_nodes, n_outputs)
    n_features: int

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, int)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        while True:
            f = self.feature[node]
            active = np.flatnonzero(f >= 0)
            if active.size == 0:
                return node
            na = node[active]
            go_left = X[active, f[active]] <= self.threshold[na]
            node[active] = np.where(go_left, self.left[na], self.right[na])

    def predict_value(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(), "threshold": self.threshold.tolist(),
            "left": self.left.tolist(), "right": self.right.tolist(),
            "value": self.value.tolist(), "n_features": self.n_features,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionTree":
        return cls(np.asarray(d["feature"], np.int64), np.asarray(d["threshold"], float),
                   np.asarray(d["left"], np.int64), np.asarray(d["right"], np.int64),
                   np.asarray(d["value"], float).reshape(len(d["feature"]), -1), d["n_features"])


def _n_split_features(max_features, d: int) -> int:
    if max_features is None:
        return d
    if max_features == "sqrt":
        return max(1, int(math.sqrt(d)))
    return max(1, min(d, int(max_features)))


def dense_ranks(X: np.ndarray) -> np.ndarray:
    """Per-column rank of each value among the column's distinct values (0-based)."""
    X = np.asarray(X, dtype=float)
    if X.size == 0:
        return np.zeros(X.shape, np.int64)
    o = np.argsort(X, axis=0, kind="stable")
    xs = np.take_along_axis(X, o, axis=0)
    step = np.vstack([np.zeros((1, X.shape[1]), np.int64), (np.diff(xs, axis=0) != 0).astype(np.int64)])
    R = np.empty(X.shape, np.int64)
    np.put_along_axis(R, o, np.cumsum(step, axis=0), axis=0)
    return R


def grow_tree(X: np.ndarray, Y: np.ndarray, params: TreeParams,
              rng: Optional[np.random.Generator] = None,
              ranks: Optional[np.ndarray] = None) -> DecisionTree:
    """Greedy tree on targets ``Y`` (n, K), grown one level at a time.

    A split maximises sum_k L_k^2 / n_L + sum_k R_k^2 / n_R, where L and R are
    per-column sums of ``Y`` on each side. For one-hot ``Y`` that minimises the
    weighted Gini impurity; for a single column, the squared error. Leaves store
    the mean of ``Y``. Ties go to the lowest feature, then the lowest threshold,
    and thresholds are midpoints between consecutive distinct values.

    Every node of a level is searched at once: its (node, feature) pairs form
    segments of one array that is sorted and cumulatively summed in one pass.
    ``ranks`` may pass in ``dense_ranks(X)`` (or any order-equivalent ranks).
    """
    n, d = X.shape
    if n == 0:
        raise ValueError("cannot fit a tree on zero rows")
    m = _n_split_features(params.max_features, d)
    if m < d and rng is None:
        raise ValueError("feature subsampling needs an rng")
    Y = np.asarray(Y, dtype=float)
    K = Y.shape[1]
    msl = params.min_samples_leaf
    R = dense_ranks(X) if ranks is None else ranks
    span = int(R.max()) + 1

    feature = [-1]
    threshold = [0.0]
    left = [-1]
    right = [-1]
    value = [Y.mean(axis=0)]
    # active level: samples grouped by node (ascending rows inside a node)
    order = np.arange(n)
    ids = np.array([0])
    counts = np.array([n])
    depth = 0
    while len(ids) and depth < params.max_depth:
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        Yo = Y[order]
        pure = (np.maximum.reduceat(Yo, starts) == np.minimum.reduceat(Yo, starts)).all(axis=1)
        open_ = (counts >= 2 * msl) & ~pure
        if not open_.any():
            break
        sel = np.flatnonzero(open_)
        A = len(sel)
        cnt = counts[sel]
        samp = np.concatenate([order[starts[a]:starts[a] + counts[a]] for a in sel])
        node_of = np.repeat(np.arange(A), cnt)
        if m == d:
            feats = np.broadcast_to(np.arange(d), (A, d))
        else:
            feats = np.sort(np.argsort(rng.random((A, d)), axis=1)[:, :m], axis=1)
        fe = feats[node_of]  # (Ns, m)
        seg = node_of[:, None] * m + np.arange(m)[None, :]
        # segments ordered (node, feature), values ascending, ties by row
        key = (seg * span + R[samp[:, None], fe]).ravel()
        srt = np.argsort(key, kind="stable")
        ks = key[srt]
        ss = np.repeat(samp, m)[srt]
        seg_len = np.repeat(cnt, m)
        seg_start = np.concatenate([[0], np.cumsum(seg_len)[:-1]])
        cum = np.cumsum(Y[ss], axis=0)
        pad = np.vstack([np.zeros((1, K)), cum])
        seg_total = pad[seg_start + seg_len] - pad[seg_start]
        elem_seg = np.repeat(np.arange(A * m), seg_len)
        L = cum - pad[seg_start][elem_seg]
        pos = np.arange(len(ks)) - seg_start[elem_seg]  # index inside the segment
        nl = pos + 1.0
        nr = seg_len[elem_seg] - nl
        valid = (nl >= msl) & (nr >= msl) & np.append(ks[:-1] < ks[1:], False)
        with np.errstate(divide="ignore", invalid="ignore"):
            score = (L ** 2).sum(1) / nl + ((seg_total[elem_seg] - L) ** 2).sum(1) / nr
        score = np.where(valid, score, -np.inf)
        node_start = seg_start[::m]
        best = np.maximum.reduceat(score, node_start)
        total = seg_total[::m]
        parent = (total ** 2).sum(1) / cnt
        ok = best > parent + _REL_TOL * np.maximum(np.abs(parent), 1.0)
        elem_node = elem_seg // m
        near = score >= (best - _REL_TOL * np.maximum(np.abs(best), 1.0))[elem_node]
        near &= ok[elem_node]
        hit = np.flatnonzero(near)
        split_nodes, first = np.unique(elem_node[hit], return_index=True)
        if len(split_nodes) == 0:
            break
        e = hit[first]
        f = feats[split_nodes, (elem_seg[e] % m)]
        lo, hi = X[ss[e], f], X[ss[e + 1], f]
        thr = lo + (hi - lo) / 2.0
        thr = np.where((lo <= thr) & (thr < hi), thr, lo)
        # partition the samples of split nodes into children
        is_split = np.zeros(A, bool)
        is_split[split_nodes] = True
        rank = np.cumsum(is_split) - 1
        keep = is_split[node_of]
        samp, nod = samp[keep], rank[node_of[keep]]
        go_left = X[samp, f[nod]] <= thr[nod]
        child = 2 * nod + (~go_left)
        o = np.argsort(child, kind="stable")
        order = samp[o]
        counts = np.bincount(child, minlength=2 * len(split_nodes))
        base = len(feature)
        for i, a in enumerate(split_nodes):
            node = ids[sel[a]]
            feature[node], threshold[node] = int(f[i]), float(thr[i])
            left[node], right[node] = base + 2 * i, base + 2 * i + 1
        k = 2 * len(split_nodes)
        feature += [-1] * k
        threshold += [0.0] * k
        left += [-1] * k
        right += [-1] * k
        cstarts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        value.extend(np.add.reduceat(Y[order], cstarts) / counts[:, None])
        ids = base + np.arange(k)
        depth += 1

    return DecisionTree(np.asarray(feature, np.int64), np.asarray(threshold, float),
                        np.asarray(left, np.int64), np.asarray(right, np.int64),
                        np.vstack(value), d)


MAX_BIN = 64


def bin_features(X: np.ndarray, max_bin: int = MAX_BIN) -> tuple[np.ndarray, list[np.ndarray]]:
    """Quantise each column into at most ``max_bin`` ordered bins.

    Cut points are midpoints between consecutive distinct values, so a column
    with fewer than ``max_bin`` distinct values loses nothing. Otherwise the
    cuts are thinned to the ones just above evenly spaced sample quantiles.
    Bin of x = number of cuts strictly below x, hence x <= cut[b] iff bin <= b.
    """
    n, d = X.shape
    codes = np.empty((n, d), dtype=np.int32)
    cuts = []
    for j in range(d):
        v = np.unique(X[:, j])
        c = v[:-1] + (v[1:] - v[:-1]) / 2.0
        c = np.where(c < v[1:], c, v[:-1])
        if len(c) > max_bin - 1:
            # "lower" returns sample values, so the choice depends on ranks only
            q = np.quantile(X[:, j], np.linspace(0.0, 1.0, max_bin + 1)[1:-1], method="lower")
            pos = np.unique(np.minimum(np.searchsorted(c, q, side="left"), len(c) - 1))
            c = c[pos]
        cuts.append(c)
        codes[:, j] = np.searchsorted(c, X[:, j], side="left")
    return codes, cuts


def grow_hist_tree(codes: np.ndarray, cuts: list[np.ndarray], g: np.ndarray, h: np.ndarray,
                   params: TreeParams, reg_lambda: float = 1.0,
                   min_child_weight: float = 1.0) -> DecisionTree:
    """Second-order regression tree on binned features.

    Each node accumulates gradient ``g``, hessian ``h`` and counts per
    (feature, bin) and scores every bin boundary by G_L^2/(H_L+lambda) +
    G_R^2/(H_R+lambda). Leaves take the Newton step sum(g) / (sum(h) + lambda).
    Ties go to the lowest feature, then the lowest boundary. Only the smaller
    child's histogram is counted; its sibling's is the parent's minus it.
    """
    n, d = codes.shape
    if n == 0:
        raise ValueError("cannot fit a tree on zero rows")
    sizes = np.array([len(c) + 1 for c in cuts], dtype=np.int64)
    start = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    T = int(sizes.sum())
    flat_all = codes + start[None, :]
    # boundary after bin b of feature f, for b < sizes[f] - 1
    fb = np.repeat(np.arange(d), sizes - 1)
    pos = np.concatenate([start[f] + np.arange(sizes[f] - 1) for f in range(d)] + [np.zeros(0, np.int64)])
    base = start[fb]
    all_cuts = np.concatenate(cuts + [np.zeros(0)])
    msl = params.min_samples_leaf
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(G, H):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(G / max(H + reg_lambda, 1e-12))
        return len(feature) - 1

    def histogram(idx):
        flat = flat_all[idx].ravel()
        return np.stack([np.bincount(flat, np.repeat(g[idx], d), T),
                         np.bincount(flat, np.repeat(h[idx], d), T),
                         np.bincount(flat, None, T)])

    root = new_node(float(g.sum()), float(h.sum()))
    stack = [(root, np.arange(n), 0, None)]
    while stack:
        node, idx, depth, hist = stack.pop()
        nn = len(idx)
        if depth >= params.max_depth or nn < 2 * msl or len(pos) == 0:
            continue
        if hist is None:
            hist = histogram(idx)
        cum = np.zeros((3, T + 1))
        np.cumsum(hist, axis=1, out=cum[:, 1:])
        GL, HL, CL = cum[:, pos + 1] - cum[:, base]
        Gt, Ht = float(g[idx].sum()), float(h[idx].sum())
        GR, HR, CR = Gt - GL, Ht - HL, nn - CL
        valid = (hist[2, pos] > 0) & (CL >= msl) & (CR >= msl)
        valid &= (HL >= min_child_weight) & (HR >= min_child_weight)
        valid &= (HL + reg_lambda > 0) & (HR + reg_lambda > 0)
        if not valid.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            score = GL ** 2 / (HL + reg_lambda) + GR ** 2 / (HR + reg_lambda)
        score = np.where(valid, score, -np.inf)
        best = score.max()
        parent = Gt ** 2 / max(Ht + reg_lambda, 1e-12)
        if not best > parent + _REL_TOL * max(abs(parent), 1.0):
            continue
        i = int(np.flatnonzero(score >= best - _REL_TOL * max(abs(best), 1.0))[0])
        f = int(fb[i])
        goes_left = codes[idx, f] <= pos[i] - start[f]
        li, ri = idx[goes_left], idx[~goes_left]
        feature[node], threshold[node] = f, float(all_cuts[i])
        left[node] = new_node(float(GL[i]), float(HL[i]))
        right[node] = new_node(float(GR[i]), float(HR[i]))
        hl = hr = None
        if depth + 1 < params.max_depth:
            if len(li) <= len(ri):
                hl = histogram(li)
                hr = hist - hl
            else:
                hr = histogram(ri)
                hl = hist - hr
        stack.append((right[node], ri, depth + 1, hr))
        stack.append((left[node], li, depth + 1, hl))

    return DecisionTree(np.asarray(feature, np.int64), np.asarray(threshold, float),
                        np.asarray(left, np.int64), np.asarray(right, np.int64),
                        np.asarray(value, float)[:, None], d)


def _encode_labels(y) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y)
    if y.size == 0:
        raise ValueError("empty label vector")
    classes, codes = np.unique(y, return_inverse=True)
    return classes, codes


def _check_X(X, n_features: Optional[int] = None) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be 2-D")
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"expected {n_features} features, got {X.shape[1]}")
    return X


@dataclass
class TreeModel:
    """A single classification tree with its label encoding."""
    tree: DecisionTree
    classes: np.ndarray

    kind = "tree"

    @property
    def n_features(self):
        return self.tree.n_features

    def predict_proba(self, X) -> np.ndarray:
        return self.tree.predict_value(_check_X(X, self.n_features))

    def predict(self, X) -> np.ndarray:
        return self.classes[np.argmax(self.predict_proba(X), axis=1)]


def fit_tree(X, y, params: Optional[TreeParams] = None, seed: Optional[int] = None) -> TreeModel:
    """Gini classification tree."""
    params = params or TreeParams()
    X = _check_X(X)
    if len(X) == 0:
        raise ValueError("cannot fit a tree on zero rows")
    classes, codes = _encode_labels(y)
    Y = np.eye(len(classes))[codes]
    tree = grow_tree(X, Y, params, np.random.default_rng(seed))
    return TreeModel(tree, classes)


@dataclass
class ForestModel:
    trees: list[DecisionTree]
    classes: np.ndarray
    params: ForestParams
    seed: Optional[int]
    n_features: int

    kind = "forest"

    def predict_proba(self, X) -> np.ndarray:
        X = _check_X(X, self.n_features)
        acc = np.zeros((len(X), len(self.classes)))
        for t in self.trees:
            acc += t.predict_value(X)
        acc /= len(self.trees)
        return acc / acc.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        return self.classes[np.argmax(self.predict_proba(X), axis=1)]


def fit_forest(X, y, params: Optional[ForestParams] = None, seed: Optional[int] = 0) -> ForestModel:
    params = params or ForestParams()
    X = _check_X(X)
    classes, codes = _encode_labels(y)
    Y = np.eye(len(classes))[codes]
    n = len(X)
    tp = TreeParams(params.max_depth, params.min_samples_leaf, params.max_features)
    R = dense_ranks(X)
    trees = []
    for child in np.random.SeedSequence(seed).spawn(params.n_estimators):
        rng = np.random.default_rng(child)
        if params.bootstrap:
            rows = np.sort(rng.integers(0, n, n))
            trees.append(grow_tree(X[rows], Y[rows], tp, rng, R[rows]))
        else:
            trees.append(grow_tree(X, Y, tp, rng, R))
    return ForestModel(trees, classes, params, seed, X.shape[1])


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class BoostedModel:
    """One additive logit model per output column.

    Binary problems use a single column for the positive class; multiclass
    problems use one-vs-rest columns normalised at prediction time.
    """
    stages: list[list[DecisionTree]]  # stages[t][k]
    init: np.ndarray  # initial log-odds per column
    classes: np.ndarray
    params: BoostParams
    seed: Optional[int]
    n_features: int

    kind = "boosted"

    def decision_function(self, X) -> np.ndarray:
        X = _check_X(X, self.n_features)
        F = np.tile(self.init, (len(X), 1))
        for stage in self.stages:
            for k, tree in enumerate(stage):
                F[:, k] += self.params.learning_rate * tree.predict_value(X)[:, 0]
        return F

    def predict_proba(self, X) -> np.ndarray:
        F = self.decision_function(X)
        if len(self.classes) == 2:
            p = _sigmoid(F[:, 0])
            return np.column_stack([1.0 - p, p])
        if len(self.classes) == 1:
            return np.ones((len(F), 1))
        P = _sigmoid(F)
        return P / P.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        return self.classes[np.argmax(self.predict_proba(X), axis=1)]


def _log_odds(p: float) -> float:
    p = min(max(p, 1e-6), 1.0 - 1e-6)
    return math.log(p / (1.0 - p))


def fit_boosted(X, y, params: Optional[BoostParams] = None, seed: Optional[int] = 0) -> BoostedModel:
    """Stagewise logistic boosting.

    Features are binned once on the full training matrix. Each stage draws one
    row subsample (shared by all one-vs-rest columns) and grows a histogram tree
    on gradients r = y - p and hessians h = p(1-p): splits maximise the
    second-order gain G^2 / (H + lambda), children need H >= min_child_weight,
    and leaves take the Newton step sum(r) / (sum(h) + lambda).
    """
    params = params or BoostParams()
    X = _check_X(X)
    classes, codes = _encode_labels(y)
    n = len(X)
    K = 1 if len(classes) <= 2 else len(classes)
    if len(classes) == 2:
        targets = (codes == 1).astype(float)[:, None]
    elif len(classes) == 1:
        targets = np.zeros((n, 1))
    else:
        targets = np.eye(K)[codes]
    init = np.array([_log_odds(targets[:, k].mean()) for k in range(K)])
    F = np.tile(init, (n, 1))
    tp = TreeParams(params.max_depth, params.min_samples_leaf, None)
    rng = np.random.default_rng(seed)
    n_sub = max(1, int(round(params.subsample * n)))
    codes_all, cuts = bin_features(X, params.max_bin)
    stages = []
    for _ in range(params.n_stages):
        rows = np.arange(n) if n_sub >= n else np.sort(rng.choice(n, n_sub, replace=False))
        codes = codes_all[rows]
        stage = []
        for k in range(K):
            p = _sigmoid(F[rows, k])
            r = targets[rows, k] - p
            h = p * (1.0 - p)
            tree = grow_hist_tree(codes, cuts, r, h, tp, params.reg_lambda,
                                  params.min_child_weight)
            stage.append(tree)
            if params.learning_rate != 0:
                F[:, k] += params.learning_rate * tree.predict_value(X)[:, 0]
        stages.append(stage)
    return BoostedModel(stages, init, classes, params, seed, X.shape[1])


Model = Union[TreeModel, ForestModel, BoostedModel]


def predict_proba(model: Model, X) -> np.ndarray:
    return model.predict_proba(X)


def fit_model(name: str, X, y, seed: Optional[int] = 0, **overrides) -> Model:
    """Fit by short name: ``rf`` (random forest) or ``gbt`` (boosted trees)."""
    if name == "rf":
        return fit_forest(X, y, ForestParams(**overrides), seed)
    if name == "gbt":
        return fit_boosted(X, y, BoostParams(**overrides), seed)
    raise ValueError(f"unknown model {name!r}; expected 'rf' or 'gbt'")


def accuracy_score(y_true, y_pred) -> float:
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    return float(np.mean(y_true == y_pred))


def permutation_importance(model: Model, X, y, metric: Callable = accuracy_score,
                           seed: Optional[int] = 0, repeats: int = 5) -> np.ndarray:
    """Mean drop in ``metric`` when one column at a time is shuffled."""
    X = _check_X(X, model.n_features)
    rng = np.random.default_rng(seed)
    base = metric(y, model.predict(X))
    out = np.zeros(X.shape[1])
    for j in range(X.shape[1]):
        drops = []
        for _ in range(repeats):
            Xp = X.copy()
            Xp[:, j] = X[rng.permutation(len(X)), j]
            drops.append(base - metric(y, model.predict(Xp)))
        out[j] = float(np.mean(drops))
    return out


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    return v


def model_to_dict(model: Model) -> dict:
    base = {"format": "geopriv-model", "version": MODEL_FORMAT_VERSION, "kind": model.kind,
            "classes": _jsonable(model.classes)}
    if isinstance(model, TreeModel):
        base["tree"] = model.tree.to_dict()
    elif isinstance(model, ForestModel):
        base.update(params=asdict(model.params), seed=model.seed, n_features=model.n_features,
                    trees=[t.to_dict() for t in model.trees])
    else:
        base.update(params=asdict(model.params), seed=model.seed, n_features=model.n_features,
                    init=model.init.tolist(),
                    stages=[[t.to_dict() for t in st] for st in model.stages])
    return base


def model_from_dict(d: dict) -> Model:
    if d.get("format") != "geopriv-model" or d.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError("not a supported geopriv model document")
    classes = np.asarray(d["classes"])
    if d["kind"] == "tree":
        return TreeModel(DecisionTree.from_dict(d["tree"]), classes)
    if d["kind"] == "forest":
        return ForestModel([DecisionTree.from_dict(t) for t in d["trees"]], classes,
                           ForestParams(**d["params"]), d["seed"], d["n_features"])
    if d["kind"] == "boosted":
        return BoostedModel([[DecisionTree.from_dict(t) for t in st] for st in d["stages"]],
                            np.asarray(d["init"], float), classes, BoostParams(**d["params"]),
                            d["seed"], d["n_features"])
    raise ValueError(f"unknown model kind {d['kind']!r}")


def save_model(model: Model, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh)


def load_model(path) -> Model:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
