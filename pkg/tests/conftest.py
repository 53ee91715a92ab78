import io
import math

import numpy as np
import pytest

from geopriv import geo


def brute_force_geocode(features, lat, lon, radius_m):
    """Linear scan: nearest feature within radius, smallest id on ties."""
    best = None
    for f in features:
        d = geo.haversine((lat, lon), (f.lat, f.lon))
        if d <= radius_m and (best is None or (d, f.feature_id) < best[0]):
            best = ((d, f.feature_id), f)
    return None if best is None else best[1]


def law_of_cosines(a, b, r=6371000.0):
    p1, p2 = math.radians(a[0]), math.radians(b[0])
    dl = math.radians(b[1] - a[1])
    c = math.sin(p1) * math.sin(p2) + math.cos(p1) * math.cos(p2) * math.cos(dl)
    return r * math.acos(max(-1.0, min(1.0, c)))


def random_features(rng, n, center=(43.70, -72.29), spread=0.01):
    return [geo.MapFeature(f"n{i}", center[0] + rng.uniform(-spread, spread),
                           center[1] + rng.uniform(-spread, spread), "cafe")
            for i in range(n)]


@pytest.fixture(scope="session")
def small_cohort():
    """A small synthetic cohort with its index and dataset, shared across tests."""
    from geopriv import dataset, semantic
    spec = dataset.CohortSpec(n_users=8, n_weeks=4)
    bundle = dataset.generate_cohort(spec, seed=3)
    index = geo.build_index(geo.parse_osm(io.StringIO(bundle.osm)))
    ds = dataset.build_dataset(bundle, index, semantic.shipped_map("human"))
    return bundle, index, ds


def fuzz_day_visits(rng, day_start, user="u", interval=1200.0, gap_cap=2400.0):
    """Visits as fixes_to_visits would build them from a random fix stream of one day."""
    from geopriv import semantic as sm
    n = int(rng.integers(1, 60))
    times = np.sort(rng.uniform(day_start, day_start + 86400.0, n))
    if rng.random() < 0.3:
        times = np.round(times / interval) * interval  # on-grid sampling with duplicates
        times = np.unique(np.clip(times, day_start, day_start + 86399.0))
    cats = list(sm.CATEGORIES)
    pieces = []
    for i, t in enumerate(times):
        dwell = min(times[i + 1] - t, gap_cap) if i + 1 < len(times) else interval
        if dwell <= 0:
            continue
        c = cats[int(rng.integers(len(cats)))]
        ident = f"{int(rng.integers(4))} {c.value}"
        pieces.append(sm.SemanticVisit(user, c, ident, float(t), float(t + dwell)))
    return sm.merge_visits(pieces)


def convex_source(x, pool, tol=1e-9):
    """(i, j, u) with x == pool[i] + u * (pool[j] - pool[i]) and 0 <= u <= 1, by exhaustive search."""
    for i in range(len(pool)):
        for j in range(len(pool)):
            d = pool[j] - pool[i]
            if not np.any(d):
                if np.allclose(x, pool[i], rtol=0, atol=tol):
                    return i, j, 0.0
                continue
            k = int(np.argmax(np.abs(d)))
            u = (x[k] - pool[i][k]) / d[k]
            if -tol <= u <= 1 + tol and np.allclose(pool[i] + u * d, x, rtol=0, atol=tol):
                return i, j, u
    return None


def gini_root_oracle(X, y, min_samples_leaf=1):
    """Exhaustive scan of midpoint thresholds, exact arithmetic.

    Returns (feature, threshold) minimising weighted Gini impurity, lowest
    feature then lowest threshold on ties, or None if nothing beats the parent.
    """
    from fractions import Fraction
    n = len(y)
    classes = sorted(set(y.tolist()))

    def weighted_gini(labels):
        m = len(labels)
        return Fraction(m) - sum(Fraction(int((labels == c).sum()) ** 2, m) for c in classes)

    best_key, best = weighted_gini(y), None
    for j in range(X.shape[1]):
        vals = np.unique(X[:, j])
        for a, b in zip(vals, vals[1:]):
            thr = a + (b - a) / 2.0
            left = X[:, j] <= thr
            if left.sum() < min_samples_leaf or (~left).sum() < min_samples_leaf:
                continue
            g = weighted_gini(y[left]) + weighted_gini(y[~left])
            if g < best_key:
                best_key, best = g, (j, thr)
    return best


def mi_oracle(values, users, n_bins=10):
    """Plug-in MI from an explicit contingency table built with dictionaries."""
    import math
    from collections import Counter
    values = np.asarray(values, dtype=float)
    edges = np.quantile(values, np.linspace(0, 1, n_bins + 1))
    inner = sorted(set(edges[1:-1].tolist()))
    bins = [sum(v >= e for e in inner) for v in values]
    n = len(values)
    joint = Counter(zip(bins, users))
    pb, pu = Counter(bins), Counter(users)
    return sum(c / n * math.log((c / n) / ((pb[b] / n) * (pu[u] / n))) for (b, u), c in joint.items())


@pytest.fixture(scope="session")
def default_cohort():
    """The default 30-user, 9-week cohort (seed 7) as a labelled dataset."""
    from geopriv import dataset, semantic
    bundle = dataset.generate_cohort(dataset.CohortSpec(), seed=7)
    index = geo.build_index(geo.parse_osm(io.StringIO(bundle.osm)))
    return dataset.build_dataset(bundle, index, semantic.shipped_map("human"))


# one summary line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
