"""Location types to life categories, address identities, and fix-to-visit conversion."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from typing import Iterable, Optional, Sequence, Union

from .geo import DEFAULT_RADIUS_M, GpsFix, MapFeature, MapIndex, reverse_geocode

logger = logging.getLogger(__name__)

NOMINAL_INTERVAL_S = 20 * 60
DEFAULT_GAP_CAP_S = 40 * 60
NOWHERE = "@nowhere"


class Category(str, Enum):
    HOME = "home"
    SCHOOL = "school"
    SHOP = "shop"
    WORKPLACE = "workplace"
    RECREATION = "recreation"
    TRAVEL = "travel"
    OTHERS = "others"


CATEGORIES = tuple(Category)


class CategoryMapError(ValueError):
    pass


@dataclass
class CategoryMap:
    mapping: dict[str, Category]
    provenance: str = "unknown"
    _warned: set = field(default_factory=set, repr=False, compare=False)

    def __len__(self):
        return len(self.mapping)

    def keys(self):
        return self.mapping.keys()


def load_category_map(source: Union[str, Iterable[str]], provenance: Optional[str] = None) -> CategoryMap:
    """Read ``location_type,category`` lines. ``#`` lines are comments.

    A ``# provenance: <tag>`` comment sets the provenance unless one is passed in.
    """
    if isinstance(source, str):
        with open(source, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    else:
        lines = list(source)
    mapping: dict[str, Category] = {}
    tag = provenance
    for n, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if tag is None and body.lower().startswith("provenance:"):
                tag = body.split(":", 1)[1].strip()
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 2 or not parts[0]:
            raise CategoryMapError(f"line {n}: expected 'location_type,category', got {raw!r}")
        ltype, cat = parts
        try:
            category = Category(cat.lower())
        except ValueError:
            raise CategoryMapError(f"line {n}: unknown category {cat!r} in {raw!r}") from None
        if ltype in mapping:
            logger.warning("line %d: duplicate location type %r, last value wins", n, ltype)
        mapping[ltype] = category
    return CategoryMap(mapping, tag or "unknown")


def shipped_map(kind: str = "human") -> CategoryMap:
    """One of the two maps bundled with the package: ``human`` (default) or ``llm``."""
    if kind not in ("human", "llm"):
        raise ValueError("kind must be 'human' or 'llm'")
    text = resources.files("geopriv.data").joinpath(f"category_map_{kind}.csv").read_text("utf-8")
    return load_category_map(text.splitlines())


def categorize(cmap: CategoryMap, location_type: Optional[str]) -> Category:
    cat = cmap.mapping.get(location_type) if location_type is not None else None
    if cat is None:
        if location_type not in cmap._warned:
            cmap._warned.add(location_type)
            logger.info("unmapped location type %r -> others", location_type)
        return Category.OTHERS
    return cat


def address_identity(feature: MapFeature) -> str:
    if feature.address_number:
        return f"{feature.address_number} {feature.location_type}"
    return f"@{feature.feature_id} {feature.location_type}"


def map_agreement(map_a: CategoryMap, map_b: CategoryMap) -> float:
    keys_a, keys_b = set(map_a.mapping), set(map_b.mapping)
    if keys_a != keys_b:
        raise ValueError(f"key sets differ: {sorted(keys_a ^ keys_b)}")
    if not keys_a:
        return 1.0
    same = sum(map_a.mapping[k] == map_b.mapping[k] for k in keys_a)
    return same / len(keys_a)


def map_disagreements(map_a: CategoryMap, map_b: CategoryMap) -> list[str]:
    return sorted(k for k in map_a.mapping if map_b.mapping.get(k) != map_a.mapping[k])


@dataclass(frozen=True)
class SemanticVisit:
    user_id: str
    category: Category
    address_identity: str
    start: float
    end: float

    def __post_init__(self):
        if not self.end > self.start:
            raise ValueError(f"visit must have end > start ({self.start}, {self.end})")

    @property
    def duration(self) -> float:
        return self.end - self.start


def merge_visits(visits: Sequence[SemanticVisit]) -> list[SemanticVisit]:
    """Join back-to-back visits (previous end == next start) at the same address identity."""
    out: list[SemanticVisit] = []
    for v in visits:
        if out:
            last = out[-1]
            if (last.address_identity == v.address_identity and last.category == v.category
                    and last.user_id == v.user_id and last.end == v.start):
                out[-1] = SemanticVisit(last.user_id, last.category, last.address_identity,
                                        last.start, v.end)
                continue
        out.append(v)
    return out


def fixes_to_visits(fixes: Sequence[GpsFix], index: MapIndex, cmap: CategoryMap,
                    gap_cap_s: float = DEFAULT_GAP_CAP_S,
                    interval_s: float = NOMINAL_INTERVAL_S,
                    radius_m: float = DEFAULT_RADIUS_M) -> list[SemanticVisit]:
    """Geocode each fix and turn the stream into dwell visits.

    A fix owns the time until the next fix, capped at ``gap_cap_s``; the last
    fix owns ``interval_s``. Only contiguous (uncapped) dwell at the same
    address identity is merged, so a capped gap never gets counted.
    """
    if not fixes:
        return []
    for a, b in zip(fixes, fixes[1:]):
        if b.timestamp < a.timestamp:
            raise ValueError("fixes must be sorted by timestamp")
    pieces: list[SemanticVisit] = []
    for i, fix in enumerate(fixes):
        if i + 1 < len(fixes):
            dwell = min(fixes[i + 1].timestamp - fix.timestamp, gap_cap_s)
        else:
            dwell = interval_s
        if dwell <= 0:
            continue  # duplicate timestamp
        feat = reverse_geocode(index, fix.lat, fix.lon, radius_m)
        if feat is None:
            cat, ident = Category.OTHERS, NOWHERE
        else:
            cat, ident = categorize(cmap, feat.location_type), address_identity(feat)
        pieces.append(SemanticVisit(fix.user_id, cat, ident, fix.timestamp, fix.timestamp + dwell))
    return merge_visits(pieces)
