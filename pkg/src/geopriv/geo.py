"""OSM extract parsing, a uniform lat/lon grid index and offline reverse geocoding.

Nothing in here talks to the network: the map is read from a local OSM XML
extract and every query is answered in-process.
"""

from __future__ import annotations

import json
import logging
import math
import struct
import xml.etree.ElementTree as ET
import zlib
from collections import Counter
from dataclasses import dataclass
from typing import IO, Iterable, Optional, Sequence, Union

logger = logging.getLogger(__name__)

EARTH_RADIUS_M = 6371000.0
DEFAULT_RADIUS_M = 75.0

# first key present wins
TYPE_TAG_PRIORITY = (
    "amenity", "shop", "leisure", "tourism", "office", "building", "highway", "landuse",
)
HOUSE_NUMBER_TAG = "addr:housenumber"

INDEX_MAGIC = b"GEOPRIVIDX"
INDEX_VERSION = 1


class OsmParseError(ValueError):
    """Malformed OSM XML. ``line`` is the 1-based line of the failure."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class GpsFix:
    user_id: str
    timestamp: float
    lat: float
    lon: float

    def __post_init__(self):
        _check_coords(self.lat, self.lon)


@dataclass(frozen=True)
class MapFeature:
    feature_id: str
    lat: float
    lon: float
    location_type: str
    address_number: Optional[str] = None

    def __post_init__(self):
        if not self.location_type:
            raise ValueError(f"feature {self.feature_id}: empty location_type")
        _check_coords(self.lat, self.lon)


def _check_coords(lat: float, lon: float) -> None:
    if not (-90.0 <= lat <= 90.0) or not (-180.0 <= lon <= 180.0):
        raise ValueError(f"coordinates out of range: ({lat}, {lon})")


def haversine(a: Sequence[float], b: Sequence[float]) -> float:
    """Great-circle distance in meters between two (lat, lon) pairs in degrees."""
    lat1, lon1 = math.radians(a[0]), math.radians(a[1])
    lat2, lon2 = math.radians(b[0]), math.radians(b[1])
    h = (math.sin((lat2 - lat1) / 2.0) ** 2
         + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2.0) ** 2)
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def _location_type(tags: dict) -> Optional[str]:
    for key in TYPE_TAG_PRIORITY:
        value = tags.get(key)
        if value:
            return value
    return None


def parse_osm(source: Union[str, IO], stats: Optional[Counter] = None) -> list[MapFeature]:
    """Extract geocodable features from an OSM XML document.

    ``source`` is a path or an open file. Nodes and ways carrying one of
    ``TYPE_TAG_PRIORITY`` become features; a way is placed at the mean of its
    member nodes (a closing node equal to the first is counted once). Ways that
    reference an unseen node are skipped and counted in ``stats['skipped_ways']``.
    """
    if stats is None:
        stats = Counter()
    nodes: dict[str, tuple[float, float]] = {}
    features: list[MapFeature] = []

    parser = ET.XMLPullParser(events=("end",))
    line_no = 0

    def handle(elem: ET.Element) -> None:
        tag = elem.tag
        if tag == "node":
            nid = elem.get("id")
            try:
                lat, lon = float(elem.get("lat")), float(elem.get("lon"))
            except (TypeError, ValueError):
                raise OsmParseError(f"node {nid!r} lacks numeric lat/lon", line_no)
            nodes[nid] = (lat, lon)
            tags = {t.get("k"): t.get("v") for t in elem.iter("tag")}
            ltype = _location_type(tags)
            if ltype is not None:
                features.append(MapFeature(f"n{nid}", lat, lon, ltype, tags.get(HOUSE_NUMBER_TAG)))
                stats["nodes"] += 1
            elem.clear()
        elif tag == "way":
            wid = elem.get("id")
            tags = {t.get("k"): t.get("v") for t in elem.iter("tag")}
            ltype = _location_type(tags)
            if ltype is not None:
                refs = [nd.get("ref") for nd in elem.iter("nd")]
                if len(refs) > 1 and refs[0] == refs[-1]:
                    refs = refs[:-1]
                missing = [r for r in refs if r not in nodes]
                if missing or not refs:
                    stats["skipped_ways"] += 1
                    logger.warning("way %s references unknown node(s) %s; skipped", wid, missing[:3])
                else:
                    lat = sum(nodes[r][0] for r in refs) / len(refs)
                    lon = sum(nodes[r][1] for r in refs) / len(refs)
                    features.append(MapFeature(f"w{wid}", lat, lon, ltype, tags.get(HOUSE_NUMBER_TAG)))
                    stats["ways"] += 1
            elem.clear()

    fh = open(source, "r", encoding="utf-8") if isinstance(source, str) else source
    try:
        for line_no, line in enumerate(fh, start=1):
            try:
                parser.feed(line)
                for _, elem in parser.read_events():
                    handle(elem)
            except ET.ParseError as exc:
                raise OsmParseError(str(exc), exc.position[0]) from None
        try:
            parser.close()
        except ET.ParseError as exc:
            raise OsmParseError(str(exc), exc.position[0]) from None
    finally:
        if isinstance(source, str):
            fh.close()
    return features


class MapIndex:
    """Immutable uniform grid over lat/lon. Cells are ``cell_size_deg`` wide."""

    def __init__(self, features: Iterable[MapFeature], cell_size_deg: float):
        if not cell_size_deg > 0:
            raise ValueError("cell_size_deg must be positive")
        self.cell_size_deg = float(cell_size_deg)
        self.n_rows = max(1, math.ceil(180.0 / self.cell_size_deg))
        self.n_cols = max(1, math.ceil(360.0 / self.cell_size_deg))
        self._features: tuple[MapFeature, ...] = tuple(features)
        cells: dict[tuple[int, int], list[MapFeature]] = {}
        for f in self._features:
            cells.setdefault(self._cell(f.lat, f.lon), []).append(f)
        self._cells = {k: tuple(v) for k, v in cells.items()}

    def __len__(self) -> int:
        return len(self._features)

    @property
    def features(self) -> tuple[MapFeature, ...]:
        return self._features

    def _row(self, lat: float) -> int:
        return min(self.n_rows - 1, max(0, int(math.floor((lat + 90.0) / self.cell_size_deg))))

    def _col(self, lon: float) -> int:
        return min(self.n_cols - 1, max(0, int(math.floor((lon + 180.0) / self.cell_size_deg))))

    def _cell(self, lat: float, lon: float) -> tuple[int, int]:
        return self._row(lat), self._col(lon)

    def candidates(self, lat: float, lon: float, radius_m: float) -> list[MapFeature]:
        """Features in every cell that a circle of ``radius_m`` around the point can touch."""
        if not self._cells:
            return []
        delta = radius_m / EARTH_RADIUS_M  # angular radius
        dlat = math.degrees(delta) + 1e-9
        lat_lo, lat_hi = lat - dlat, lat + dlat
        phi = math.radians(lat)
        if lat_hi >= 90.0 or lat_lo <= -90.0 or delta >= math.pi / 2 - abs(phi):
            lon_ranges = [(-180.0, 180.0)]
        else:
            dlon = math.degrees(math.asin(min(1.0, math.sin(delta) / math.cos(phi)))) + 1e-9
            lo, hi = lon - dlon, lon + dlon
            if hi - lo >= 360.0:
                lon_ranges = [(-180.0, 180.0)]
            elif lo < -180.0:
                lon_ranges = [(-180.0, hi), (lo + 360.0, 180.0)]
            elif hi > 180.0:
                lon_ranges = [(lo, 180.0), (-180.0, hi - 360.0)]
            else:
                lon_ranges = [(lo, hi)]
        rows = range(self._row(max(-90.0, lat_lo)), self._row(min(90.0, lat_hi)) + 1)
        out: list[MapFeature] = []
        seen_cols: set[int] = set()
        for lo, hi in lon_ranges:
            for c in range(self._col(lo), self._col(hi) + 1):
                if c in seen_cols:
                    continue
                seen_cols.add(c)
                for r in rows:
                    out.extend(self._cells.get((r, c), ()))
        return out

    def to_bytes(self) -> bytes:
        payload = {
            "cell_size_deg": self.cell_size_deg,
            "features": [
                [f.feature_id, f.lat, f.lon, f.location_type, f.address_number]
                for f in self._features
            ],
        }
        body = zlib.compress(json.dumps(payload, separators=(",", ":")).encode("utf-8"), 6)
        return INDEX_MAGIC + struct.pack("<HQ", INDEX_VERSION, len(body)) + body

    @classmethod
    def from_bytes(cls, blob: bytes) -> "MapIndex":
        if not blob.startswith(INDEX_MAGIC):
            raise ValueError("not a geopriv index file (bad magic)")
        off = len(INDEX_MAGIC)
        version, size = struct.unpack_from("<HQ", blob, off)
        if version != INDEX_VERSION:
            raise ValueError(f"unsupported index version {version}")
        body = blob[off + struct.calcsize("<HQ"):]
        if len(body) != size:
            raise ValueError("truncated index file")
        payload = json.loads(zlib.decompress(body).decode("utf-8"))
        feats = [MapFeature(*row) for row in payload["features"]]
        return cls(feats, payload["cell_size_deg"])

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "MapIndex":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def build_index(features: Iterable[MapFeature], cell_size_deg: float = 0.01) -> MapIndex:
    return MapIndex(features, cell_size_deg)


def reverse_geocode(index: MapIndex, lat: float, lon: float,
                    radius_m: float = DEFAULT_RADIUS_M) -> Optional[MapFeature]:
    """Nearest feature within ``radius_m``; ties go to the smallest feature_id."""
    if not radius_m > 0:
        raise ValueError("radius_m must be positive")
    best = None
    best_key = None
    for f in index.candidates(lat, lon, radius_m):
        d = haversine((lat, lon), (f.lat, f.lon))
        if d > radius_m:
            continue
        key = (d, f.feature_id)
        if best_key is None or key < best_key:
            best, best_key = f, key
    return best
