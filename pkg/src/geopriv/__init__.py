"""Privacy-aware stress detection from semantically encoded location data."""

from .features import FeatureSet
from .geo import GpsFix, MapFeature, MapIndex, build_index, haversine, parse_osm, reverse_geocode
from .semantic import Category, SemanticVisit, fixes_to_visits, shipped_map

__version__ = "0.1.0"

__all__ = [
    "Category", "FeatureSet", "GpsFix", "MapFeature", "MapIndex", "SemanticVisit",
    "build_index", "fixes_to_visits", "haversine", "parse_osm", "reverse_geocode", "shipped_map",
]
