"""EMA stress responses to ordered levels and daily binary labels."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from statistics import median
from typing import Iterable, Optional

# raw survey code -> ordered level (1 = feeling great ... 5 = stressed out)
LEVEL_OF_RAW = {1: 3, 2: 4, 3: 5, 4: 2, 5: 1}
STRESS_THRESHOLD = 3


@dataclass(frozen=True)
class EmaResponse:
    user_id: str
    timestamp: float
    raw_code: int

    def __post_init__(self):
        if self.raw_code not in LEVEL_OF_RAW:
            raise ValueError(f"raw_code must be in 1..5, got {self.raw_code!r}")


@dataclass(frozen=True)
class DailyLabel:
    user_id: str
    date: dt.date
    ordered_level: float
    binary: int


def transform_level(raw_code: int) -> int:
    try:
        return LEVEL_OF_RAW[int(raw_code)]
    except (KeyError, ValueError, TypeError):
        raise ValueError(f"raw_code must be in 1..5, got {raw_code!r}") from None


def binarize(level: float) -> int:
    return 0 if level < STRESS_THRESHOLD else 1


def daily_label(user_id: str, date: dt.date, raw_codes: Iterable[int]) -> Optional[DailyLabel]:
    """Median of the transformed levels, then thresholded. None when there are no responses."""
    levels = [transform_level(c) for c in raw_codes]
    if not levels:
        return None
    level = median(levels)
    return DailyLabel(user_id, date, float(level), binarize(level))
