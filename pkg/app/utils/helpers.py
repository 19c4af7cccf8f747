from pathlib import Path
from typing import Optional, Sequence
import json

import numpy as np


def ensure_directory(path) -> Path:
    """Create a directory (and parents) if needed"""
    target = Path(path)
    target.mkdir(parents=True, exist_ok=True)
    return target


def median_ns(samples: Sequence[int]) -> int:
    """Median of integer nanosecond timings, rounded to the nearest ns"""
    if not samples:
        raise ValueError("no timing samples")
    return int(round(float(np.median(np.asarray(samples, dtype=np.float64)))))


def format_nanoseconds(ns: int) -> str:
    """Human-readable duration"""
    for unit, scale in (("s", 1e9), ("ms", 1e6), ("us", 1e3)):
        if abs(ns) >= scale:
            return f"{ns / scale:.2f} {unit}"
    return f"{ns} ns"


def format_percent(value: Optional[float]) -> str:
    if value is None or not np.isfinite(value):
        return "n/a"
    return f"{100.0 * value:.2f}%"


def write_json(path, payload: str) -> Path:
    """Write an already-serialized JSON document, checking that it parses"""
    json.loads(payload)
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(payload + "\n", encoding="utf-8")
    return target
