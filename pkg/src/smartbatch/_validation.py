"""Input validation helpers shared by the estimators and functional API."""
from __future__ import annotations

import numbers
from typing import Iterable, Sequence, Tuple

import numpy as np
from sklearn.utils import check_array

from .exceptions import ConfigError, DataError


def check_positive_int(value, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ConfigError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_seed(seed) -> int:
    if isinstance(seed, bool) or not isinstance(seed, numbers.Integral):
        raise ConfigError(f"seed must be an integer, got {seed!r}")
    if not 0 <= seed < 2**64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return int(seed)


def check_levels(levels: Iterable[Sequence[int]]) -> Tuple[Tuple[int, int], ...]:
    try:
        out = tuple((int(r), int(c)) for r, c in levels)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"levels must be (rows, cols) pairs: {exc}") from exc
    if not out:
        raise ConfigError("a slice grid needs at least one level")
    for r, c in out:
        if r < 1 or c < 1:
            raise ConfigError(f"grid level ({r}, {c}) must have rows, cols >= 1")
    return out


def check_features(X, name: str = "X", min_samples: int = 1) -> np.ndarray:
    """2-D finite float64 array; sklearn's messages are re-raised as DataError."""
    try:
        return check_array(
            X, dtype=np.float64, ensure_2d=True, ensure_min_samples=min_samples,
            ensure_all_finite=True, copy=False,
        )
    except ValueError as exc:
        raise DataError(f"{name}: {exc}") from exc


def check_ids(ids, n: int, name: str = "ids") -> Tuple[str, ...]:
    if ids is None:
        width = len(str(max(n - 1, 0)))
        return tuple(f"{i:0{width}d}" for i in range(n))
    ids = tuple(str(i) for i in ids)
    if len(ids) != n:
        raise DataError(f"{name}: expected {n} ids, got {len(ids)}")
    if len(set(ids)) != n:
        raise DataError(f"{name}: ids must be unique")
    return ids
