"""Input coercion helpers shared by the estimators and the CLI."""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .metrics import ExposureCounts, ExposureEvent, LevelStats, aggregate_events, dense_counts


def check_series(values, name: str = "series", min_length: int = 1) -> np.ndarray:
    """1-D finite float array of at least ``min_length`` values."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size < min_length:
        raise ValueError(f"{name} needs at least {min_length} values, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or infinite values")
    return arr


def check_consistent_length(*arrays: Sequence) -> None:
    lengths = {len(a) for a in arrays if a is not None}
    if len(lengths) > 1:
        raise ValueError(f"inconsistent lengths: {sorted(lengths)}")


def check_counts(X, group: str | None = None) -> list[ExposureCounts]:
    """Coerce per-level count data into a contiguous list of :class:`ExposureCounts`.

    Accepted inputs:

    * a sequence of :class:`ExposureCounts` or :class:`LevelStats`,
    * an array of shape ``(n_levels, 3)`` holding ``views, positives, negatives``
      for levels ``1..n_levels``,
    * an iterable of event records (dicts or events); ``group`` selects which
      group to keep and is required if the events span several groups.
    """
    items = X if isinstance(X, np.ndarray) else list(X)
    if len(items) == 0:
        raise ValueError("no count data given")
    first = items[0]
    if isinstance(first, (ExposureCounts, LevelStats)):
        rows = [r.counts if isinstance(r, LevelStats) else r for r in items]
        return dense_counts({r.level_index: r for r in rows})
    if isinstance(first, (Mapping, ExposureEvent)):
        per_group = aggregate_events(items)
        if group is None:
            if len(per_group) != 1:
                raise ValueError(f"events span groups {sorted(per_group)}; pass group=")
            group = next(iter(per_group))
        if group not in per_group:
            raise ValueError(f"no events for group {group!r}")
        return dense_counts(per_group[group])

    arr = np.asarray(items, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"count arrays must have shape (n_levels, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0) or np.any(arr != np.round(arr)):
        raise ValueError("counts must be non-negative integers")
    return [ExposureCounts(i + 1, (), int(v), int(p), int(n)) for i, (v, p, n) in enumerate(arr)]


def check_random_state(random_state) -> int:
    """Integer seed for :class:`numpy.random.SeedSequence`; ``None`` draws fresh entropy."""
    if random_state is None:
        return int(np.random.SeedSequence().entropy % 2**64)
    if isinstance(random_state, (bool, np.bool_)) or not isinstance(random_state, (int, np.integer)):
        raise ValueError("random_state must be an int or None")
    if not 0 <= random_state < 2**64:
        raise ValueError("random_state must lie in [0, 2**64)")
    return int(random_state)
