"""Comparing positive and negative response trajectories across intensity levels.

All series here are indexed by intensity level (position 1 is level 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateSeriesError

MINMAX = "minmax"
ZSCORE = "zscore"


@dataclass(frozen=True)
class ResponseSeries:
    label: str
    values: tuple[float, ...]

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        if not values:
            raise DegenerateSeriesError(f"series {self.label!r} is empty")
        if not all(math.isfinite(v) for v in values):
            raise DegenerateSeriesError(f"series {self.label!r} has non-finite values")
        object.__setattr__(self, "values", values)

    def __len__(self):
        return len(self.values)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


def _values(series) -> np.ndarray:
    if isinstance(series, ResponseSeries):
        return np.asarray(series.values, dtype=float)
    arr = np.asarray(series, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise DegenerateSeriesError("expected a non-empty 1-d series")
    if not np.all(np.isfinite(arr)):
        raise DegenerateSeriesError("series has non-finite values")
    return arr


def _label(series, default: str) -> str:
    return series.label if isinstance(series, ResponseSeries) else default


def _same_length(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what} needs equal lengths, got {a.size} and {b.size}")


def normalize(series, method: str = MINMAX) -> ResponseSeries:
    x = _values(series)
    if x.size < 2:
        raise DegenerateSeriesError("normalization needs at least two values")
    if method == MINMAX:
        lo, hi = x.min(), x.max()
        if hi <= lo:
            raise DegenerateSeriesError("constant series cannot be min-max normalized")
        out = (x - lo) / (hi - lo)
    elif method == ZSCORE:
        sd = x.std()
        if sd == 0:
            raise DegenerateSeriesError("constant series cannot be z-scored")
        out = (x - x.mean()) / sd
    else:
        raise ValueError(f"unknown normalization {method!r}")
    return ResponseSeries(_label(series, "series"), tuple(out))


def minkowski_distance(a, b, p: float = 2.0) -> float:
    """Lock-step ``(sum |a_i - b_i|^p)^(1/p)``; ``p=2`` is Euclidean."""
    if p < 1:
        raise ValueError("p must be >= 1")
    x, y = _values(a), _values(b)
    _same_length(x, y, "minkowski_distance")
    return float(np.sum(np.abs(x - y) ** p) ** (1.0 / p))


def per_level_distance(a, b) -> ResponseSeries:
    x, y = _values(a), _values(b)
    _same_length(x, y, "per_level_distance")
    return ResponseSeries("gap", tuple(np.abs(x - y)))


def similarity_correlation(a, b) -> float:
    """Pearson correlation of two equally long, non-constant series."""
    x, y = _values(a), _values(b)
    _same_length(x, y, "similarity_correlation")
    if x.size < 2:
        raise DegenerateSeriesError("correlation needs at least two points")
    dx, dy = x - x.mean(), y - y.mean()
    den = math.sqrt(float(dx @ dx) * float(dy @ dy))
    if den == 0:
        raise DegenerateSeriesError("correlation is undefined for a constant series")
    return float(np.clip((dx @ dy) / den, -1.0, 1.0))


@dataclass(frozen=True)
class WarpingResult:
    distance: float
    path: list[tuple[int, int]]  # 1-based (i, j) pairs from (1, 1) to (n, m)
    cost_matrix: np.ndarray = field(repr=False)


def dtw(a, b, p: float = 1.0) -> WarpingResult:
    """Unconstrained dynamic time warping with cell cost ``|x - y|^p``.

    Steps are (i-1, j), (i, j-1) and (i-1, j-1). The traceback prefers the
    diagonal, then the vertical, then the horizontal predecessor on ties.
    """
    x, y = _values(a), _values(b)
    n, m = x.size, y.size
    cost = np.abs(x[:, None] - y[None, :]) ** p
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        row_prev, row = acc[i - 1], acc[i]
        for j in range(1, m + 1):
            row[j] = cost[i - 1, j - 1] + min(row_prev[j - 1], row_prev[j], row[j - 1])

    i, j = n, m
    path = [(i, j)]
    while (i, j) != (1, 1):
        options = ((acc[i - 1, j - 1], i - 1, j - 1), (acc[i - 1, j], i - 1, j), (acc[i, j - 1], i, j - 1))
        best = min(v for v, _, _ in options)
        _, i, j = next(o for o in options if o[0] == best)
        path.append((i, j))
    path.reverse()
    return WarpingResult(float(acc[n, m]), path, cost)


# --------------------------------------------------------------------------- saturation


@dataclass
class SaturationReport:
    detected_level: int
    fallback: bool
    window: int
    epsilon: float
    rise: float
    evidence: dict
    candidates: dict

    def to_dict(self) -> dict:
        return {
            "detected_level": self.detected_level,
            "fallback": self.fallback,
            "window": self.window,
            "epsilon": self.epsilon,
            "rise": self.rise,
            "evidence": self.evidence,
            "candidates": self.candidates,
        }


def _wmean(x: np.ndarray, w: np.ndarray, lo: int, hi: int) -> float:
    """Weighted mean over 0-based ``lo..hi-1``; nan if the weights vanish."""
    ws = w[lo:hi].sum()
    return float(np.dot(x[lo:hi], w[lo:hi]) / ws) if ws > 0 else math.nan


def _ratio(num: float, den: float) -> float | None:
    if math.isnan(num) or math.isnan(den):
        return None
    if den == 0:
        return math.inf if num > 0 else None
    return num / den


def _slope(y: np.ndarray) -> float:
    if y.size < 2:
        return 0.0
    x = np.arange(y.size, dtype=float)
    x -= x.mean()
    return float(x @ (y - y.mean()) / (x @ x))


def _upward_changepoint(rnf: np.ndarray, w: np.ndarray) -> int | None:
    """Last level before the best single upward mean shift (weighted least squares)."""
    best, best_k = -math.inf, None
    for k in range(1, rnf.size):
        left, right = _wmean(rnf, w, 0, k), _wmean(rnf, w, k, rnf.size)
        if not right > left:
            continue
        gain = w[:k].sum() * w[k:].sum() / w.sum() * (right - left) ** 2
        if gain > best:
            best, best_k = gain, k
    return best_k


def detect_saturation(
    rpf,
    rnf,
    window: int = 5,
    epsilon: float = 0.02,
    rise: float = 0.4,
    views: Sequence[float] | None = None,
    boundary: int = 10,
) -> SaturationReport:
    """Find the intensity level past which conversion stops improving while
    negative responses climb.

    Level ``L`` qualifies when

    * conversion has stopped improving: the mean positive factor over the next
      ``window`` levels is at most ``(1 + epsilon)`` times the mean over the
      last ``window`` levels up to ``L``, and
    * negative responses rise: the mean negative factor over the next
      ``window`` levels exceeds ``(1 + rise)`` times its mean over levels
      ``1..L``.

    Means are weighted by ``views`` when given (pooled rates), otherwise
    plain. The smallest qualifying ``L`` is reported; if none qualifies the
    argmax of ``rpf`` is reported with ``fallback=True``.
    """
    pos, neg = _values(rpf), _values(rnf)
    _same_length(pos, neg, "detect_saturation")
    n = pos.size
    if window < 1:
        raise ValueError("window must be >= 1")
    if n < window + 2:
        raise DegenerateSeriesError(f"series of length {n} too short for window {window}")
    w = np.ones(n) if views is None else np.asarray(views, dtype=float)
    if w.shape != pos.shape or np.any(w < 0):
        raise ValueError("views must be non-negative and match the series length")

    gain: dict[int, float | None] = {}
    neg_rise: dict[int, float | None] = {}
    detected = None
    for level in range(1, n - window + 1):
        ahead = (level, level + window)
        g = _ratio(_wmean(pos, w, *ahead), _wmean(pos, w, max(0, level - window), level))
        r = _ratio(_wmean(neg, w, *ahead), _wmean(neg, w, 0, level))
        gain[level], neg_rise[level] = g, r
        if detected is None and g is not None and r is not None and g <= 1 + epsilon and r > 1 + rise:
            detected = level

    # spec-style reading: plain mean of raw CR+ over the next levels and the sign of the rnf trend
    with np.errstate(divide="ignore", invalid="ignore"):
        cr = pos[1:] / pos[:-1]
    cr_mean = {}
    slope_sign = {}
    cr_rule = None
    for level in range(1, n - window + 1):
        seg = cr[level - 1 : level - 1 + window]
        cr_mean[level] = float(seg.mean()) if np.all(np.isfinite(seg)) else None
        slope_sign[level] = int(np.sign(_slope(neg[level - 1 :])))
        if cr_rule is None and cr_mean[level] is not None and cr_mean[level] <= 1 + epsilon and slope_sign[level] > 0:
            cr_rule = level

    interactions = (pos + neg) * w
    with np.errstate(divide="ignore", invalid="ignore"):
        rns = np.where(pos + neg > 0, neg / (pos + neg), np.nan)
    share_crossover = None
    for level in range(2, n - window + 2):
        ahead = _wmean(np.nan_to_num(rns), interactions, level - 1, level - 1 + window)
        before = _wmean(np.nan_to_num(rns), interactions, 0, level - 1)
        if not math.isnan(ahead) and not math.isnan(before) and ahead > before:
            share_crossover = level
            break

    drop_realized = None
    finite = rns[np.isfinite(rns)]
    if finite.size and boundary <= n and np.isfinite(rns[0]) and np.isfinite(rns[boundary - 1]):
        total_drop = rns[0] - finite.min()
        if total_drop > 0:
            drop_realized = float((rns[0] - rns[boundary - 1]) / total_drop)

    argmax = int(np.argmax(pos)) + 1
    fallback = detected is None
    evidence = {
        "conversion_gain": gain,
        "negative_rise": neg_rise,
        "windowed_cr_mean": cr_mean,
        "rnf_slope_sign": slope_sign,
        "negative_share": [None if math.isnan(v) else float(v) for v in rns],
        "share_crossover_level": share_crossover,
        "negative_share_drop_realized_by_boundary": drop_realized,
        "boundary": boundary,
        "rpf_argmax": argmax,
        "weighted": views is not None,
    }
    candidates = {
        "windowed_cr_rule": cr_rule,
        "rpf_argmax": argmax,
        "share_crossover": share_crossover,
        "rnf_changepoint": _upward_changepoint(neg, w),
    }
    return SaturationReport(
        detected_level=argmax if fallback else detected,
        fallback=fallback,
        window=window,
        epsilon=epsilon,
        rise=rise,
        evidence=evidence,
        candidates=candidates,
    )


# --------------------------------------------------------------------------- report


def _segment_distances(a: np.ndarray, b: np.ndarray, boundary: int, p: float) -> dict:
    out = {"total": dtw(normalize(a), normalize(b), p).distance}
    for name, sl in ((f"levels_1_{boundary}", slice(0, boundary)), (f"levels_{boundary + 1}_{a.size}", slice(boundary, None))):
        try:
            out[name] = dtw(normalize(a[sl]), normalize(b[sl]), p).distance
        except DegenerateSeriesError:
            out[name] = None
    return out


def analysis_report(
    rpf,
    rnf,
    views: Sequence[float] | None = None,
    boundary: int = 10,
    **detect_kwargs,
) -> dict:
    """JSON-ready comparison of a positive and a negative response series."""
    pos, neg = _values(rpf), _values(rnf)
    report: dict = {"levels": list(range(1, pos.size + 1)), "normalization": MINMAX}
    try:
        pos_n, neg_n = normalize(pos), normalize(neg)
    except DegenerateSeriesError as exc:
        report["error"] = str(exc)
        return report
    gaps = per_level_distance(pos_n, neg_n).values
    report["normalized"] = {"positive": list(pos_n.values), "negative": list(neg_n.values)}
    report["per_level_gap"] = list(gaps)
    report["max_gap_level"] = int(np.argmax(gaps)) + 1
    report["correlation"] = similarity_correlation(pos_n, neg_n)
    report["euclidean"] = minkowski_distance(pos_n, neg_n, 2)
    report["dtw"] = {f"p{p}": _segment_distances(pos, neg, boundary, p) for p in (1, 2)}
    try:
        report["saturation"] = detect_saturation(pos, neg, views=views, boundary=boundary, **detect_kwargs).to_dict()
    except DegenerateSeriesError as exc:
        report["saturation"] = {"error": str(exc)}
    return report
