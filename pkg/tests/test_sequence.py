import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from intensity_lab.errors import DegenerateSeriesError
from intensity_lab.sequence import (
    ResponseSeries,
    analysis_report,
    detect_saturation,
    dtw,
    minkowski_distance,
    normalize,
    per_level_distance,
    similarity_correlation,
)


def brute_force_dtw(a, b, p=1.0):
    """Minimum cost over every monotone warping path, by exhaustive enumeration."""
    n, m = len(a), len(b)
    best = math.inf

    def walk(i, j, acc):
        nonlocal best
        acc += abs(a[i] - b[j]) ** p
        if i == n - 1 and j == m - 1:
            best = min(best, acc)
            return
        if i + 1 < n:
            walk(i + 1, j, acc)
        if j + 1 < m:
            walk(i, j + 1, acc)
        if i + 1 < n and j + 1 < m:
            walk(i + 1, j + 1, acc)

    walk(0, 0, 0.0)
    return best


def reference_dtw(a, b):
    """Textbook O(nm) recurrence, used for series too long to enumerate."""
    n, m = len(a), len(b)
    d = np.full((n + 1, m + 1), np.inf)
    d[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            d[i, j] = abs(a[i - 1] - b[j - 1]) + min(d[i - 1, j], d[i, j - 1], d[i - 1, j - 1])
    return d[n, m]


# --------------------------------------------------------------------------- normalization


def test_minmax_examples():
    assert list(normalize([1, 3, 5]).values) == [0.0, 0.5, 1.0]
    assert list(normalize([0.0, 0.25, 1.0]).values) == [0.0, 0.25, 1.0]


def test_minmax_constant_is_degenerate():
    with pytest.raises(DegenerateSeriesError):
        normalize([2.0, 2.0, 2.0])


def test_zscore_matches_scipy():
    x = [1.0, 4.0, 2.0, 8.0]
    z = normalize(x, "zscore").values
    assert np.allclose(z, stats.zscore(x, ddof=1)) or np.allclose(z, stats.zscore(x))


def test_table1_minmax_extremes(inc_table):
    norm = normalize([r.rpf for r in inc_table]).values
    assert int(np.argmin(norm)) + 1 == 1
    assert int(np.argmax(norm)) + 1 == 8


@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=40).filter(lambda v: max(v) - min(v) > 1e-3))
def test_minmax_range(values):
    out = np.asarray(normalize(values).values)
    assert out.min() == 0.0 and out.max() == 1.0
    assert np.all((out >= 0) & (out <= 1))


def test_series_validation():
    with pytest.raises(ValueError):
        ResponseSeries("x", [])
    with pytest.raises(ValueError):
        ResponseSeries("x", [1.0, float("nan")])


# --------------------------------------------------------------------------- distances


def test_minkowski_examples():
    assert minkowski_distance([0, 0], [3, 4], 2) == 5.0
    assert minkowski_distance([1, 2, 3], [2, 3, 5], 1) == 4.0
    assert minkowski_distance([1, 2, 3], [1, 2, 3]) == 0.0
    with pytest.raises(ValueError):
        minkowski_distance([1, 2], [1, 2, 3])


def test_minkowski_triangle_inequality_random_triples():
    rng = random.Random(7)
    for _ in range(1500):
        n = rng.randint(1, 10)
        p = rng.choice([1, 1.5, 2, 3, 7])
        a, b, c = ([rng.uniform(-5, 5) for _ in range(n)] for _ in range(3))
        assert minkowski_distance(a, c, p) <= minkowski_distance(a, b, p) + minkowski_distance(b, c, p) + 1e-9


def test_per_level_distance_examples():
    assert list(per_level_distance([0, 1], [1, 0]).values) == [1.0, 1.0]
    assert list(per_level_distance([0.2, 0.4], [0.2, 0.4]).values) == [0.0, 0.0]


def test_correlation_examples():
    a = [0.1, 0.5, 0.2, 0.9]
    assert similarity_correlation(a, a) == pytest.approx(1.0)
    assert similarity_correlation(a, [-v for v in a]) == pytest.approx(-1.0)
    with pytest.raises(DegenerateSeriesError):
        similarity_correlation([1, 1, 1], [1, 2, 3])


# --------------------------------------------------------------------------- dtw


def test_dtw_identity_has_diagonal_path():
    result = dtw([0.3, 0.1, 0.7], [0.3, 0.1, 0.7])
    assert result.distance == 0.0
    assert result.path == [(1, 1), (2, 2), (3, 3)]


def test_dtw_small_instance_matches_enumeration():
    assert dtw([0, 1], [0, 0, 1]).distance == 0.0 == brute_force_dtw([0, 1], [0, 0, 1])


def test_dtw_brute_force_equivalence_1000_cases():
    rng = random.Random(2024)
    for case in range(1200):
        a = [rng.choice([rng.uniform(0, 1), rng.randint(0, 3)]) for _ in range(rng.randint(1, 6))]
        b = [rng.choice([rng.uniform(0, 1), rng.randint(0, 3)]) for _ in range(rng.randint(1, 6))]
        p = 1.0 if case % 2 else 2.0
        result = dtw(a, b, p)
        assert result.distance == pytest.approx(brute_force_dtw(a, b, p), abs=1e-12)


@settings(max_examples=200)
@given(
    st.lists(st.floats(-10, 10), min_size=1, max_size=8),
    st.lists(st.floats(-10, 10), min_size=1, max_size=8),
)
def test_dtw_path_properties(a, b):
    result = dtw(a, b)
    path = result.path
    assert path[0] == (1, 1) and path[-1] == (len(a), len(b))
    for (i0, j0), (i1, j1) in zip(path, path[1:]):
        assert (i1 - i0, j1 - j0) in {(1, 0), (0, 1), (1, 1)}
    cost = sum(result.cost_matrix[i - 1, j - 1] for i, j in path)
    assert result.distance == pytest.approx(cost, abs=1e-9)
    assert result.distance >= 0
    assert dtw(b, a).distance == pytest.approx(result.distance, abs=1e-9)
    assert dtw(a, a).distance == 0.0


@given(st.integers(1, 10).flatmap(lambda n: st.tuples(
    st.lists(st.floats(-10, 10), min_size=n, max_size=n), st.lists(st.floats(-10, 10), min_size=n, max_size=n))))
def test_dtw_at_most_lockstep(pair):
    a, b = pair
    assert dtw(a, b).distance <= sum(abs(x - y) for x, y in zip(a, b)) + 1e-9


def test_dtw_matches_reference_recurrence_on_tables(inc_table, dec_table):
    for table in (inc_table, dec_table):
        a = normalize([r.rpf for r in table]).values
        b = normalize([r.rnf for r in table]).values
        assert dtw(a, b).distance == pytest.approx(reference_dtw(a, b), abs=1e-12)


def test_dtw_prefers_diagonal_on_ties():
    assert dtw([0, 0], [0, 0]).path == [(1, 1), (2, 2)]


# --------------------------------------------------------------------------- analysis report


@pytest.mark.parametrize(
    "fixture, corr, gap_level, dtw_total, dtw_early, dtw_late",
    [
        ("inc_table", 0.32800886573750, 8, 4.28, 5.25, 3.54),
        ("dec_table", 0.12312876184222, 9, 4.37, 5.64, 3.02),
    ],
)
def test_analysis_report_frozen_values(request, fixture, corr, gap_level, dtw_total, dtw_early, dtw_late):
    table = request.getfixturevalue(fixture)
    rpf, rnf = [r.rpf for r in table], [r.rnf for r in table]
    report = analysis_report(rpf, rnf)
    # scipy's Pearson coefficient is the independent oracle for the frozen value
    oracle = stats.pearsonr(normalize(rpf).values, normalize(rnf).values)[0]
    assert report["correlation"] == pytest.approx(oracle, abs=1e-12)
    assert report["correlation"] == pytest.approx(corr, abs=1e-12)
    assert report["max_gap_level"] == gap_level
    d = report["dtw"]["p1"]
    assert [round(d["total"], 2), round(d["levels_1_10"], 2), round(d["levels_11_25"], 2)] == [
        dtw_total, dtw_early, dtw_late
    ]


# --------------------------------------------------------------------------- saturation


def test_detector_table1_defaults(inc_table):
    rpf, rnf = [r.rpf for r in inc_table], [r.rnf for r in inc_table]
    report = detect_saturation(rpf, rnf)
    assert 10 <= report.detected_level <= 12 and not report.fallback
    weighted = detect_saturation(rpf, rnf, views=[r.views for r in inc_table])
    assert weighted.detected_level == 10
    assert weighted.candidates["rpf_argmax"] == 8
    assert weighted.evidence["share_crossover_level"] == 11


def test_detector_table2_negative_share_decline(dec_table):
    report = detect_saturation([r.rpf for r in dec_table], [r.rnf for r in dec_table],
                               views=[r.views for r in dec_table])
    shares = report.evidence["negative_share"]
    assert report.evidence["negative_share_drop_realized_by_boundary"] >= 0.8
    assert shares[0] > shares[9]


def test_detector_increasing_rpf_flat_zero_rnf_falls_back():
    n = 15
    report = detect_saturation([0.01 * (i + 1) for i in range(n)], [0.0] * n)
    assert report.fallback and report.detected_level == n


def test_detector_flat_rpf_rising_rnf_detects_level_one():
    n = 15
    report = detect_saturation([0.03] * n, [float(i + 1) for i in range(n)])
    assert report.detected_level == 1 and not report.fallback


def test_detector_too_short():
    with pytest.raises(DegenerateSeriesError):
        detect_saturation([0.1, 0.2, 0.3], [0.1, 0.1, 0.1], window=3)


@given(st.floats(0.01, 100), st.floats(0.01, 100), st.integers(0, 2**32 - 1))
def test_detector_invariant_under_positive_scaling(scale_pos, scale_neg, seed):
    rng = np.random.default_rng(seed)
    rpf = rng.uniform(0.01, 0.06, 20)
    rnf = rng.uniform(0.001, 0.01, 20)
    base = detect_saturation(rpf, rnf)
    scaled = detect_saturation(rpf * scale_pos, rnf * scale_neg)
    assert scaled.detected_level == base.detected_level
    assert scaled.fallback == base.fallback
