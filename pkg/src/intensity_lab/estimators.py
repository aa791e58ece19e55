"""scikit-learn style wrappers around the response analytics.

* :class:`ResponseProfile` turns per-level counts (or raw events) into the
  per-level factor matrix.
* :class:`SaturationDetector` locates the level past which conversion stops
  improving while dismissals keep climbing.
* :class:`BehaviorSimulator` calibrates a user behavior model from a level
  table and samples synthetic populations from it.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .metrics import CR_MODES, ROUNDED, aggregate_events, aggregate_group, build_level_table, dense_counts
from .schedule import SchedulePolicy
from .sequence import detect_saturation
from .simulator import SimConfig, calibrate_from_table, simulate_population
from .validation import check_consistent_length, check_counts, check_random_state, check_series

FACTOR_COLUMNS = ("rpf", "rnf", "rnr", "crp", "crn", "rps", "rns")


class ResponseProfile(TransformerMixin, BaseEstimator):
    """Per-level response factors.

    Parameters
    ----------
    cr_mode : {"rounded", "raw"}
        Which change rate to expose in the ``crp``/``crn`` columns of
        :meth:`transform`. Both are always kept on ``table_``.
    group : str, optional
        Group to keep when fitting on an event stream that spans groups.

    Attributes
    ----------
    table_ : list of LevelStats
    factors_ : ndarray of shape (n_levels, 7)
        Fitted factor matrix, columns as in ``FACTOR_COLUMNS``.
    totals_ : GroupTotals
    n_levels_ : int
    """

    def __init__(self, cr_mode: str = ROUNDED, group: str | None = None):
        self.cr_mode = cr_mode
        self.group = group

    def fit(self, X, y=None):
        if self.cr_mode not in CR_MODES:
            raise ValueError(f"cr_mode must be one of {CR_MODES}")
        counts = check_counts(X, group=self.group)
        self.table_ = build_level_table(counts)
        self.totals_ = aggregate_group(counts)
        self.n_levels_ = len(self.table_)
        self.factors_ = self._matrix(self.table_)
        return self

    def transform(self, X):
        """Factor matrix of shape ``(n_levels, 7)`` for ``X``; undefined cells are NaN."""
        check_is_fitted(self, "table_")
        return self._matrix(build_level_table(check_counts(X, group=self.group)))

    def _matrix(self, table) -> np.ndarray:
        suffix = "" if self.cr_mode == ROUNDED else "_raw"
        out = np.full((len(table), len(FACTOR_COLUMNS)), np.nan)
        for i, row in enumerate(table):
            for j, col in enumerate(FACTOR_COLUMNS):
                value = getattr(row, col + suffix if col in ("crp", "crn") else col)
                if value is not None:
                    out[i, j] = value
        return out

    def get_feature_names_out(self, input_features=None):
        return np.asarray(FACTOR_COLUMNS, dtype=object)


class SaturationDetector(BaseEstimator):
    """Locate the saturation level of a response table.

    Parameters
    ----------
    window : int
        Levels pooled on each side of a candidate level.
    epsilon : float
        Relative conversion gain at or below which conversion counts as flat.
    rise : float
        Relative increase of the negative factor required past the level.
    boundary : int
        Level used to split early and late segments in the evidence.
    use_views : bool
        Weight the pooled means by views when counts are available.
    """

    def __init__(self, window: int = 5, epsilon: float = 0.02, rise: float = 0.4,
                 boundary: int = 10, use_views: bool = True):
        self.window = window
        self.epsilon = epsilon
        self.rise = rise
        self.boundary = boundary
        self.use_views = use_views

    def fit(self, X, y=None, sample_weight=None):
        """Fit on count data or on an ``(n_levels, 2)`` array of ``rpf, rnf``.

        ``sample_weight`` (per-level views) is only used with factor arrays.
        """
        arr = None if not isinstance(X, np.ndarray) else X
        if arr is not None and arr.ndim == 2 and arr.shape[1] == 2:
            rpf, rnf = check_series(arr[:, 0], "rpf"), check_series(arr[:, 1], "rnf")
            views = None if sample_weight is None else check_series(sample_weight, "sample_weight")
            check_consistent_length(rpf, views)
        else:
            table = build_level_table(check_counts(X))
            if any(r.rpf is None for r in table):
                raise ValueError("every level needs at least one view")
            rpf = np.array([r.rpf for r in table])
            rnf = np.array([r.rnf for r in table])
            views = np.array([r.views for r in table], dtype=float)
        if not self.use_views:
            views = None
        self.report_ = detect_saturation(
            rpf, rnf, window=self.window, epsilon=self.epsilon, rise=self.rise,
            views=views, boundary=self.boundary,
        )
        self.detected_level_ = self.report_.detected_level
        self.fallback_ = self.report_.fallback
        self.n_levels_ = len(rpf)
        return self

    def predict(self, X=None):
        """1 for levels beyond the saturation point, 0 otherwise.

        ``X`` may be an array of level indices; by default all fitted levels.
        """
        check_is_fitted(self, "report_")
        levels = np.arange(1, self.n_levels_ + 1) if X is None else np.asarray(X).ravel()
        return (levels > self.detected_level_).astype(int)


class BehaviorSimulator(BaseEstimator):
    """Sample synthetic populations from a behavior model fitted to a level table.

    Parameters
    ----------
    policy : {"increasing", "decreasing", "flat"}
        Schedule served to simulated users.
    flat_level : int
        Level used by the flat policy.
    dismissal_terminates : bool
        Whether a dismissal ends a user's contact sequence.
    max_contacts : int, optional
        Cap on contacts per user; defaults to the number of calibrated levels.
    random_state : int or None
    """

    def __init__(self, policy: str = "increasing", flat_level: int = 1,
                 dismissal_terminates: bool = True, max_contacts: int | None = None,
                 random_state: int | None = 0):
        self.policy = policy
        self.flat_level = flat_level
        self.dismissal_terminates = dismissal_terminates
        self.max_contacts = max_contacts
        self.random_state = random_state

    def fit(self, X, y=None):
        self.model_ = calibrate_from_table(check_counts(X), source="fit", max_contacts=self.max_contacts)
        self.seed_ = check_random_state(self.random_state)
        return self

    def _config(self, n_users: int) -> SimConfig:
        policy = SchedulePolicy.from_dict(
            {"kind": self.policy, **({"flat_level": self.flat_level} if self.policy == "flat" else {})}
        )
        return SimConfig(n_users, self.seed_, {"sim": 1.0}, {"sim": policy}, {"sim": self.model_},
                         dismissal_terminates=self.dismissal_terminates)

    def simulate(self, n_users: int, clock_start: float = 0.0):
        """Event stream for ``n_users`` users."""
        check_is_fitted(self, "model_")
        return simulate_population(self._config(n_users), clock_start)

    def sample(self, n_users: int):
        """Per-level table of a simulated population."""
        counts = aggregate_events(self.simulate(n_users)).get("sim", {})
        return build_level_table(dense_counts(counts))
