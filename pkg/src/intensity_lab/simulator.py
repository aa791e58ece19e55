"""Synthetic user populations calibrated from per-level response tables.

Each user is assigned a group, then sees the widget at contacts 1, 2, ...
At every view they click with ``p+(L)``, dismiss with ``p-(L)`` or do
nothing (mutually exclusive). A dismissal ends the user's sequence unless
``dismissal_terminates`` is off; otherwise the user returns for the next
contact with probability ``rho(C)``.

Every user draws from an independent substream derived only from
``(seed, user index)``, so output does not depend on execution order.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import IO, Iterator, Mapping, Sequence

import numpy as np

from .errors import CalibrationError, ConfigurationError
from .metrics import (
    ExposureCounts,
    ExposureEvent,
    LevelStats,
    aggregate_events,
    build_level_table,
    dense_counts,
    read_counts_csv,
    read_group_csv,
    write_events,
)
from .objects import ObjectSpec, default_object_spec, load_object_spec
from .schedule import PolicyKind, SchedulePolicy, level_vector_at, step_index
from .sequence import analysis_report

RNG_NAME = "numpy.PCG64+SeedSequence(seed, spawn_key=(user_index,))"


def _as_probs(values, name: str) -> tuple[float, ...]:
    probs = tuple(float(v) for v in values)
    if any(not 0.0 <= p <= 1.0 for p in probs):
        raise ConfigurationError(f"{name} must lie in [0, 1]")
    return probs


@dataclass(frozen=True)
class BehaviorModel:
    click_prob: tuple[float, ...]
    dismiss_prob: tuple[float, ...]
    retention_prob: tuple[float, ...] = ()
    max_contacts: int = 25
    source: str = ""

    def __post_init__(self):
        click = _as_probs(self.click_prob, "click_prob")
        dismiss = _as_probs(self.dismiss_prob, "dismiss_prob")
        object.__setattr__(self, "click_prob", click)
        object.__setattr__(self, "dismiss_prob", dismiss)
        object.__setattr__(self, "retention_prob", _as_probs(self.retention_prob, "retention_prob"))
        if not click or len(click) != len(dismiss):
            raise ConfigurationError("click_prob and dismiss_prob need the same non-zero length")
        if any(c + d > 1.0 + 1e-12 for c, d in zip(click, dismiss)):
            raise ConfigurationError("click_prob + dismiss_prob exceeds 1 at some level")
        if self.max_contacts < 1:
            raise ConfigurationError("max_contacts must be >= 1")

    # levels and contacts past the calibrated range reuse the last value
    def click(self, level: int) -> float:
        return self.click_prob[min(level, len(self.click_prob)) - 1]

    def dismiss(self, level: int) -> float:
        return self.dismiss_prob[min(level, len(self.dismiss_prob)) - 1]

    def retention(self, contact: int) -> float:
        if not self.retention_prob:
            return 0.0
        return self.retention_prob[min(contact, len(self.retention_prob)) - 1]

    def to_dict(self) -> dict:
        return {
            "click_prob": list(self.click_prob),
            "dismiss_prob": list(self.dismiss_prob),
            "retention_prob": list(self.retention_prob),
            "max_contacts": self.max_contacts,
            "source": self.source,
        }


def calibrate_from_table(table: Sequence[ExposureCounts | LevelStats], source: str = "", max_contacts: int | None = None) -> BehaviorModel:
    """``p+(L) = R+/V``, ``p-(L) = R-/V`` and ``rho(C) = V(C+1)/V(C)``."""
    rows = sorted(table, key=lambda r: r.level_index)
    if not rows:
        raise CalibrationError("empty table")
    views = [r.views for r in rows]
    if any(v <= 0 for v in views):
        raise CalibrationError("every level needs at least one view")
    if any(b > a for a, b in zip(views, views[1:])):
        raise CalibrationError("view counts must be non-increasing across levels")
    return BehaviorModel(
        click_prob=tuple(r.positives / r.views for r in rows),
        dismiss_prob=tuple(r.negatives / r.views for r in rows),
        retention_prob=tuple(b / a for a, b in zip(views, views[1:])),
        max_contacts=len(rows) if max_contacts is None else max_contacts,
        source=source,
    )


def _resolve(path: str, base_dir: Path | None) -> Path:
    """Resolve a data path against the config directory, then the bundled data."""
    candidate = Path(path)
    if not candidate.is_absolute() and base_dir is not None:
        candidate = base_dir / candidate
    if candidate.exists():
        return candidate
    bundled = resources.files("intensity_lab").joinpath("data").joinpath(Path(path).name)
    if bundled.is_file():
        return Path(str(bundled))
    raise ConfigurationError(f"file not found: {path}")


def behavior_from_dict(data: Mapping, base_dir: Path | None = None) -> BehaviorModel:
    if "table" in data:
        path = _resolve(data["table"], base_dir)
        return calibrate_from_table(read_counts_csv(path), source=Path(data["table"]).name,
                                    max_contacts=data.get("max_contacts"))

    def seq(key, default=()):
        value = data.get(key, default)
        return (value,) if isinstance(value, (int, float)) else tuple(value)

    if "totals" in data:
        # flat groups: one aggregate rate for every level
        totals = read_group_csv(_resolve(data["totals"], base_dir))
        if data.get("group") not in totals:
            raise ConfigurationError(f"group {data.get('group')!r} not in {data['totals']}")
        row = totals[data["group"]]
        if row.views <= 0:
            raise CalibrationError(f"group {data['group']} has no views")
        data = {**data, "click_prob": row.positives / row.views, "dismiss_prob": row.negatives / row.views,
                "source": f"{Path(data['totals']).name}:{data['group']}"}
    retention = seq("retention_prob")
    if "retention_from" in data:
        retention = calibrate_from_table(read_counts_csv(_resolve(data["retention_from"], base_dir))).retention_prob
    try:
        return BehaviorModel(
            click_prob=seq("click_prob"),
            dismiss_prob=seq("dismiss_prob", 0.0),
            retention_prob=retention,
            max_contacts=int(data.get("max_contacts", 25)),
            source=str(data.get("source", "")),
        )
    except TypeError as exc:
        raise ConfigurationError(f"malformed behavior block: {exc}") from exc


@dataclass
class SimConfig:
    n_users: int
    seed: int
    group_weights: dict[str, float]
    policies: dict[str, SchedulePolicy]
    behaviors: dict[str, BehaviorModel]
    dismissal_terminates: bool = True
    object_spec: ObjectSpec = field(default_factory=default_object_spec)

    def __post_init__(self):
        if self.n_users < 0:
            raise ConfigurationError("n_users must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer")
        if any(w < 0 for w in self.group_weights.values()) or sum(self.group_weights.values()) <= 0:
            raise ConfigurationError("group weights must be non-negative with a positive sum")
        for group in self.group_weights:
            if group not in self.policies or group not in self.behaviors:
                raise ConfigurationError(f"group {group} needs a policy and a behavior model")
            self.policies[group].validate(self.object_spec)

    @classmethod
    def from_dict(cls, data: Mapping, base_dir: Path | None = None) -> "SimConfig":
        try:
            groups = data["groups"]
            spec = (
                load_object_spec(_resolve(data["object"], base_dir)) if data.get("object") else default_object_spec()
            )
            return cls(
                n_users=int(data["n_users"]),
                seed=int(data.get("seed", 0)),
                group_weights={g: float(v.get("weight", 1.0)) for g, v in groups.items()},
                policies={g: SchedulePolicy.from_dict(v["policy"]) for g, v in groups.items()},
                behaviors={g: behavior_from_dict(v["behavior"], base_dir) for g, v in groups.items()},
                dismissal_terminates=bool(data.get("dismissal_terminates", True)),
                object_spec=spec,
            )
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"malformed simulation config: missing {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "SimConfig":
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh), base_dir=path.parent)

    def to_dict(self) -> dict:
        return {
            "n_users": self.n_users,
            "seed": self.seed,
            "dismissal_terminates": self.dismissal_terminates,
            "object": self.object_spec.to_dict(),
            "groups": {
                g: {
                    "weight": self.group_weights[g],
                    "policy": self.policies[g].to_dict(),
                    "behavior": self.behaviors[g].to_dict(),
                }
                for g in sorted(self.group_weights)
            },
        }

    def digest(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()


def user_rng(seed: int, user_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(user_index,))))


def simulate_population(config: SimConfig, clock_start: float = 0.0) -> Iterator[ExposureEvent]:
    """Yield events user by user, in user-index order."""
    groups = sorted(config.group_weights)
    weights = np.array([config.group_weights[g] for g in groups], dtype=float)
    cumulative = np.cumsum(weights / weights.sum())
    cumulative[-1] = 1.0
    spec = config.object_spec
    # per-group lookup tables so the inner loop avoids recomputing schedules
    plans = {}
    for g in groups:
        policy, model = config.policies[g], config.behaviors[g]
        contacts = range(1, model.max_contacts + 1)
        plans[g] = [
            (c, step_index(policy, spec, c), level_vector_at(policy, spec, c)) for c in contacts
        ]

    for i in range(config.n_users):
        u = user_rng(config.seed, i).random(1 + 2 * max(m.max_contacts for m in config.behaviors.values()))
        group = groups[int(np.searchsorted(cumulative, u[0], side="right"))]
        model = config.behaviors[group]
        user_id = f"u{i:07d}"
        base_ts = clock_start + i
        for c, level_index, levels in plans[group]:
            ts = round(base_ts + c / 1000.0, 3)
            yield ExposureEvent(ts, user_id, group, c, level_index, levels, "view")
            draw = u[2 * c - 1]
            p_click = model.click(level_index)
            dismissed = False
            if draw < p_click:
                yield ExposureEvent(ts, user_id, group, c, level_index, levels, "positive")
            elif draw < p_click + model.dismiss(level_index):
                yield ExposureEvent(ts, user_id, group, c, level_index, levels, "negative")
                dismissed = True
            if dismissed and config.dismissal_terminates:
                break
            if u[2 * c] >= model.retention(c):
                break


def log_header(config: SimConfig) -> dict:
    return {"sim_config_digest": config.digest(), "seed": config.seed, "rng": RNG_NAME}


def write_event_log(config: SimConfig, fh: IO[str], clock_start: float = 0.0) -> int:
    return write_events(simulate_population(config, clock_start), fh, header=log_header(config))


@dataclass
class ExperimentResult:
    tables: dict[str, list[LevelStats]]
    reports: dict[str, dict]
    header: dict


def run_experiment(config: SimConfig, clock_start: float = 0.0) -> ExperimentResult:
    """Simulate, aggregate per group and analyze the ramped (increasing/decreasing) groups."""
    counts = aggregate_events(simulate_population(config, clock_start))
    tables = {g: build_level_table(dense_counts(counts.get(g, {}))) for g in sorted(config.group_weights)}
    reports = {}
    for g, table in tables.items():
        if config.policies[g].kind not in (PolicyKind.INCREASING, PolicyKind.DECREASING) or not table:
            continue
        if any(r.rpf is None for r in table):
            continue
        reports[g] = analysis_report(
            [r.rpf for r in table], [r.rnf for r in table], views=[r.views for r in table]
        )
    return ExperimentResult(tables, reports, log_header(config))


def five_group_config(n_users: int, seed: int = 0, weights: Mapping[str, float] | None = None) -> SimConfig:
    """Five groups as in the field experiment: flat min/med/max, increasing, decreasing.

    The flat groups use their aggregate click/dismiss rates and borrow the
    increasing group's retention curve. ``weights`` may select a subset.
    """
    base = SimConfig.load(Path(str(resources.files("intensity_lab").joinpath("data").joinpath("sim_five_groups.json"))))
    weights = dict(weights) if weights is not None else base.group_weights
    return SimConfig(
        n_users, seed, weights,
        {g: base.policies[g] for g in weights}, {g: base.behaviors[g] for g in weights},
        base.dismissal_terminates, base.object_spec,
    )
