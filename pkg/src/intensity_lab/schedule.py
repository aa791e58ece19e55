"""Intensity schedules: map a user's contact number to a level vector.

The increasing schedule starts with every element at level 1 and, with each
contact, raises the next element (round robin from the left) by one level
until all elements reach the top level. For six elements with five levels
that is 25 steps. The decreasing schedule mirrors it from the top.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from enum import Enum
from importlib import resources

from .errors import ConfigurationError
from .objects import LevelVector, ObjectSpec


class PolicyKind(str, Enum):
    FLAT = "flat"
    INCREASING = "increasing"
    DECREASING = "decreasing"
    PULSE = "pulse"


@dataclass(frozen=True)
class SchedulePolicy:
    kind: PolicyKind
    flat_level: int = 1
    pulse_period: int = 1
    pulse_low: int = 1
    pulse_high: int = 1
    clamp: bool = True

    def __post_init__(self):
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        if self.kind is PolicyKind.PULSE:
            if self.pulse_period < 1:
                raise ConfigurationError("pulse_period must be >= 1")
            if self.pulse_low > self.pulse_high:
                raise ConfigurationError("pulse_low must not exceed pulse_high")

    @classmethod
    def flat(cls, level: int) -> "SchedulePolicy":
        return cls(PolicyKind.FLAT, flat_level=level)

    @classmethod
    def increasing(cls, clamp: bool = True) -> "SchedulePolicy":
        return cls(PolicyKind.INCREASING, clamp=clamp)

    @classmethod
    def decreasing(cls, clamp: bool = True) -> "SchedulePolicy":
        return cls(PolicyKind.DECREASING, clamp=clamp)

    @classmethod
    def pulse(cls, low: int, high: int, period: int = 1) -> "SchedulePolicy":
        return cls(PolicyKind.PULSE, pulse_low=low, pulse_high=high, pulse_period=period)

    @classmethod
    def from_dict(cls, data: dict) -> "SchedulePolicy":
        data = dict(data)
        try:
            kind = PolicyKind(str(data.pop("kind")).lower())
        except (KeyError, ValueError) as exc:
            raise ConfigurationError(f"policy needs a kind among {[k.value for k in PolicyKind]}") from exc
        allowed = {"flat_level", "pulse_period", "pulse_low", "pulse_high", "clamp"}
        unknown = set(data) - allowed
        if unknown:
            raise ConfigurationError(f"unknown policy fields: {sorted(unknown)}")
        return cls(kind, **data)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["kind"] = self.kind.value
        return out

    def validate(self, spec: ObjectSpec) -> None:
        top = spec.max_level
        if self.kind is PolicyKind.FLAT and not 1 <= self.flat_level <= top:
            raise ConfigurationError(f"flat_level {self.flat_level} outside 1..{top}")
        if self.kind is PolicyKind.PULSE and not (1 <= self.pulse_low and self.pulse_high <= top):
            raise ConfigurationError(f"pulse levels must lie within 1..{top}")


@dataclass(frozen=True)
class ScheduleStep:
    contact: int
    levels: LevelVector


def ramp_length(spec: ObjectSpec) -> int:
    """Number of steps of the increasing/decreasing ramp: ``k*(Lmax-1)+1``."""
    return spec.k * (spec.max_level - 1) + 1


def _increasing_step(spec: ObjectSpec, step: int) -> LevelVector:
    k = spec.k
    raises = step - 2  # index of the last raise applied; -1 at step 1
    # element j (0-based) has been raised once for every r in 0..raises with r % k == j
    return LevelVector(1 + (raises - j) // k + 1 if raises >= j else 1 for j in range(k))


def schedule_length(policy: SchedulePolicy, spec: ObjectSpec) -> int:
    if policy.kind is PolicyKind.FLAT:
        return 1
    if policy.kind is PolicyKind.PULSE:
        return 2 * policy.pulse_period
    return ramp_length(spec)


def step_index(policy: SchedulePolicy, spec: ObjectSpec, contact: int) -> int:
    """1-based position in :func:`full_schedule` served at ``contact``."""
    if contact < 1:
        raise ConfigurationError(f"contact must be >= 1, got {contact}")
    n = schedule_length(policy, spec)
    if policy.kind is PolicyKind.FLAT:
        return 1
    if policy.kind is PolicyKind.PULSE or not policy.clamp:
        return (contact - 1) % n + 1
    return min(contact, n)


def level_vector_at(policy: SchedulePolicy, spec: ObjectSpec, contact: int) -> LevelVector:
    policy.validate(spec)
    step = step_index(policy, spec, contact)
    if policy.kind is PolicyKind.FLAT:
        return LevelVector([policy.flat_level] * spec.k)
    if policy.kind is PolicyKind.PULSE:
        level = policy.pulse_low if step <= policy.pulse_period else policy.pulse_high
        return LevelVector([level] * spec.k)
    up = _increasing_step(spec, step)
    if policy.kind is PolicyKind.INCREASING:
        return up
    top = spec.max_level
    return LevelVector(top + 1 - v for v in up)


def full_schedule(policy: SchedulePolicy, spec: ObjectSpec) -> list[ScheduleStep]:
    return [
        ScheduleStep(c, level_vector_at(policy, spec, c))
        for c in range(1, schedule_length(policy, spec) + 1)
    ]


def golden_schedules() -> dict[str, list[LevelVector]]:
    """The two 25-step listings for the bundled 6x5 object, stored verbatim."""
    text = resources.files("intensity_lab").joinpath("data").joinpath("schedules_6x5.json").read_text()
    return {name: [LevelVector(v) for v in rows] for name, rows in json.loads(text).items()}
