"""Decomposable interactive objects: elements, variant counts, level vectors.

An object is made of ``k`` elements, each offering ``variant_count``
intensity variants (level 1 is the most neutral). One impression of the
object is described by a :class:`LevelVector` holding one level per element.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

from .errors import ConfigurationError, InvalidLevelsError

DEFAULT_OBJECT_FILE = "object_6x5.json"


class LevelVector(tuple):
    """Immutable per-element intensity levels, e.g. ``LevelVector([3, 2, 2, 2, 2, 2])``."""

    def __new__(cls, levels: Iterable[int] = ()):
        values = []
        for value in levels:
            if isinstance(value, bool) or int(value) != value:
                raise InvalidLevelsError(f"level {value!r} is not an integer")
            values.append(int(value))
        return super().__new__(cls, values)

    def __repr__(self):
        return "{" + ",".join(str(v) for v in self) + "}"


@dataclass(frozen=True)
class ElementSpec:
    element_id: int
    name: str
    variant_count: int
    weight: float = 1.0
    description: str = ""

    def __post_init__(self):
        if int(self.variant_count) != self.variant_count or self.variant_count < 1:
            raise ConfigurationError(
                f"element {self.element_id}: variant_count must be a positive integer"
            )
        if not (math.isfinite(self.weight) and self.weight > 0):
            raise ConfigurationError(f"element {self.element_id}: weight must be finite and > 0")


@dataclass(frozen=True)
class ObjectSpec:
    object_id: str
    elements: tuple[ElementSpec, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))
        if not self.elements:
            raise ConfigurationError("an object needs at least one element")
        ids = [e.element_id for e in self.elements]
        if ids != list(range(1, len(ids) + 1)):
            raise ConfigurationError(f"element ids must be 1..k in order, got {ids}")

    @property
    def k(self) -> int:
        return len(self.elements)

    @property
    def max_level(self) -> int:
        """Largest level every element supports (the common ``Lmax``)."""
        return min(e.variant_count for e in self.elements)

    @property
    def weights(self) -> tuple[float, ...]:
        return tuple(e.weight for e in self.elements)

    @classmethod
    def uniform(cls, k: int, levels: int, object_id: str = "object") -> "ObjectSpec":
        return cls(object_id, tuple(ElementSpec(i, f"e{i}", levels) for i in range(1, k + 1)))

    @classmethod
    def from_dict(cls, data: dict) -> "ObjectSpec":
        try:
            elements = tuple(
                ElementSpec(
                    element_id=int(e["id"]),
                    name=str(e.get("name", f"e{e['id']}")),
                    variant_count=int(e["variant_count"]),
                    weight=float(e.get("weight", 1.0)),
                    description=str(e.get("description", "")),
                )
                for e in data["elements"]
            )
            return cls(str(data["object_id"]), elements)
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"malformed object configuration: {exc!r}") from exc

    def to_dict(self) -> dict:
        return {
            "object_id": self.object_id,
            "elements": [
                {
                    "id": e.element_id,
                    "name": e.name,
                    "variant_count": e.variant_count,
                    "weight": e.weight,
                    "description": e.description,
                }
                for e in self.elements
            ],
        }


def load_object_spec(path: str | Path) -> ObjectSpec:
    with open(path, encoding="utf-8") as fh:
        return ObjectSpec.from_dict(json.load(fh))


def default_object_spec() -> ObjectSpec:
    """The bundled six-element, five-level recommending widget."""
    text = resources.files("intensity_lab").joinpath("data").joinpath(DEFAULT_OBJECT_FILE).read_text()
    return ObjectSpec.from_dict(json.loads(text))


class Verdict(NamedTuple):
    valid: bool
    position: int | None = None  # 1-based offending element; None for arity errors
    reason: str = ""

    def __bool__(self):
        return self.valid


def validate_levels(spec: ObjectSpec, levels: Sequence[int]) -> Verdict:
    """Check a level vector against ``spec``; report the first offending position."""
    if len(levels) != spec.k:
        return Verdict(False, None, f"wrong length: expected {spec.k} levels, got {len(levels)}")
    for pos, (level, element) in enumerate(zip(levels, spec.elements), start=1):
        if isinstance(level, bool) or int(level) != level:
            return Verdict(False, pos, f"level {level!r} is not an integer")
        if not 1 <= level <= element.variant_count:
            return Verdict(
                False, pos, f"level {level} outside 1..{element.variant_count} ({element.name})"
            )
    return Verdict(True)


def check_levels(spec: ObjectSpec, levels: Sequence[int]) -> LevelVector:
    verdict = validate_levels(spec, levels)
    if not verdict:
        raise InvalidLevelsError(verdict.reason, verdict.position)
    return LevelVector(levels)


def aggregate_intensity(spec: ObjectSpec, levels: Sequence[int]) -> float:
    """Weighted sum of element levels for one impression."""
    lv = check_levels(spec, levels)
    return float(sum(level * w for level, w in zip(lv, spec.weights)))


def dominates(a: Sequence[int], b: Sequence[int]) -> bool:
    """True iff ``a`` is componentwise at least ``b``."""
    if len(a) != len(b):
        raise InvalidLevelsError(f"arity mismatch: {len(a)} vs {len(b)}")
    return all(x >= y for x, y in zip(a, b))
