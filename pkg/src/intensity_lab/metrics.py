"""Per-level response accounting and the factors derived from it.

Counts are tallied per intensity level ``L`` (the position in the schedule):
views ``V``, positive responses ``R+`` (clicks) and negative responses ``R-``
(attempts to dismiss the widget). From them:

* ``rpf = R+/V`` and ``rnf = R-/V`` -- response factors,
* ``rnr = R-/R+`` -- negative response rate,
* ``crp``/``crn`` -- change of ``rpf``/``rnf`` against the previous level,
* ``rps``/``rns`` -- share of positive/negative responses among all responses.

Change rates come in two flavours. ``"rounded"`` first rounds each factor
half-up to two decimals of a percent, which is how published tables of this
kind are usually produced; ``"raw"`` keeps full precision. Both are kept.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_UP, Decimal, localcontext
from fractions import Fraction
from pathlib import Path
from typing import IO, Iterable, Iterator, Mapping, NamedTuple, Sequence

from .errors import FixtureParseError, UndefinedRateError

RAW = "raw"
ROUNDED = "rounded"
CR_MODES = (RAW, ROUNDED)

EVENT_KINDS = ("view", "positive", "negative")
GROUPS = ("G1", "G2", "G3", "G4", "G5")

_PCT = Decimal("0.01")


# --------------------------------------------------------------------------- rounding


def _to_decimal(value) -> Decimal:
    if isinstance(value, Decimal):
        return value
    if isinstance(value, (int, Fraction)):
        frac = Fraction(value)
        with localcontext() as ctx:
            ctx.prec = 50
            return Decimal(frac.numerator) / Decimal(frac.denominator)
    # shortest repr keeps 0.02305 as 0.02305 rather than its binary neighbour
    return Decimal(repr(float(value)))


def round_half_up(value, places: int) -> Decimal:
    return _to_decimal(value).quantize(Decimal(1).scaleb(-places), rounding=ROUND_HALF_UP)


def percent2(fraction) -> Decimal:
    """Fraction -> percent rounded half-up to two decimals (``0.023061 -> 2.31``)."""
    return round_half_up(_to_decimal(fraction) * 100, 2)


def format_percent(fraction) -> str:
    return "" if fraction is None else f"{percent2(fraction)}%"


# --------------------------------------------------------------------------- records


@dataclass(frozen=True)
class ExposureEvent:
    ts: float
    user_id: str
    group: str
    contact: int
    level_index: int
    levels: tuple[int, ...]
    kind: str
    interaction_type: int = 1
    event_id: str | None = None

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"kind must be one of {EVENT_KINDS}, got {self.kind!r}")
        if self.contact < 1 or self.level_index < 1:
            raise ValueError("contact and level_index must be >= 1")
        object.__setattr__(self, "levels", tuple(int(v) for v in self.levels))

    @classmethod
    def from_dict(cls, data: Mapping) -> "ExposureEvent":
        return cls(
            ts=float(data["ts"]),
            user_id=str(data["user_id"]),
            group=str(data["group"]),
            contact=int(data["contact"]),
            level_index=int(data["level_index"]),
            levels=tuple(data.get("levels") or ()),
            kind=str(data["kind"]),
            interaction_type=int(data.get("interaction_type", 1)),
            event_id=data.get("event_id"),
        )

    def to_dict(self) -> dict:
        out = {
            "ts": self.ts,
            "user_id": self.user_id,
            "group": self.group,
            "contact": self.contact,
            "level_index": self.level_index,
            "levels": list(self.levels),
            "kind": self.kind,
            "interaction_type": self.interaction_type,
        }
        if self.event_id is not None:
            out["event_id"] = self.event_id
        return out


@dataclass(frozen=True)
class ExposureCounts:
    level_index: int
    levels: tuple[int, ...] = ()
    views: int = 0
    positives: int = 0
    negatives: int = 0

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))
        if min(self.views, self.positives, self.negatives) < 0:
            raise ValueError("counts must be non-negative")

    def __add__(self, other: "ExposureCounts") -> "ExposureCounts":
        if other.level_index != self.level_index:
            raise ValueError("cannot merge counts of different levels")
        # min() keeps the merge order-insensitive when level vectors differ (capped views)
        levels = min(x for x in (self.levels, other.levels) if x) if (self.levels or other.levels) else ()
        return ExposureCounts(
            self.level_index,
            levels,
            self.views + other.views,
            self.positives + other.positives,
            self.negatives + other.negatives,
        )


@dataclass(frozen=True)
class LevelStats:
    level_index: int
    levels: tuple[int, ...]
    views: int
    positives: int
    negatives: int
    rpf: float | None = None
    rnf: float | None = None
    rnr: float | None = None
    crp: float | None = None
    crn: float | None = None
    crp_raw: float | None = None
    crn_raw: float | None = None
    rps: float | None = None
    rns: float | None = None

    @property
    def counts(self) -> ExposureCounts:
        return ExposureCounts(self.level_index, self.levels, self.views, self.positives, self.negatives)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["levels"] = list(self.levels)
        return out


class GroupTotals(NamedTuple):
    views: int
    positives: int
    negatives: int
    rpf: float | None
    rnf: float | None


class SegmentStats(NamedTuple):
    mean: float
    sd_sample: float
    sd_population: float
    n: int

    @property
    def sd(self) -> float:
        # sample SD reproduces the published segment SDs (0.1110, 0.1494, 0.0574, ...)
        return self.sd_sample


SD_CONVENTION = "sample"


# --------------------------------------------------------------------------- factors


def _rate(num: int, den: int, what: str) -> Fraction:
    if den == 0:
        raise UndefinedRateError(f"{what}: zero denominator")
    return Fraction(num, den)


def positive_response_factor(counts: ExposureCounts) -> float:
    return float(_rate(counts.positives, counts.views, "positive response factor"))


def negative_response_factor(counts: ExposureCounts) -> float:
    return float(_rate(counts.negatives, counts.views, "negative response factor"))


def negative_response_rate(counts: ExposureCounts) -> float:
    """Negatives per positive, from raw counts."""
    return float(_rate(counts.negatives, counts.positives, "negative response rate"))


def share_factors(counts: ExposureCounts) -> tuple[float, float]:
    total = counts.positives + counts.negatives
    if total == 0:
        raise UndefinedRateError("share factors: no interactions")
    return counts.positives / total, counts.negatives / total


def change_rate(series: Sequence, mode: str = RAW) -> list[float | None]:
    """Ratios ``f(L)/f(L-1)``; ``None`` marks a zero denominator.

    ``mode="rounded"`` divides the two-decimal percentages instead of the
    raw fractions.
    """
    if mode not in CR_MODES:
        raise ValueError(f"mode must be one of {CR_MODES}")
    if len(series) < 2:
        raise ValueError("change_rate needs at least two values")
    out: list[float | None] = []
    if mode == RAW:
        for prev, cur in zip(series, series[1:]):
            if prev == 0:
                out.append(None)
            elif isinstance(prev, (int, Fraction)) and isinstance(cur, (int, Fraction)):
                out.append(float(Fraction(cur) / Fraction(prev)))
            else:
                out.append(float(cur) / float(prev))
        return out
    pcts = [percent2(v) for v in series]
    with localcontext() as ctx:
        ctx.prec = 40
        for prev, cur in zip(pcts, pcts[1:]):
            out.append(None if prev == 0 else float(cur / prev))
    return out


def segment_stats(values: Sequence[float], first: int = 1, last: int | None = None) -> SegmentStats:
    """Mean and SDs over the 1-based inclusive positions ``first..last`` of ``values``."""
    last = len(values) if last is None else last
    if not 1 <= first <= last <= len(values):
        raise ValueError(f"empty or out-of-range span {first}..{last} for {len(values)} values")
    seg = [float(v) for v in values[first - 1 : last]]
    n = len(seg)
    mean = math.fsum(seg) / n
    ss = math.fsum((v - mean) ** 2 for v in seg)
    return SegmentStats(mean, math.sqrt(ss / (n - 1)) if n > 1 else 0.0, math.sqrt(ss / n), n)


def level_segment_stats(
    table: Sequence[LevelStats], column: str, first_level: int, last_level: int | None = None
) -> SegmentStats:
    """Segment statistics of a table column over a range of levels (undefined cells skipped)."""
    last_level = table[-1].level_index if last_level is None else last_level
    values = [
        getattr(row, column)
        for row in table
        if first_level <= row.level_index <= last_level and getattr(row, column) is not None
    ]
    return segment_stats(values)


# --------------------------------------------------------------------------- tables


def _optional(fn, *args):
    try:
        return fn(*args)
    except UndefinedRateError:
        return None


def build_level_table(counts: Sequence[ExposureCounts] | Mapping[int, ExposureCounts]) -> list[LevelStats]:
    """One :class:`LevelStats` row per level; undefined cells stay ``None``.

    ``counts`` must cover contiguous levels starting at 1.
    """
    rows = list(counts.values()) if isinstance(counts, Mapping) else list(counts)
    rows.sort(key=lambda c: c.level_index)
    idx = [c.level_index for c in rows]
    if idx != list(range(1, len(rows) + 1)):
        raise ValueError(f"levels must be contiguous from 1, got {idx}")

    rpf = [_optional(_rate, c.positives, c.views, "rpf") for c in rows]
    rnf = [_optional(_rate, c.negatives, c.views, "rnf") for c in rows]

    def ratios(series, mode):
        out = [None]
        for prev, cur in zip(series, series[1:]):
            if prev is None or cur is None:
                out.append(None)
            else:
                out.append(change_rate([prev, cur], mode)[0])
        return out

    crp, crn = ratios(rpf, ROUNDED), ratios(rnf, ROUNDED)
    crp_raw, crn_raw = ratios(rpf, RAW), ratios(rnf, RAW)

    table = []
    for i, c in enumerate(rows):
        shares = _optional(share_factors, c) or (None, None)
        table.append(
            LevelStats(
                c.level_index,
                c.levels,
                c.views,
                c.positives,
                c.negatives,
                rpf=None if rpf[i] is None else float(rpf[i]),
                rnf=None if rnf[i] is None else float(rnf[i]),
                rnr=_optional(negative_response_rate, c),
                crp=crp[i],
                crn=crn[i],
                crp_raw=crp_raw[i],
                crn_raw=crn_raw[i],
                rps=shares[0],
                rns=shares[1],
            )
        )
    return table


def aggregate_group(rows: Iterable[ExposureCounts | LevelStats]) -> GroupTotals:
    views = positives = negatives = 0
    for row in rows:
        views += row.views
        positives += row.positives
        negatives += row.negatives
    if views == 0:
        return GroupTotals(0, positives, negatives, None, None)
    return GroupTotals(views, positives, negatives, positives / views, negatives / views)


def dense_counts(counts: Mapping[int, ExposureCounts]) -> list[ExposureCounts]:
    """Fill missing levels 1..max with zero rows."""
    if not counts:
        return []
    top = max(counts)
    return [counts.get(level, ExposureCounts(level)) for level in range(1, top + 1)]


# --------------------------------------------------------------------------- events


def aggregate_events(
    events: Iterable[ExposureEvent | Mapping],
    *,
    t_start: float | None = None,
    t_end: float | None = None,
    interaction_types: Iterable[int] | None = None,
) -> dict[str, dict[int, ExposureCounts]]:
    """Fold an event stream into per-group, per-level counts.

    Only events with ``t_start <= ts < t_end`` are counted when bounds are
    given. Orphan records and log headers are skipped.
    """
    types = None if interaction_types is None else set(interaction_types)
    tallies: dict[tuple[str, int], list] = {}
    for ev in events:
        if isinstance(ev, Mapping):
            if "kind" not in ev or ev.get("orphan"):
                continue
            ev = ExposureEvent.from_dict(ev)
        if t_start is not None and ev.ts < t_start:
            continue
        if t_end is not None and ev.ts >= t_end:
            continue
        if types is not None and ev.kind != "view" and ev.interaction_type not in types:
            continue
        slot = tallies.setdefault((ev.group, ev.level_index), [(), 0, 0, 0])
        if ev.kind == "view":
            slot[1] += 1
            if not slot[0] or (ev.levels and ev.levels < slot[0]):
                slot[0] = ev.levels
        elif ev.kind == "positive":
            slot[2] += 1
        else:
            slot[3] += 1
    out: dict[str, dict[int, ExposureCounts]] = {}
    for (group, level), (levels, v, p, n) in sorted(tallies.items()):
        out.setdefault(group, {})[level] = ExposureCounts(level, levels, v, p, n)
    return out


def counts_to_events(
    counts: Sequence[ExposureCounts], group: str = "G4", ts: float = 0.0
) -> Iterator[ExposureEvent]:
    """Expand a count table into a synthetic event stream with the same tallies.

    Each level gets ``views`` view events from distinct pseudo users; the first
    ``positives`` of them click and the next ``negatives`` dismiss.
    """
    for c in counts:
        if c.positives + c.negatives > c.views:
            raise ValueError(f"level {c.level_index}: more responses than views")
        for i in range(c.views):
            uid = f"{group}-L{c.level_index}-{i}"
            yield ExposureEvent(ts, uid, group, c.level_index, c.level_index, c.levels, "view")
            if i < c.positives:
                yield ExposureEvent(ts, uid, group, c.level_index, c.level_index, c.levels, "positive")
            elif i < c.positives + c.negatives:
                yield ExposureEvent(ts, uid, group, c.level_index, c.level_index, c.levels, "negative")


def write_events(events: Iterable[ExposureEvent | Mapping], fh: IO[str], header: Mapping | None = None) -> int:
    """Write JSONL; returns the number of event lines written."""
    if header is not None:
        fh.write(json.dumps(dict(header), sort_keys=True) + "\n")
    n = 0
    for ev in events:
        record = ev.to_dict() if isinstance(ev, ExposureEvent) else dict(ev)
        fh.write(json.dumps(record, separators=(",", ":")) + "\n")
        n += 1
    return n


def read_events(source: str | Path | IO[str]) -> tuple[dict | None, list[dict]]:
    """Parse a JSONL log into ``(header, event records)``."""
    fh = open(source, encoding="utf-8") if isinstance(source, (str, Path)) else source
    header, events = None, []
    try:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FixtureParseError(f"invalid JSON: {exc.msg}", lineno) from exc
            if not isinstance(record, dict):
                raise FixtureParseError("expected a JSON object", lineno)
            if "kind" not in record:
                if header is None and not events:
                    header = record
                    continue
                raise FixtureParseError("record without 'kind'", lineno)
            events.append(record)
    finally:
        if fh is not source:
            fh.close()
    return header, events


# --------------------------------------------------------------------------- CSV


def _open_text(source):
    if isinstance(source, (str, Path)):
        return open(source, encoding="utf-8", newline="")
    return source


def read_counts_csv(source: str | Path | IO[str]) -> list[ExposureCounts]:
    """Read a fixture with header ``level,e1..ek,views,positives,negatives``."""
    fh = _open_text(source)
    try:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise FixtureParseError("empty file", 1) from None
        required = ("level", "views", "positives", "negatives")
        missing = [c for c in required if c not in header]
        if missing:
            raise FixtureParseError(f"missing columns {missing}", 1)
        element_cols = sorted(
            (h for h in header if h.startswith("e") and h[1:].isdigit()), key=lambda h: int(h[1:])
        )
        rows = []
        for lineno, fields in enumerate(reader, start=2):
            if not fields or all(not f.strip() for f in fields):
                continue
            if len(fields) != len(header):
                raise FixtureParseError(
                    f"expected {len(header)} fields, got {len(fields)} (truncated row?)", lineno
                )
            rec = dict(zip(header, (f.strip() for f in fields)))
            try:
                rows.append(
                    ExposureCounts(
                        int(rec["level"]),
                        tuple(int(rec[c]) for c in element_cols),
                        int(rec["views"]),
                        int(rec["positives"]),
                        int(rec["negatives"]),
                    )
                )
            except ValueError as exc:
                raise FixtureParseError(str(exc), lineno) from exc
        return rows
    finally:
        if fh is not source:
            fh.close()


def read_group_csv(source: str | Path | IO[str]) -> dict[str, ExposureCounts]:
    """Read per-group totals with header ``group,intensity,views,positives,negatives``."""
    fh = _open_text(source)
    try:
        reader = csv.DictReader(fh)
        out = {}
        for lineno, rec in enumerate(reader, start=2):
            try:
                out[rec["group"]] = ExposureCounts(
                    1, (), int(rec["views"]), int(rec["positives"]), int(rec["negatives"])
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise FixtureParseError(f"bad group row: {exc!r}", lineno) from exc
        return out
    finally:
        if fh is not source:
            fh.close()


STATS_COLUMNS = ("views", "positives", "negatives", "rpf", "rnf", "rnr", "crp", "crn", "crp_raw", "crn_raw")


def write_stats_csv(table: Sequence[LevelStats], fh: IO[str] | None = None) -> str:
    """Write a table in published column order plus raw change rates; returns the text."""
    k = max((len(r.levels) for r in table), default=0)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["level", *[f"e{i}" for i in range(1, k + 1)], *STATS_COLUMNS])
    for row in table:
        levels = list(row.levels) + [""] * (k - len(row.levels))
        cells = []
        for col in STATS_COLUMNS:
            value = getattr(row, col)
            cells.append("" if value is None else repr(value) if isinstance(value, float) else value)
        writer.writerow([row.level_index, *levels, *cells])
    text = buf.getvalue()
    if fh is not None:
        fh.write(text)
    return text


def read_stats_csv(source: str | Path | IO[str]) -> list[ExposureCounts]:
    """Recover the raw counts from a stats CSV written by :func:`write_stats_csv`."""
    return read_counts_csv(source)
