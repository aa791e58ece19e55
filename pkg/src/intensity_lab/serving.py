"""Online decision loop: group assignment, level selection, event capture.

:class:`DecisionServer` holds all mutable state behind one lock, so per-user
contact counters, live per-level counters and the append-only event log
always agree. Parameters are immutable objects swapped by reference, so a
decision sees either the old or the new set, never a mix.

:func:`make_http_server` exposes the server over a small JSON API built on
:mod:`http.server`.
"""

from __future__ import annotations

import bisect
import hashlib
import json
import logging
import threading
import time
from dataclasses import dataclass, field, replace
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import IO, Callable, Mapping
from urllib.parse import parse_qs, urlparse

from .errors import ConfigurationError, IntensityLabError
from .metrics import ExposureCounts, ExposureEvent, LevelStats, build_level_table, dense_counts, read_events
from .objects import LevelVector, ObjectSpec, aggregate_intensity, default_object_spec, load_object_spec, validate_levels
from .schedule import SchedulePolicy, full_schedule, level_vector_at, step_index

log = logging.getLogger(__name__)


class RequestError(IntensityLabError, ValueError):
    """Malformed request payload."""


class ServiceUnavailableError(IntensityLabError, RuntimeError):
    """No object is configured."""


# --------------------------------------------------------------------------- messages


@dataclass(frozen=True)
class DecisionRequest:
    page_id: str
    user_id: str
    contact: int | None = None

    def __post_init__(self):
        if not isinstance(self.user_id, str) or not self.user_id:
            raise RequestError("user_id must be a non-empty string")
        if not isinstance(self.page_id, str):
            raise RequestError("page_id must be a string")
        if self.contact is not None and (
            isinstance(self.contact, bool) or not isinstance(self.contact, int) or self.contact < 1
        ):
            raise RequestError("contact must be a positive integer")

    @classmethod
    def from_dict(cls, data) -> "DecisionRequest":
        if not isinstance(data, Mapping):
            raise RequestError("request body must be a JSON object")
        return cls(data.get("page_id", ""), data.get("user_id"), data.get("contact"))


@dataclass(frozen=True)
class DecisionResponse:
    group: str
    contact: int
    levels: LevelVector
    aggregated_intensity: float
    object_id: str

    def to_dict(self) -> dict:
        return {
            "group": self.group,
            "contact": self.contact,
            "levels": list(self.levels),
            "ai": self.aggregated_intensity,
            "object_id": self.object_id,
        }


@dataclass(frozen=True)
class Acknowledgment:
    accepted: bool
    orphan: bool = False
    duplicate: bool = False

    def to_dict(self) -> dict:
        return {"accepted": self.accepted, "orphan": self.orphan, "duplicate": self.duplicate}


@dataclass(frozen=True)
class ServingParams:
    """Operating limits pushed back from analysis.

    ``level_caps`` caps one group's vectors, ``global_cap`` caps every
    group's, and ``max_level`` clamps every element. The effective cap is the
    componentwise minimum of all that apply.
    """

    policy_overrides: Mapping[str, SchedulePolicy] = field(default_factory=dict)
    level_caps: Mapping[str, LevelVector] = field(default_factory=dict)
    global_cap: LevelVector | None = None
    max_level: int | None = None

    def validate(self, spec: ObjectSpec, groups=None) -> None:
        for name, cap in [*self.level_caps.items(), ("global", self.global_cap)]:
            if cap is None:
                continue
            verdict = validate_levels(spec, cap)
            if not verdict:
                raise ConfigurationError(f"cap for {name}: {verdict.reason}")
        if self.max_level is not None and not 1 <= self.max_level <= spec.max_level:
            raise ConfigurationError(f"max_level must lie in 1..{spec.max_level}")
        for group, policy in self.policy_overrides.items():
            policy.validate(spec)
        if groups is not None:
            unknown = (set(self.policy_overrides) | set(self.level_caps)) - set(groups)
            if unknown:
                raise ConfigurationError(f"unknown groups: {sorted(unknown)}")

    def cap_for(self, group: str, k: int) -> tuple[int, ...] | None:
        caps = [c for c in (self.level_caps.get(group), self.global_cap) if c is not None]
        if self.max_level is not None:
            caps.append((self.max_level,) * k)
        if not caps:
            return None
        return tuple(min(values) for values in zip(*caps))

    @classmethod
    def from_dict(cls, data, spec: ObjectSpec | None = None) -> "ServingParams":
        """Parse a parameter document.

        A ``detected_level`` key (as printed by saturation detection) sets
        ``global_cap`` to that step of the increasing schedule; it needs ``spec``.
        """
        if not isinstance(data, Mapping):
            raise ConfigurationError("params must be a JSON object")
        allowed = {"policy_overrides", "level_caps", "global_cap", "max_level", "detected_level"}
        unknown = set(data) - allowed
        if unknown:
            raise ConfigurationError(f"unknown params fields: {sorted(unknown)}")
        try:
            global_cap = None if data.get("global_cap") is None else LevelVector(data["global_cap"])
            if data.get("detected_level") is not None:
                if spec is None:
                    raise ConfigurationError("detected_level needs an object spec")
                global_cap = saturation_cap(spec, int(data["detected_level"]))
            max_level = data.get("max_level")
            return cls(
                policy_overrides={
                    g: SchedulePolicy.from_dict(p) for g, p in (data.get("policy_overrides") or {}).items()
                },
                level_caps={g: LevelVector(v) for g, v in (data.get("level_caps") or {}).items()},
                global_cap=global_cap,
                max_level=None if max_level is None else int(max_level),
            )
        except (TypeError, ValueError, AttributeError) as exc:
            if isinstance(exc, ConfigurationError):
                raise
            raise ConfigurationError(f"malformed params: {exc}") from exc

    def to_dict(self) -> dict:
        return {
            "policy_overrides": {g: p.to_dict() for g, p in sorted(self.policy_overrides.items())},
            "level_caps": {g: list(v) for g, v in sorted(self.level_caps.items())},
            "global_cap": None if self.global_cap is None else list(self.global_cap),
            "max_level": self.max_level,
        }


def saturation_cap(spec: ObjectSpec, detected_level: int) -> LevelVector:
    """The increasing schedule's vector at ``detected_level`` (clamped to the ramp)."""
    steps = full_schedule(SchedulePolicy.increasing(), spec)
    if detected_level < 1:
        raise ConfigurationError("detected_level must be >= 1")
    return steps[min(detected_level, len(steps)) - 1].levels


def assign_group(user_id: str, weights: Mapping[str, float]) -> str:
    """Deterministic weighted bucketing of ``user_id`` via SHA-256."""
    groups = sorted(g for g in weights)
    values = [float(weights[g]) for g in groups]
    total = sum(values)
    if not groups or total <= 0 or any(v < 0 for v in values):
        raise ConfigurationError("group weights must be non-negative with a positive sum")
    digest = hashlib.sha256(user_id.encode("utf-8")).digest()
    u = int.from_bytes(digest[:8], "big") / 2**64
    cumulative, acc = [], 0.0
    for v in values:
        acc += v / total
        cumulative.append(acc)
    cumulative[-1] = 1.0
    return groups[bisect.bisect_right(cumulative, u)]


# --------------------------------------------------------------------------- server


class DecisionServer:
    """Thread-safe selection function plus response bookkeeping.

    Parameters
    ----------
    spec : ObjectSpec or None
        Served object; ``None`` makes every decision fail as unavailable.
    policies : mapping group -> SchedulePolicy
    weights : mapping group -> float
        Traffic split; defaults to equal weights over ``policies``.
    params : ServingParams
    log : text stream, optional
        Append-only JSONL sink for view and response events.
    clock : callable returning a timestamp
    """

    def __init__(self, spec: ObjectSpec | None, policies: Mapping[str, SchedulePolicy],
                 weights: Mapping[str, float] | None = None, params: ServingParams | None = None,
                 log: IO[str] | None = None, clock: Callable[[], float] = time.time):
        self.spec = spec
        self.policies = dict(policies)
        self.weights = dict(weights) if weights is not None else {g: 1.0 for g in self.policies}
        if set(self.weights) - set(self.policies):
            raise ConfigurationError("every weighted group needs a policy")
        params = params or ServingParams()
        if spec is not None:
            for policy in self.policies.values():
                policy.validate(spec)
            params.validate(spec, self.policies)
        self._params = params
        self._log = log
        self._clock = clock
        self._lock = threading.Lock()
        self._last_contact: dict[str, int] = {}
        self._served: dict[tuple[str, int], tuple[str, int, tuple[int, ...]]] = {}
        self._counts: dict[str, dict[int, ExposureCounts]] = {}
        self._seen_ids: set[str] = set()
        self._decisions: dict[str, int] = {}

    # -- parameters

    @property
    def params(self) -> ServingParams:
        return self._params

    def update_params(self, params: ServingParams) -> ServingParams:
        """Validate then swap; on error the active set is left untouched."""
        if self.spec is None:
            raise ServiceUnavailableError("no object configured")
        params.validate(self.spec, self.policies)
        self._params = params
        return params

    def apply_saturation(self, detected_level: int) -> ServingParams:
        """Cap every group at the increasing schedule's step ``detected_level``."""
        if self.spec is None:
            raise ServiceUnavailableError("no object configured")
        return self.update_params(replace(self._params, global_cap=saturation_cap(self.spec, detected_level)))

    # -- decisions

    def decide(self, request: DecisionRequest | Mapping) -> DecisionResponse:
        if self.spec is None:
            raise ServiceUnavailableError("no object configured")
        req = request if isinstance(request, DecisionRequest) else DecisionRequest.from_dict(request)
        params = self._params
        spec = self.spec
        group = assign_group(req.user_id, self.weights)
        policy = params.policy_overrides.get(group, self.policies[group])
        cap = params.cap_for(group, spec.k)

        with self._lock:
            last = self._last_contact.get(req.user_id, 0)
            contact = req.contact if req.contact is not None else last + 1
            self._last_contact[req.user_id] = max(last, contact)
            level_index = step_index(policy, spec, contact)
            levels = level_vector_at(policy, spec, contact)
            if cap is not None:
                levels = LevelVector(min(a, b) for a, b in zip(levels, cap))
            event = ExposureEvent(self._clock(), req.user_id, group, contact, level_index, levels, "view")
            self._served[(req.user_id, contact)] = (group, level_index, tuple(levels))
            self._tally(group, level_index, levels, views=1)
            self._decisions[group] = self._decisions.get(group, 0) + 1
            self._write({**event.to_dict(), "page_id": req.page_id})
        return DecisionResponse(group, contact, levels, aggregate_intensity(spec, levels), spec.object_id)

    def record_event(self, event: Mapping | ExposureEvent) -> Acknowledgment:
        """Record a positive or negative response to a served view.

        Unknown ``(user_id, contact)`` pairs are logged with ``"orphan": true``
        and not counted; a repeated ``event_id`` is ignored.
        """
        record = event.to_dict() if isinstance(event, ExposureEvent) else event
        if not isinstance(record, Mapping):
            raise RequestError("event must be a JSON object")
        kind = record.get("kind")
        if kind not in ("positive", "negative"):
            raise RequestError("kind must be 'positive' or 'negative'")
        user_id, contact = record.get("user_id"), record.get("contact")
        if not isinstance(user_id, str) or not user_id:
            raise RequestError("user_id must be a non-empty string")
        if isinstance(contact, bool) or not isinstance(contact, int) or contact < 1:
            raise RequestError("contact must be a positive integer")
        event_id = record.get("event_id")
        if event_id is not None and not isinstance(event_id, str):
            raise RequestError("event_id must be a string")
        interaction_type = record.get("interaction_type", 1)
        if isinstance(interaction_type, bool) or not isinstance(interaction_type, int):
            raise RequestError("interaction_type must be an integer")

        with self._lock:
            if event_id is not None and event_id in self._seen_ids:
                return Acknowledgment(True, duplicate=True)
            if event_id is not None:
                self._seen_ids.add(event_id)
            served = self._served.get((user_id, contact))
            ts = self._clock()
            if served is None:
                log.warning("orphan %s event for user %s contact %s", kind, user_id, contact)
                orphan = {k: v for k, v in record.items() if k != "ts"}
                self._write({"ts": ts, **orphan, "orphan": True})
                return Acknowledgment(True, orphan=True)
            group, level_index, levels = served
            out = ExposureEvent(ts, user_id, group, contact, level_index, levels, kind, interaction_type, event_id)
            self._tally(group, level_index, levels, **{kind + "s": 1})
            self._write(out.to_dict())
        return Acknowledgment(True)

    def stats_snapshot(self, group: str) -> list[LevelStats]:
        with self._lock:
            counts = dict(self._counts.get(group, {}))
        return build_level_table(dense_counts(counts))

    def decision_count(self, group: str | None = None) -> int:
        with self._lock:
            return sum(self._decisions.values()) if group is None else self._decisions.get(group, 0)

    def rebuild_from_log(self, records) -> None:
        """Restore counters, contact sequences and seen event ids from log records."""
        with self._lock:
            for rec in records:
                if "kind" not in rec or rec.get("orphan"):
                    if rec.get("event_id"):
                        self._seen_ids.add(rec["event_id"])
                    continue
                ev = ExposureEvent.from_dict(rec)
                if ev.kind == "view":
                    self._served[(ev.user_id, ev.contact)] = (ev.group, ev.level_index, ev.levels)
                    self._last_contact[ev.user_id] = max(self._last_contact.get(ev.user_id, 0), ev.contact)
                    self._decisions[ev.group] = self._decisions.get(ev.group, 0) + 1
                    self._tally(ev.group, ev.level_index, ev.levels, views=1)
                else:
                    if ev.event_id is not None:
                        self._seen_ids.add(ev.event_id)
                    self._tally(ev.group, ev.level_index, ev.levels, **{ev.kind + "s": 1})

    def close(self) -> None:
        with self._lock:
            if self._log is not None:
                self._log.flush()

    # -- internals (caller holds the lock)

    def _tally(self, group, level_index, levels, views=0, positives=0, negatives=0):
        per_level = self._counts.setdefault(group, {})
        delta = ExposureCounts(level_index, tuple(levels), views, positives, negatives)
        current = per_level.get(level_index)
        per_level[level_index] = delta if current is None else current + delta

    def _write(self, record: dict) -> None:
        if self._log is not None:
            self._log.write(json.dumps(record, separators=(",", ":")) + "\n")


# --------------------------------------------------------------------------- config


@dataclass
class ServeConfig:
    server: DecisionServer
    host: str = "127.0.0.1"
    port: int = 8080
    log_path: Path | None = None
    log_file: IO[str] | None = None

    def close(self) -> None:
        self.server.close()
        if self.log_file is not None:
            self.log_file.close()


def load_serve_config(path: str | Path, clock: Callable[[], float] = time.time) -> ServeConfig:
    """Build a server from a JSON config file.

    Keys: ``object`` (path; omitted means the bundled object, ``null`` means
    unconfigured), ``groups`` (``{name: {"weight": w, "policy": {...}}}``),
    ``params`` (inline object or path), ``log``, ``host``, ``port``.
    """
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, Mapping) or "groups" not in data:
        raise ConfigurationError("serve config needs a 'groups' object")
    base = path.parent
    if "object" not in data:
        spec = default_object_spec()
    elif data["object"] is None:
        spec = None
    else:
        spec = load_object_spec(base / data["object"])
    try:
        groups = data["groups"]
        policies = {g: SchedulePolicy.from_dict(v["policy"]) for g, v in groups.items()}
        weights = {g: float(v.get("weight", 1.0)) for g, v in groups.items()}
    except (KeyError, TypeError, AttributeError) as exc:
        raise ConfigurationError(f"malformed groups block: {exc!r}") from exc
    params_data = data.get("params")
    if isinstance(params_data, str):
        with open(base / params_data, encoding="utf-8") as fh:
            params_data = json.load(fh)
    params = ServingParams.from_dict(params_data or {}, spec)

    log_path = base / data["log"] if data.get("log") else None
    records = []
    if log_path is not None and log_path.exists():
        _, records = read_events(log_path)
    fh = open(log_path, "a", encoding="utf-8") if log_path is not None else None
    server = DecisionServer(spec, policies, weights, params, log=fh, clock=clock)
    server.rebuild_from_log(records)
    return ServeConfig(server, str(data.get("host", "127.0.0.1")), int(data.get("port", 8080)), log_path, fh)


# --------------------------------------------------------------------------- HTTP


def make_http_server(server: DecisionServer, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    """HTTP front end; ``port=0`` binds an ephemeral port (see ``server_address``)."""

    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            log.debug("%s - %s", self.address_string(), fmt % args)

        def _send(self, status: int, payload) -> None:
            body = json.dumps(payload).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _body(self):
            length = int(self.headers.get("Content-Length") or 0)
            try:
                return json.loads(self.rfile.read(length) or b"null")
            except json.JSONDecodeError as exc:
                raise RequestError(f"invalid JSON: {exc.msg}") from exc

        def _dispatch(self, method: str) -> None:
            url = urlparse(self.path)
            try:
                if method == "POST" and url.path == "/v1/decide":
                    self._send(HTTPStatus.OK, server.decide(DecisionRequest.from_dict(self._body())).to_dict())
                elif method == "POST" and url.path == "/v1/events":
                    self._send(HTTPStatus.ACCEPTED, server.record_event(self._body()).to_dict())
                elif method == "GET" and url.path == "/v1/stats":
                    group = parse_qs(url.query).get("group", [None])[0]
                    if group is None:
                        raise RequestError("missing ?group=")
                    if group not in server.policies:
                        self._send(HTTPStatus.NOT_FOUND, {"error": f"unknown group {group}",
                                                          "groups": sorted(server.policies)})
                        return
                    self._send(HTTPStatus.OK, [row.to_dict() for row in server.stats_snapshot(group)])
                elif method == "GET" and url.path == "/v1/params":
                    self._send(HTTPStatus.OK, server.params.to_dict())
                elif method == "POST" and url.path == "/v1/params":
                    try:
                        params = ServingParams.from_dict(self._body(), server.spec)
                        server.update_params(params)
                    except ConfigurationError as exc:
                        self._send(HTTPStatus.UNPROCESSABLE_ENTITY, {"error": str(exc)})
                        return
                    self._send(HTTPStatus.OK, params.to_dict())
                else:
                    self._send(HTTPStatus.NOT_FOUND, {"error": f"no route {method} {url.path}"})
            except ServiceUnavailableError as exc:
                self._send(HTTPStatus.SERVICE_UNAVAILABLE, {"error": str(exc)})
            except RequestError as exc:
                self._send(HTTPStatus.BAD_REQUEST, {"error": str(exc)})

        def do_GET(self):
            self._dispatch("GET")

        def do_POST(self):
            self._dispatch("POST")

    return ThreadingHTTPServer((host, port), Handler)
