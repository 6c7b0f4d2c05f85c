"""Canonical provenance event model and JSONL ingestion.

Each input line is a JSON object::

    {"ts": 1700000000000000000, "src_id": "p1", "src_kind": "Subject",
     "dst_id": "f1", "dst_kind": "File", "op": "read",
     "attrs": {"src": "/usr/sbin/sshd", "dst": "/etc/passwd"}}

``attrs`` carries the attribute of each endpoint: the executable for a
Subject, the path for a File and ``"ip:port"`` for a Netflow.
"""

from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Mapping

from .errors import EventParseError, EventValidationError

logger = logging.getLogger(__name__)

NODE_KINDS = ("Subject", "File", "Netflow")

SCHEMA_OPS = {
    "TC": ("connect", "execute", "open", "read", "recvfrom", "recvmsg",
           "sendmsg", "sendto", "write", "clone"),
    "OpTC": ("open", "read", "create", "message", "modify", "start",
             "rename", "delete", "terminate", "write"),
}

_FIELDS = ("ts", "src_id", "src_kind", "dst_id", "dst_kind", "op", "attrs")


def schema_ops(schema: str) -> tuple[str, ...]:
    try:
        return SCHEMA_OPS[schema]
    except KeyError:
        raise ValueError(f"unknown schema {schema!r}, expected one of {sorted(SCHEMA_OPS)}") from None


@dataclass(frozen=True)
class ProvenanceEvent:
    ts: int
    src_id: str
    src_kind: str
    dst_id: str
    dst_kind: str
    op: str
    attrs: Mapping[str, str]

    @property
    def src_attr(self) -> str:
        return self.attrs.get("src", "")

    @property
    def dst_attr(self) -> str:
        return self.attrs.get("dst", "")

    def to_json(self) -> str:
        return json.dumps({
            "ts": self.ts, "src_id": self.src_id, "src_kind": self.src_kind,
            "dst_id": self.dst_id, "dst_kind": self.dst_kind, "op": self.op,
            "attrs": {"src": self.src_attr, "dst": self.dst_attr},
        }, sort_keys=True)


@dataclass
class ParseStats:
    lines: int = 0
    kept: int = 0
    dropped_unknown_op: int = 0
    dropped_unknown_kind: int = 0
    skipped_malformed: int = 0
    skipped_invalid: int = 0
    attr_conflicts: int = 0
    kind_conflicts: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class EventLog:
    """Time-ordered, immutable collection of events.

    ``entity_table`` maps entity id -> (kind, attribute). The attribute is the
    one seen on the first (earliest) event mentioning the entity.
    """

    events: tuple[ProvenanceEvent, ...]
    schema: str
    entity_table: Mapping[str, tuple[str, str]]
    stats: ParseStats = field(default_factory=ParseStats, compare=False)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[ProvenanceEvent]:
        return iter(self.events)

    @property
    def first_ts(self) -> int | None:
        return self.events[0].ts if self.events else None

    @property
    def last_ts(self) -> int | None:
        return self.events[-1].ts if self.events else None

    def subjects(self) -> dict[str, str]:
        """Subject id -> executable."""
        return {k: a for k, (kind, a) in self.entity_table.items() if kind == "Subject"}


@dataclass(frozen=True)
class DatasetSplit:
    train: EventLog
    test: EventLog
    cutoff_ts: int


def build_log(events: Iterable[ProvenanceEvent], schema: str,
              stats: ParseStats | None = None) -> EventLog:
    """Sort events (stably) by timestamp and derive the entity table.

    Events whose endpoint contradicts the kind already recorded for that id
    are dropped and counted in ``stats.kind_conflicts``.
    """
    schema_ops(schema)
    stats = stats if stats is not None else ParseStats()
    ordered = sorted(events, key=lambda e: e.ts)
    table: dict[str, tuple[str, str]] = {}
    kept = []
    for ev in ordered:
        ok = True
        for eid, kind in ((ev.src_id, ev.src_kind), (ev.dst_id, ev.dst_kind)):
            known = table.get(eid)
            if known is not None and known[0] != kind:
                ok = False
        if not ok:
            stats.kind_conflicts += 1
            continue
        for eid, kind, attr in ((ev.src_id, ev.src_kind, ev.src_attr),
                                (ev.dst_id, ev.dst_kind, ev.dst_attr)):
            known = table.get(eid)
            if known is None:
                table[eid] = (kind, attr)
            elif known[1] != attr:
                stats.attr_conflicts += 1
        kept.append(ev)
    stats.kept = len(kept)
    return EventLog(tuple(kept), schema, table, stats)


def _validate(obj, lineno: int, ops: tuple[str, ...], stats: ParseStats):
    """Return a ProvenanceEvent, None for a schema drop, or raise."""
    if not isinstance(obj, dict):
        raise EventParseError(lineno, "expected a JSON object")
    for name in _FIELDS:
        if name not in obj:
            raise EventValidationError(lineno, name, "missing")
    ts = obj["ts"]
    if isinstance(ts, bool) or not isinstance(ts, int) or ts < 0:
        raise EventValidationError(lineno, "ts", "must be a non-negative integer (epoch ns)")
    attrs = obj["attrs"]
    if not isinstance(attrs, dict):
        raise EventValidationError(lineno, "attrs", "must be an object")
    if obj["src_kind"] not in NODE_KINDS or obj["dst_kind"] not in NODE_KINDS:
        stats.dropped_unknown_kind += 1
        return None
    if obj["op"] not in ops:
        stats.dropped_unknown_op += 1
        return None
    for side in ("src", "dst"):
        if not isinstance(obj[f"{side}_id"], str) or not obj[f"{side}_id"]:
            raise EventValidationError(lineno, f"{side}_id", "must be a non-empty string")
        value = attrs.get(side, "")
        if not isinstance(value, str):
            raise EventValidationError(lineno, f"attrs.{side}", "must be a string")
        if obj[f"{side}_kind"] == "Subject" and not value:
            raise EventValidationError(lineno, f"attrs.{side}",
                                       "Subject endpoint requires a non-empty executable")
    return ProvenanceEvent(
        ts=ts, src_id=obj["src_id"], src_kind=obj["src_kind"],
        dst_id=obj["dst_id"], dst_kind=obj["dst_kind"], op=obj["op"],
        attrs={"src": attrs.get("src", ""), "dst": attrs.get("dst", "")},
    )


def parse_events(stream: IO[bytes] | IO[str] | Iterable[str | bytes], schema: str = "TC",
                 on_error: str = "raise") -> EventLog:
    """Parse a JSONL event stream into an :class:`EventLog`.

    Events with an unknown node kind or an operation outside the schema's
    edge-type set are dropped and counted. Malformed lines and validation
    failures raise :class:`EventParseError` / :class:`EventValidationError`
    when ``on_error="raise"``; with ``on_error="skip"`` they are counted and
    parsing continues.
    """
    if on_error not in ("raise", "skip"):
        raise ValueError("on_error must be 'raise' or 'skip'")
    ops = schema_ops(schema)
    stats = ParseStats()
    events = []
    for lineno, raw in enumerate(stream, start=1):
        line = raw.decode("utf-8") if isinstance(raw, bytes) else raw
        if not line.strip():
            continue
        stats.lines += 1
        try:
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise EventParseError(lineno, f"malformed JSON ({exc.msg})") from None
            ev = _validate(obj, lineno, ops, stats)
        except EventValidationError:
            if on_error == "raise":
                raise
            stats.skipped_invalid += 1
            continue
        except EventParseError:
            if on_error == "raise":
                raise
            stats.skipped_malformed += 1
            continue
        if ev is not None:
            events.append(ev)
    log = build_log(events, schema, stats)
    if stats.attr_conflicts:
        logger.warning("%d events carried an attribute conflicting with the first "
                       "observation of their entity", stats.attr_conflicts)
    return log


def read_events(path, schema: str = "TC", on_error: str = "raise") -> EventLog:
    with open(path, "rb") as fh:
        return parse_events(fh, schema, on_error=on_error)


def serialize_events(log: EventLog) -> str:
    return "".join(ev.to_json() + "\n" for ev in log.events)


def write_events(log: EventLog, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize_events(log))


def loads_events(text: str, schema: str = "TC") -> EventLog:
    return parse_events(io.StringIO(text), schema)


def split_dataset(log: EventLog, cutoff_ts: int) -> DatasetSplit:
    """Partition by timestamp: ``ts < cutoff_ts`` trains, the rest tests."""
    train = [e for e in log.events if e.ts < cutoff_ts]
    test = [e for e in log.events if e.ts >= cutoff_ts]
    return DatasetSplit(build_log(train, log.schema), build_log(test, log.schema), cutoff_ts)


def subset(log: EventLog, events: Iterable[ProvenanceEvent]) -> EventLog:
    return build_log(list(events), log.schema)
