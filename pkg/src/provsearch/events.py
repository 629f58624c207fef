"""Audit-log event parsing, filtering and entity abstraction.

Events arrive as JSONL, one record per line::

    {"ts": 100, "event_type": "read",
     "subject": {"uid": "p1", "kind": "process", "pid": 10, "image_path": "/usr/bin/vi"},
     "object": {"uid": "f1", "kind": "file", "path": "/etc/passwd"}}
"""
from __future__ import annotations

import ipaddress
import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Iterator, Optional

EVENT_TYPES = frozenset({
    "read", "write", "modify_attr", "clone", "fork", "execute",
    "open", "close", "connect", "send", "recv",
})
RETAINED_EVENTS = EVENT_TYPES - {"open", "close"}
RETAINED_KINDS = frozenset({"process", "file", "socket", "registry"})

UNKNOWN = "unknown"
IP_CLASSES = ("public", "private", "local")
PORT_CLASSES = ("reserved", "user")
NETWORK_CATEGORIES = tuple(
    f"{a}_{b}_{p}" for a in IP_CLASSES for b in IP_CLASSES for p in PORT_CLASSES
)


class IngestError(ValueError):
    pass


class MalformedLine(IngestError):
    pass


class MissingField(IngestError):
    pass


class UnknownEventType(IngestError):
    pass


class MissingPath(IngestError):
    pass


class InvalidAddress(IngestError):
    pass


class InvalidPort(IngestError):
    pass


@dataclass(frozen=True)
class EntityDescriptor:
    uid: str
    kind: str
    path: Optional[str] = None
    pid: Optional[int] = None
    ppid: Optional[int] = None
    tid: Optional[int] = None
    src_ip: Optional[str] = None
    dst_ip: Optional[str] = None
    dst_port: Optional[int] = None
    image_path: Optional[str] = None

    @property
    def is_thread(self) -> bool:
        return self.kind == "process" and self.tid is not None and self.pid is not None and self.tid != self.pid

    def to_dict(self) -> dict:
        out = {"uid": self.uid, "kind": self.kind}
        for name in ("path", "pid", "ppid", "tid", "src_ip", "dst_ip", "dst_port", "image_path"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        return out


@dataclass(frozen=True)
class RawEvent:
    ts: int
    event_type: str
    subject: EntityDescriptor
    object: EntityDescriptor

    def to_dict(self) -> dict:
        return {
            "ts": self.ts,
            "event_type": self.event_type,
            "subject": self.subject.to_dict(),
            "object": self.object.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))


_INT_FIELDS = ("pid", "ppid", "tid", "dst_port")
_STR_FIELDS = ("path", "src_ip", "dst_ip", "image_path")


def _parse_entity(raw, role: str) -> EntityDescriptor:
    if not isinstance(raw, dict):
        raise MissingField(f"{role} must be an object")
    for name in ("uid", "kind"):
        if name not in raw:
            raise MissingField(f"{role}.{name}")
        if not isinstance(raw[name], str) or not raw[name]:
            raise MalformedLine(f"{role}.{name} must be a non-empty string")
    kwargs = {"uid": raw["uid"], "kind": raw["kind"]}
    for name in _INT_FIELDS:
        value = raw.get(name)
        if value is not None:
            if isinstance(value, bool) or not isinstance(value, int):
                raise MalformedLine(f"{role}.{name} must be an integer")
            kwargs[name] = value
    for name in _STR_FIELDS:
        value = raw.get(name)
        if value is not None:
            if not isinstance(value, str):
                raise MalformedLine(f"{role}.{name} must be a string")
            kwargs[name] = value
    ent = EntityDescriptor(**kwargs)
    if ent.kind == "socket" and (ent.dst_ip is None or ent.dst_port is None):
        raise MissingField(f"{role}: socket requires dst_ip and dst_port")
    if ent.kind in ("file", "registry") and ent.path is None:
        raise MissingField(f"{role}: {ent.kind} requires path")
    return ent


def parse_event_line(line: str) -> RawEvent:
    """Parse one JSONL record into a RawEvent.

    Raises MalformedLine, MissingField or UnknownEventType.
    """
    try:
        raw = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedLine(str(exc)) from None
    if not isinstance(raw, dict):
        raise MalformedLine("record is not a JSON object")
    for name in ("ts", "event_type", "subject", "object"):
        if name not in raw:
            raise MissingField(name)
    ts = raw["ts"]
    if isinstance(ts, bool) or not isinstance(ts, int):
        raise MalformedLine("ts must be an integer (nanoseconds)")
    if ts <= 0:
        raise MalformedLine("ts must be positive")
    etype = raw["event_type"]
    if etype not in EVENT_TYPES:
        raise UnknownEventType(str(etype))
    subject = _parse_entity(raw["subject"], "subject")
    if subject.kind != "process":
        raise MalformedLine("subject must be a process")
    obj = _parse_entity(raw["object"], "object")
    return RawEvent(ts=ts, event_type=etype, subject=subject, object=obj)


def read_events(lines: Iterable[str]) -> Iterator[RawEvent]:
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            yield parse_event_line(line)
        except IngestError as exc:
            raise type(exc)(f"line {lineno}: {exc}") from None


def filter_event(e: RawEvent) -> bool:
    """Keep information-flow events between retained entity kinds."""
    return (
        e.event_type in RETAINED_EVENTS
        and e.subject.kind in RETAINED_KINDS
        and e.object.kind in RETAINED_KINDS
    )


@dataclass
class OSProfile:
    """Root-directory lookup table for one operating system."""

    name: str
    roots: dict = field(default_factory=dict)

    @property
    def case_insensitive(self) -> bool:
        return self.name == "windows"

    @property
    def categories(self) -> list:
        cats = set(self.roots.values()) | {UNKNOWN}
        if self.name != "windows":
            cats.add("digit")
        return sorted(cats)

    def split(self, path: str) -> list:
        if self.case_insensitive:
            path = path.lower().replace("\\", "/")
        return [part for part in path.split("/") if part]

    def lookup(self, path: str) -> str:
        parts = self.split(path)
        if not parts:
            return UNKNOWN
        # longest multi-component prefix wins, e.g. usr/bin before usr
        for n in range(min(len(parts), 3), 0, -1):
            cat = self.roots.get("/".join(parts[:n]))
            if cat is not None:
                return cat
        if self.name != "windows" and parts[0].isdigit():
            return "digit"
        return UNKNOWN

    @classmethod
    def parse(cls, text: str, name: Optional[str] = None) -> "OSProfile":
        roots = {}
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("@profile"):
                name = name or line.split(None, 1)[1].strip()
                continue
            root, sep, cat = raw.rstrip("\n").partition("\t")
            if not sep:
                raise IngestError(f"bad profile line: {raw!r}")
            root = root.strip().strip("/")
            roots[root.lower() if name == "windows" else root] = cat.strip()
        if name not in ("linux", "windows", "freebsd"):
            raise IngestError(f"unknown profile name {name!r}")
        return cls(name=name, roots=roots)

    @classmethod
    def load(cls, name_or_path: str) -> "OSProfile":
        if name_or_path in ("linux", "windows", "freebsd"):
            text = resources.files("provsearch.profiles").joinpath(f"{name_or_path}.txt").read_text()
        else:
            with open(name_or_path, encoding="utf-8") as fh:
                text = fh.read()
        return cls.parse(text)


def abstract_entity(e: EntityDescriptor, profile: OSProfile) -> str:
    if e.kind == "process":
        path = e.image_path or e.path
        if not path:
            return UNKNOWN
    else:
        path = e.path
        if not path:
            raise MissingPath(e.uid)
    return profile.lookup(path)


_PRIVATE_NETS = [ipaddress.ip_network(n) for n in ("10.0.0.0/8", "172.16.0.0/12", "192.168.0.0/16", "fc00::/7")]


def ip_class(addr: str) -> str:
    try:
        ip = ipaddress.ip_address(addr)
    except ValueError:
        raise InvalidAddress(addr) from None
    if ip.is_loopback:
        return "local"
    if ip.is_link_local or any(ip in net for net in _PRIVATE_NETS if net.version == ip.version):
        return "private"
    return "public"


def abstract_network(src_ip: Optional[str], dst_ip: str, dst_port: int) -> str:
    if isinstance(dst_port, bool) or not isinstance(dst_port, int) or not 0 < dst_port < 65536:
        raise InvalidPort(str(dst_port))
    src = ip_class(src_ip) if src_ip else "local"
    port = "reserved" if dst_port < 1024 else "user"
    return f"{src}_{ip_class(dst_ip)}_{port}"


def abstract(e: EntityDescriptor, profile: OSProfile) -> str:
    if e.kind == "socket":
        return abstract_network(e.src_ip, e.dst_ip, e.dst_port)
    return abstract_entity(e, profile)
