import json

import pytest

from helpers import event, file, proc
from provsearch.events import (
    NETWORK_CATEGORIES, EntityDescriptor, MalformedLine, MissingField, MissingPath, OSProfile, UnknownEventType,
    abstract, abstract_network, filter_event, ip_class, parse_event_line, read_events,
)

LINUX = OSProfile.load("linux")


def test_parse_round_trip():
    line = event(100, "read", proc("p1", 10, "/usr/bin/vi"), file("f1", "/etc/passwd"))
    ev = parse_event_line(line)
    assert ev.ts == 100 and ev.subject.pid == 10 and ev.object.path == "/etc/passwd"
    assert parse_event_line(ev.to_json()) == ev


@pytest.mark.parametrize("line, exc", [
    ("{not json", MalformedLine),
    (json.dumps({"ts": 1, "event_type": "read", "subject": {"uid": "p", "kind": "process"}}), MissingField),
    (event(1, "teleport", proc("p", 1, "/bin/sh"), file("f", "/tmp/x")), UnknownEventType),
    (event(0, "read", proc("p", 1, "/bin/sh"), file("f", "/tmp/x")), MalformedLine),
    (event(1, "read", file("f", "/tmp/x"), file("g", "/tmp/y")), MalformedLine),
    (event(1, "read", proc("p", 1, "/bin/sh"), {"uid": "f", "kind": "file"}), MissingField),
    (event(1, "send", proc("p", 1, "/bin/sh"), {"uid": "s", "kind": "socket", "dst_ip": "1.2.3.4"}), MissingField),
])
def test_parse_errors(line, exc):
    with pytest.raises(exc):
        parse_event_line(line)


def test_read_events_reports_line_number():
    lines = [event(1, "read", proc("p", 1, "/bin/sh"), file("f", "/etc/x")), "", "{bad"]
    with pytest.raises(MalformedLine, match="line 3"):
        list(read_events(lines))


def test_filter_drops_open_close():
    keep = parse_event_line(event(1, "write", proc("p", 1, "/bin/sh"), file("f", "/tmp/x")))
    drop = parse_event_line(event(1, "open", proc("p", 1, "/bin/sh"), file("f", "/tmp/x")))
    assert filter_event(keep) and not filter_event(drop)


@pytest.mark.parametrize("path, cat", [
    ("/etc/passwd", "etc"), ("/tmp/a/b", "tmp"), ("/usr/bin/vi", "usrbin"), ("/usr/share/x", "usr"), ("/proc/1234/stat", "proc"),
    ("/1234/x", "digit"), ("/nonexistent-root/x", "unknown"), ("/", "unknown"),
])
def test_linux_root_lookup(path, cat):
    assert abstract(EntityDescriptor(uid="x", kind="file", path=path), LINUX) == cat


def test_longest_prefix_wins():
    prof = OSProfile.parse("@profile linux\nusr\tusr\nusr/bin\tbin\n")
    assert prof.lookup("/usr/bin/ls") == "bin"
    assert prof.lookup("/usr/share/x") == "usr"


def test_windows_case_insensitive():
    prof = OSProfile.load("windows")
    a = prof.lookup("C:\\Windows\\System32\\cmd.exe")
    assert a == prof.lookup("c:/windows/system32/CMD.EXE")


def test_missing_path_for_file():
    with pytest.raises(MissingPath):
        abstract(EntityDescriptor(uid="x", kind="file"), LINUX)


@pytest.mark.parametrize("addr, cls", [
    ("127.0.0.1", "local"), ("::1", "local"), ("10.1.2.3", "private"), ("192.168.0.9", "private"),
    ("172.16.5.5", "private"), ("8.8.8.8", "public"), ("169.254.1.1", "private"),
])
def test_ip_class(addr, cls):
    assert ip_class(addr) == cls


def test_network_abstraction_is_a_category():
    a = abstract_network("10.0.0.2", "93.184.216.34", 443)
    assert a == "private_public_reserved" and a in NETWORK_CATEGORIES
    assert abstract_network(None, "10.0.0.1", 8080) == "local_private_user"
