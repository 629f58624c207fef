import pytest

from helpers import event, file, proc
from provsearch.events import OSProfile, read_events
from provsearch.graph import (
    DanglingReference, build_graph, dedup_objects, merge_threads, read_snapshot, write_snapshot,
)

LINUX = OSProfile.load("linux")


def _graph(lines):
    return build_graph(read_events(lines), LINUX)


def _sigs(g):
    return sorted((g.nodes[e.src].key, e.etype, g.nodes[e.dst].key) for e in g.edges)


def test_edges_follow_information_flow():
    sh, vi = proc("p1", 1, "/bin/sh"), proc("p2", 2, "/usr/bin/vi")
    g = _graph([
        event(1, "read", sh, file("f1", "/etc/passwd")),
        event(2, "write", sh, file("f2", "/tmp/out")),
        event(3, "fork", sh, vi),
        event(4, "execute", vi, file("f3", "/usr/bin/vi")),
    ])
    assert _sigs(g) == sorted([
        ("file:/etc/passwd", "read", "proc:p1"),
        ("proc:p1", "write", "file:/tmp/out"),
        ("proc:p1", "clone_fork_exec", "proc:p2"),
        ("file:/usr/bin/vi", "read", "proc:p2"),
    ])


def test_repeated_flow_kept_once_per_epoch():
    sh, f = proc("p1", 1, "/bin/sh"), file("f1", "/tmp/x")
    g = _graph([event(1, "write", sh, f), event(2, "write", sh, f), event(3, "read", sh, file("f2", "/etc/a")),
                event(4, "write", sh, f)])
    # the second write repeats the first; the third follows new input and is kept
    assert [e.ts for e in g.edges if e.etype == "write"] == [1, 4]


def test_uid_kind_conflict():
    with pytest.raises(DanglingReference):
        _graph([event(1, "read", proc("x", 1, "/bin/sh"), file("x", "/etc/a"))])


def test_merge_threads_rehomes_edges():
    main, thread = proc("p1", 7, "/usr/sbin/nginx"), proc("t1", 7, "/usr/sbin/nginx", tid=8)
    g = merge_threads(_graph([event(1, "read", main, file("f", "/etc/nginx.conf")),
                              event(2, "write", thread, file("g", "/var/log/access"))]))
    assert len([n for n in g.nodes.values() if n.is_process]) == 1
    assert _sigs(g) == [("file:/etc/nginx.conf", "read", "proc:p1"), ("proc:p1", "write", "file:/var/log/access")]


def test_dedup_objects_groups_same_category():
    sh = proc("p1", 1, "/bin/sh")
    lines = [event(i + 1, "read", sh, file(f"f{i}", f"/etc/conf{i}")) for i in range(4)]
    lines.append(event(10, "write", sh, file("o", "/tmp/out")))
    g = dedup_objects(_graph(lines))
    assert len(g.nodes) == 3
    (read,) = [e for e in g.edges if e.etype == "read"]
    assert read.ts == 4  # object -> process keeps the last event


def test_snapshot_round_trip(tmp_path):
    sh = proc("p1", 1, "/bin/sh")
    g = _graph([event(1, "read", sh, file("f", "/etc/a")), event(2, "write", sh, file("g", "/tmp/b"))])
    path = tmp_path / "g.snap"
    write_snapshot(g, str(path))
    h = read_snapshot(str(path))
    assert h.nodes == g.nodes and sorted(h.edges) == sorted(g.edges)
