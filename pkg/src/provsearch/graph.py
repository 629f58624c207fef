"""Typed, timestamped provenance graph and its simplification passes."""
from __future__ import annotations

import logging
import struct
from collections import defaultdict
from dataclasses import dataclass, replace
from typing import Iterable, NamedTuple, Optional

from .events import OSProfile, RawEvent, abstract

log = logging.getLogger(__name__)

ETYPES = ("read", "write", "modify_attr", "clone_fork_exec")
KINDS = ("process", "file", "socket", "registry")
WINDOW_NS = 600 * 10**9


class GraphError(ValueError):
    pass


class DanglingReference(GraphError):
    pass


class OrphanThread(UserWarning):
    pass


@dataclass(frozen=True)
class Node:
    id: int
    kind: str
    abstraction: str
    key: str
    first_ts: int
    last_ts: int
    pid: Optional[int] = None
    tid: Optional[int] = None
    image_path: Optional[str] = None

    @property
    def is_process(self) -> bool:
        return self.kind == "process"


class Edge(NamedTuple):
    src: int
    dst: int
    etype: str
    ts: int


class ProvGraph:
    """Directed multigraph; edges point along the information flow."""

    def __init__(self, nodes: dict, edges: list):
        self.nodes = nodes
        self.edges = edges
        self._in = None
        self._out = None

    def _build_index(self):
        ins, outs = defaultdict(list), defaultdict(list)
        for e in self.edges:
            outs[e.src].append(e)
            ins[e.dst].append(e)
        self._in, self._out = ins, outs

    def in_edges(self, n: int) -> list:
        if self._in is None:
            self._build_index()
        return self._in.get(n, [])

    def out_edges(self, n: int) -> list:
        if self._out is None:
            self._build_index()
        return self._out.get(n, [])

    def process_ids(self) -> list:
        return sorted(n for n, node in self.nodes.items() if node.is_process)

    def edge_signatures(self) -> set:
        nodes = self.nodes
        return {(nodes[e.src].abstraction, e.etype, nodes[e.dst].abstraction) for e in self.edges}

    def __repr__(self):
        return f"ProvGraph(nodes={len(self.nodes)}, edges={len(self.edges)})"


def _node_key(ent, ts: int, window_ns: int, case_insensitive: bool) -> str:
    if ent.kind == "process":
        return "proc:" + ent.uid
    if ent.kind == "socket":
        return f"sock:{ent.src_ip or ''}>{ent.dst_ip}:{ent.dst_port}#{ts // window_ns}"
    path = ent.path.lower() if case_insensitive else ent.path
    return f"{ent.kind}:{path}"


def _flow(e: RawEvent) -> tuple:
    """Map an event to (source entity, destination entity, etype)."""
    t = e.event_type
    if t in ("read", "recv"):
        return e.object, e.subject, "read"
    if t in ("write", "send", "connect"):
        return e.subject, e.object, "write"
    if t == "modify_attr":
        return e.subject, e.object, "modify_attr"
    if e.object.kind == "process":
        return e.subject, e.object, "clone_fork_exec"
    if t == "execute":
        # exec of an image file: the file content flows into the process
        return e.object, e.subject, "read"
    raise GraphError(f"{t} event with non-process object {e.object.uid}")


def build_graph(events: Iterable[RawEvent], profile: OSProfile, window_ns: int = WINDOW_NS) -> ProvGraph:
    """Build a provenance graph from filtered events.

    Identical flows between the same pair are kept once per version epoch:
    a repeat is dropped unless the source received, or the destination
    emitted, something in between.
    """
    ordered = sorted(enumerate(events), key=lambda ie: (ie[1].ts, ie[0]))
    ids: dict = {}
    info: dict = {}
    uid_kind: dict = {}
    edges: list = []
    recv_epoch: dict = defaultdict(int)
    emit_epoch: dict = defaultdict(int)
    seen: set = set()

    def node_for(ent, ts):
        known = uid_kind.setdefault(ent.uid, ent.kind)
        if known != ent.kind:
            raise DanglingReference(f"uid {ent.uid} seen as {known} and {ent.kind}")
        key = _node_key(ent, ts, window_ns, profile.case_insensitive)
        nid = ids.get(key)
        if nid is None:
            nid = ids[key] = len(ids)
            info[nid] = {
                "kind": ent.kind, "key": key, "abstraction": abstract(ent, profile),
                "first_ts": ts, "last_ts": ts,
                "pid": ent.pid, "tid": ent.tid, "image_path": ent.image_path,
            }
        else:
            rec = info[nid]
            rec["last_ts"] = ts
            for name in ("pid", "tid", "image_path"):
                if rec[name] is None and getattr(ent, name) is not None:
                    rec[name] = getattr(ent, name)
        return nid

    for _, ev in ordered:
        src_ent, dst_ent, etype = _flow(ev)
        src = node_for(src_ent, ev.ts)
        dst = node_for(dst_ent, ev.ts)
        if src == dst:
            continue
        key = (src, dst, etype, recv_epoch[src], emit_epoch[dst])
        if key in seen:
            continue
        seen.add(key)
        edges.append(Edge(src, dst, etype, ev.ts))
        emit_epoch[src] += 1
        recv_epoch[dst] += 1

    nodes = {nid: Node(id=nid, **rec) for nid, rec in info.items()}
    return ProvGraph(nodes, edges)


def thread_parents(g: ProvGraph) -> dict:
    """Map each thread node id to its parent process node id (None if unknown)."""
    mains = {}
    for node in sorted(g.nodes.values(), key=lambda n: (n.first_ts, n.id)):
        if node.is_process and node.pid is not None and (node.tid is None or node.tid == node.pid):
            mains.setdefault(node.pid, node.id)
    out = {}
    for node in g.nodes.values():
        if node.is_process and node.tid is not None and node.pid is not None and node.tid != node.pid:
            out[node.id] = mains.get(node.pid)
    return out


def merge_threads(g: ProvGraph, parents: Optional[dict] = None) -> ProvGraph:
    """Re-home thread nodes' edges onto their parent process node."""
    if parents is None:
        parents = thread_parents(g)
    remap = {}
    for tid_node, parent in parents.items():
        if parent is None:
            log.warning("orphan thread node %s kept as a process", g.nodes[tid_node].key)
            continue
        remap[tid_node] = parent
    if not remap:
        return g
    edges = []
    for e in g.edges:
        src, dst = remap.get(e.src, e.src), remap.get(e.dst, e.dst)
        if src != dst:
            edges.append(Edge(src, dst, e.etype, e.ts))
    nodes = {nid: n for nid, n in g.nodes.items() if nid not in remap}
    for tid_node, parent in remap.items():
        t, p = g.nodes[tid_node], nodes[parent]
        nodes[parent] = replace(p, first_ts=min(p.first_ts, t.first_ts), last_ts=max(p.last_ts, t.last_ts))
    return ProvGraph(nodes, edges)


def dedup_objects(g: ProvGraph) -> ProvGraph:
    """Merge same-category objects that hang off a single process the same way.

    Object nodes are grouped by (process, abstraction, set of (etype,
    direction)) when their only neighbour is that process. Each group of two
    or more becomes one node; process->object edges keep the first timestamp
    and object->process edges the last.
    """
    groups = defaultdict(list)
    for nid, node in g.nodes.items():
        if node.is_process:
            continue
        ins, outs = g.in_edges(nid), g.out_edges(nid)
        nbrs = {e.src for e in ins} | {e.dst for e in outs}
        if len(nbrs) != 1:
            continue
        (proc,) = nbrs
        if not g.nodes[proc].is_process:
            continue
        sig = frozenset([(e.etype, "in") for e in ins] + [(e.etype, "out") for e in outs])
        groups[(proc, node.abstraction, sig)].append(nid)

    merged_into = {}
    for members in groups.values():
        if len(members) > 1:
            members.sort()
            for m in members:
                merged_into[m] = members[0]
    if not merged_into:
        return g

    nodes = {}
    for nid, node in g.nodes.items():
        rep = merged_into.get(nid, nid)
        if rep == nid and nid not in merged_into:
            nodes[nid] = node
    for nid, rep in merged_into.items():
        node = g.nodes[nid]
        cur = nodes.get(rep)
        if cur is None:
            nodes[rep] = replace(g.nodes[rep], key=f"{node.kind}-group:{node.abstraction}@{rep}",
                                 first_ts=node.first_ts, last_ts=node.last_ts)
        else:
            nodes[rep] = replace(cur, first_ts=min(cur.first_ts, node.first_ts),
                                 last_ts=max(cur.last_ts, node.last_ts))

    edges = []
    collapsed = {}
    for e in g.edges:
        if e.src in merged_into or e.dst in merged_into:
            src, dst = merged_into.get(e.src, e.src), merged_into.get(e.dst, e.dst)
            key = (src, dst, e.etype)
            prev = collapsed.get(key)
            if prev is None:
                collapsed[key] = e.ts
            elif e.src in merged_into:
                collapsed[key] = max(prev, e.ts)  # object -> process: last event
            else:
                collapsed[key] = min(prev, e.ts)  # process -> object: first event
        else:
            edges.append(e)
    edges.extend(Edge(s, d, t, ts) for (s, d, t), ts in collapsed.items())
    edges.sort(key=lambda e: (e.ts, e.src, e.dst, e.etype))
    return ProvGraph(nodes, edges)


def simplify(g: ProvGraph) -> ProvGraph:
    return dedup_objects(merge_threads(g))


# -- snapshot I/O ---------------------------------------------------------

_MAGIC = b"PVGS"
_VERSION = 1
_NONE32 = 0xFFFFFFFF
_NONE64 = -(2**63)


def write_snapshot(g: ProvGraph, path: str) -> None:
    strings: dict = {}

    def sid(s):
        if s is None:
            return _NONE32
        return strings.setdefault(s, len(strings))

    node_rows = []
    for nid in sorted(g.nodes):
        n = g.nodes[nid]
        node_rows.append(struct.pack(
            "<IBIIqqqqI", nid, KINDS.index(n.kind), sid(n.abstraction), sid(n.key),
            n.first_ts, n.last_ts,
            _NONE64 if n.pid is None else n.pid, _NONE64 if n.tid is None else n.tid,
            sid(n.image_path)))
    edge_rows = [struct.pack("<IIBq", e.src, e.dst, ETYPES.index(e.etype), e.ts) for e in g.edges]
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<HIII", _VERSION, len(strings), len(node_rows), len(edge_rows)))
        for s in strings:
            b = s.encode("utf-8")
            fh.write(struct.pack("<I", len(b)) + b)
        fh.writelines(node_rows)
        fh.writelines(edge_rows)


def read_snapshot(path: str) -> ProvGraph:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _MAGIC:
        raise GraphError("not a graph snapshot")
    version, n_str, n_nodes, n_edges = struct.unpack_from("<HIII", data, 4)
    if version != _VERSION:
        raise GraphError(f"unsupported snapshot version {version}")
    off = 4 + struct.calcsize("<HIII")
    strings = []
    for _ in range(n_str):
        (ln,) = struct.unpack_from("<I", data, off)
        off += 4
        strings.append(data[off:off + ln].decode("utf-8"))
        off += ln

    def s(i):
        return None if i == _NONE32 else strings[i]

    nodes = {}
    size = struct.calcsize("<IBIIqqqqI")
    for _ in range(n_nodes):
        nid, kind, ab, key, f, l, pid, tid, img = struct.unpack_from("<IBIIqqqqI", data, off)
        off += size
        nodes[nid] = Node(nid, KINDS[kind], s(ab), s(key), f, l,
                          None if pid == _NONE64 else pid, None if tid == _NONE64 else tid, s(img))
    edges = []
    size = struct.calcsize("<IIBq")
    for _ in range(n_edges):
        src, dst, et, ts = struct.unpack_from("<IIBq", data, off)
        off += size
        edges.append(Edge(src, dst, ETYPES[et], ts))
    return ProvGraph(nodes, edges)


def dump_text(g: ProvGraph) -> str:
    lines = []
    for nid in sorted(g.nodes):
        n = g.nodes[nid]
        lines.append(f"N {nid} {n.kind} {n.abstraction} {n.key} {n.first_ts} {n.last_ts}")
    for e in g.edges:
        lines.append(f"E {e.src} {e.dst} {e.etype} {e.ts}")
    return "\n".join(lines) + "\n"
