"""k-hop process ego-graph extraction over a versioned provenance graph.

``forw`` sets grow through In(n) (the ancestry cone) and ``back`` sets
through Out(n) (the descendant cone). Versions of one entity sit at the same
depth: a version inherits the ancestry of its predecessor and the descendants
of its successor, so every cone respects event time. Sinks never expand past
depth 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

from .graph import Edge
from .versioning import VersionedGraph


class NodeLabel(NamedTuple):
    kind: str
    abstraction: str


@dataclass
class EgoGraph:
    """A labeled graph around an anchor process.

    ``form`` is one of versioned, collapsed, reduced (or query for raw query
    graphs). For the versioned form node ids are version ids and ``base``
    maps them to provenance node ids.
    """

    anchor: Optional[int]
    nodes: dict
    edges: list
    k: int = 3
    form: str = "collapsed"
    base: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self._in = self._out = None

    def _index(self):
        self._in = {n: [] for n in self.nodes}
        self._out = {n: [] for n in self.nodes}
        for e in self.edges:
            self._out[e.src].append(e)
            self._in[e.dst].append(e)

    def in_edges(self, n):
        if self._in is None:
            self._index()
        return self._in[n]

    def out_edges(self, n):
        if self._out is None:
            self._index()
        return self._out[n]

    def invalidate(self):
        self._in = self._out = None

    def label(self, n) -> str:
        return self.nodes[n].abstraction

    def processes(self) -> list:
        return sorted(n for n, lab in self.nodes.items() if lab.kind == "process")

    def signature(self, e: Edge) -> tuple:
        return (self.nodes[e.src].abstraction, e.etype, self.nodes[e.dst].abstraction)

    def edge_signatures(self) -> list:
        return [self.signature(e) for e in self.edges]

    def num_nodes(self):
        return len(self.nodes)

    def num_edges(self):
        return len(self.edges)

    def copy(self, **changes) -> "EgoGraph":
        kw = dict(anchor=self.anchor, nodes=dict(self.nodes), edges=list(self.edges), k=self.k,
                  form=self.form, base=dict(self.base), meta=dict(self.meta))
        kw.update(changes)
        return EgoGraph(**kw)

    def subgraph(self, keep, **changes) -> "EgoGraph":
        keep = set(keep)
        nodes = {n: lab for n, lab in self.nodes.items() if n in keep}
        edges = [e for e in self.edges if e.src in keep and e.dst in keep]
        return self.copy(nodes=nodes, edges=edges, base={n: b for n, b in self.base.items() if n in keep},
                         **changes)

    def __repr__(self):
        return f"EgoGraph(anchor={self.anchor}, form={self.form}, nodes={len(self.nodes)}, edges={len(self.edges)})"


def _hop_sets(vg: VersionedGraph, k: int):
    """Return (forw[k], back[k]) lists indexed by version id."""
    n = len(vg)
    forw = [frozenset((v,)) for v in range(n)]
    back = list(forw)
    chains = list(vg.chains.values())
    for _ in range(k):
        new_f = [None] * n
        new_b = [None] * n
        for chain in chains:
            # ancestry: walk the chain oldest first so each version can reuse its predecessor
            prev = None
            for v in chain:
                if vg.sink[v]:
                    s = forw[v]
                else:
                    acc = set(forw[v])
                    for e in vg.ins[v]:
                        acc |= forw[e.src]
                    if prev is not None and not vg.sink[prev]:
                        acc |= new_f[prev]
                    s = frozenset(acc)
                new_f[v] = s
                prev = v
            nxt = None
            for v in reversed(chain):
                if vg.sink[v]:
                    s = back[v]
                else:
                    acc = set(back[v])
                    for e in vg.outs[v]:
                        acc |= back[e.dst]
                    if nxt is not None and not vg.sink[nxt]:
                        acc |= new_b[nxt]
                    s = frozenset(acc)
                new_b[v] = s
                nxt = v
        forw, back = new_f, new_b
    return forw, back


def versioned_ego(vg: VersionedGraph, anchor: int, members, k: int) -> EgoGraph:
    members = set(members)
    nodes = {}
    base = {}
    for v in members:
        vn = vg.vnodes[v]
        node = vg.base.nodes[vn.base]
        nodes[v] = NodeLabel(node.kind, node.abstraction)
        base[v] = vn.base
    edges = [e for v in sorted(members) for e in vg.outs[v] if e.dst in members]
    return EgoGraph(anchor=anchor, nodes=nodes, edges=edges, k=k, form="versioned", base=base)


def extract_ego_graphs(vg: VersionedGraph, k: int = 3) -> dict:
    """Ego-graph of every process entity via one dynamic-programming sweep per hop.

    The anchor covers the entity's whole version chain: its ancestry cone is
    that of the newest version and its descendant cone that of the oldest.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    forw, back = _hop_sets(vg, k)
    out = {}
    for p in vg.process_bases():
        chain = vg.chains[p]
        members = forw[chain[-1]] | back[chain[0]]
        out[p] = versioned_ego(vg, p, members, k)
    return out


def ego_graph_oracle(vg: VersionedGraph, anchor: int, k: int) -> EgoGraph:
    """Direct traversal with the same rules; a test oracle for small graphs."""
    chain = vg.chains[anchor]
    if k == 0:
        return versioned_ego(vg, anchor, set(chain[:1]), k)

    def cone(start, step, sibling):
        best = {start: k}
        stack = [start]
        while stack:
            v = stack.pop()
            budget = best[v]
            if vg.sink[v] or budget == 0:
                continue
            moves = [(w, budget - 1) for w in step(v)]
            sib = sibling(v)
            if sib is not None:
                moves.append((sib, budget))
            for w, b in moves:
                if b > best.get(w, -1):
                    best[w] = b
                    stack.append(w)
        return set(best)

    anc = cone(chain[-1], lambda v: [e.src for e in vg.ins[v]], vg.prev_version)
    desc = cone(chain[0], lambda v: [e.dst for e in vg.outs[v]], vg.next_version)
    return versioned_ego(vg, anchor, anc | desc, k)
