"""Node versioning and sink designation against dependence explosion."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .graph import Edge, ProvGraph


class VersionedNode(NamedTuple):
    base: int
    version: int
    creation_ts: int


@dataclass
class SinkConfig:
    degree_percentile: float = 99.9
    degree_absolute: Optional[int] = None


class VersionedGraph:
    """Provenance graph over node versions.

    Version edges v_i -> v_{i+1} are implicit: they are not in ``edges`` or
    the In/Out indexes, only in ``chains``.
    """

    def __init__(self, base: ProvGraph, vnodes: list, edges: list, chains: dict):
        self.base = base
        self.vnodes = vnodes
        self.edges = edges
        self.chains = chains
        self.sink = [False] * len(vnodes)
        self.ins = [[] for _ in vnodes]
        self.outs = [[] for _ in vnodes]
        for e in edges:
            self.outs[e.src].append(e)
            self.ins[e.dst].append(e)

    def __len__(self):
        return len(self.vnodes)

    def next_version(self, v: int) -> Optional[int]:
        vn = self.vnodes[v]
        chain = self.chains[vn.base]
        return chain[vn.version + 1] if vn.version + 1 < len(chain) else None

    def prev_version(self, v: int) -> Optional[int]:
        vn = self.vnodes[v]
        return self.chains[vn.base][vn.version - 1] if vn.version > 0 else None

    def version_edges(self) -> list:
        out = []
        for chain in self.chains.values():
            for a, b in zip(chain, chain[1:]):
                out.append(Edge(a, b, "version", self.vnodes[b].creation_ts))
        return out

    def node(self, v: int):
        return self.base.nodes[self.vnodes[v].base]

    def process_bases(self) -> list:
        return self.base.process_ids()


def _edge_order(e: Edge):
    return (e.ts, e.src, e.dst, e.etype)


def version_graph(g: ProvGraph) -> VersionedGraph:
    """Create a new node version whenever a node receives after having emitted."""
    vnodes: list = []
    chains: dict = {}
    current: dict = {}
    emitted: dict = {}
    for nid in sorted(g.nodes):
        v = len(vnodes)
        vnodes.append(VersionedNode(nid, 0, g.nodes[nid].first_ts))
        chains[nid] = [v]
        current[nid] = v
        emitted[nid] = False

    edges = []
    seen = set()
    for e in sorted(g.edges, key=_edge_order):
        src_v = current[e.src]
        emitted[e.src] = True
        if emitted[e.dst]:
            v = len(vnodes)
            vnodes.append(VersionedNode(e.dst, len(chains[e.dst]), e.ts))
            chains[e.dst].append(v)
            current[e.dst] = v
            emitted[e.dst] = False
        key = (src_v, current[e.dst], e.etype)
        if key in seen:
            continue
        seen.add(key)
        edges.append(Edge(src_v, current[e.dst], e.etype, e.ts))
    return VersionedGraph(g, vnodes, edges, chains)


def unversioned(g: ProvGraph) -> VersionedGraph:
    """One version per node and no sinks; used when versioning is switched off."""
    vnodes, chains, index = [], {}, {}
    for nid in sorted(g.nodes):
        index[nid] = len(vnodes)
        chains[nid] = [len(vnodes)]
        vnodes.append(VersionedNode(nid, 0, g.nodes[nid].first_ts))
    seen, edges = set(), []
    for e in sorted(g.edges, key=_edge_order):
        key = (index[e.src], index[e.dst], e.etype)
        if key not in seen:
            seen.add(key)
            edges.append(Edge(index[e.src], index[e.dst], e.etype, e.ts))
    return VersionedGraph(g, vnodes, edges, chains)


def base_degrees(g: ProvGraph) -> dict:
    indeg = {n: 0 for n in g.nodes}
    outdeg = {n: 0 for n in g.nodes}
    for e in g.edges:
        outdeg[e.src] += 1
        indeg[e.dst] += 1
    return indeg, outdeg


def designate_sinks(vg: VersionedGraph, cfg: SinkConfig = SinkConfig()) -> VersionedGraph:
    """Flag zero in/out-degree objects and extreme-degree nodes as sinks (in place)."""
    g = vg.base
    indeg, outdeg = base_degrees(g)
    degree = {n: indeg[n] + outdeg[n] for n in g.nodes}
    if cfg.degree_absolute is not None:
        threshold = cfg.degree_absolute
    elif degree:
        threshold = float(np.percentile(np.fromiter(degree.values(), dtype=float), cfg.degree_percentile))
    else:
        threshold = 0
    sink_base = set()
    for n, node in g.nodes.items():
        if not node.is_process and (indeg[n] == 0 or outdeg[n] == 0):
            sink_base.add(n)
        elif degree[n] > threshold:
            sink_base.add(n)
    vg.sink = [vn.base in sink_base for vn in vg.vnodes]
    vg.sink_threshold = threshold
    return vg
