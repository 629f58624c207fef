"""Behavior-preserving ego-graph reduction via iterative label propagation."""
from __future__ import annotations

import hashlib
from collections import defaultdict
from typing import Iterable, Optional

import numpy as np

from .graph import Edge
from .partition import EgoGraph

DIRECTIONS = ("forw", "back")


class DepthMismatch(ValueError):
    pass


def sha256_hex(s: str) -> str:
    return hashlib.sha256(s.encode("utf-8")).hexdigest()


def collapse_versions(ego: EgoGraph) -> EgoGraph:
    """Fold node versions onto their entity; duplicate edges keep the earliest ts."""
    if ego.form != "versioned":
        return ego
    nodes = {}
    for v, lab in ego.nodes.items():
        nodes[ego.base[v]] = lab
    first = {}
    for e in ego.edges:
        s, d = ego.base[e.src], ego.base[e.dst]
        if s == d:
            continue
        key = (s, d, e.etype)
        if key not in first or e.ts < first[key]:
            first[key] = e.ts
    edges = [Edge(s, d, t, ts) for (s, d, t), ts in sorted(first.items(), key=lambda kv: (kv[1], kv[0]))]
    return EgoGraph(anchor=ego.anchor, nodes=nodes, edges=edges, k=ego.k, form="collapsed", meta=dict(ego.meta))


def compute_node_hashes(g: EgoGraph, k: int) -> dict:
    """nh[n][direction][l] for l in 0..k, as hex SHA-256 digests.

    Level 0 hashes the abstraction label. Level l hashes the node's level
    l-1 digest followed by the sorted unique ``etype:neighbour digest``
    items over In(n) (forw) or Out(n) (back), all joined with ``|``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    nh = {n: {d: [sha256_hex(lab.abstraction)] for d in DIRECTIONS} for n, lab in g.nodes.items()}
    for l in range(1, k + 1):
        for n in g.nodes:
            fw = sorted({f"{e.etype}:{nh[e.src]['forw'][l - 1]}" for e in g.in_edges(n)})
            bw = sorted({f"{e.etype}:{nh[e.dst]['back'][l - 1]}" for e in g.out_edges(n)})
            nh[n]["forw"].append(sha256_hex(nh[n]["forw"][l - 1] + "|" + "|".join(fw)))
            nh[n]["back"].append(sha256_hex(nh[n]["back"][l - 1] + "|" + "|".join(bw)))
    return nh


def reduce_ego_graph(ego: EgoGraph, nh: dict, k: Optional[int] = None, rng_seed=0) -> EgoGraph:
    """Keep one representative per (etype, neighbourhood hash) bucket.

    Expansion runs level by level from the anchor, through In-edges with
    forw hashes and through Out-edges with back hashes. At level l the
    bucket key of a neighbour uses its hash at depth k-l. Buckets are formed
    per expanding node, so every typed walk of length <= k through the
    anchor survives. A bucket that already contains a selected node reuses
    it; otherwise the representative is drawn with the seeded RNG.
    """
    k = ego.k if k is None else k
    anchor = ego.anchor
    if anchor is None or anchor not in ego.nodes:
        raise ValueError("ego-graph has no anchor")
    for n in ego.nodes:
        if len(nh[n]["forw"]) < k + 1 or len(nh[n]["back"]) < k + 1:
            raise DepthMismatch(f"hashes computed for depth < {k}")
    rng = np.random.default_rng(rng_seed)
    selected = {anchor}
    for direction in DIRECTIONS:
        visited = {anchor}
        frontier = [anchor]
        for l in range(k):
            nxt = []
            for f in frontier:
                buckets = defaultdict(set)
                if direction == "forw":
                    for e in ego.in_edges(f):
                        buckets[e.etype + ":" + nh[e.src]["forw"][k - l]].add(e.src)
                else:
                    for e in ego.out_edges(f):
                        buckets[e.etype + ":" + nh[e.dst]["back"][k - l]].add(e.dst)
                for key in sorted(buckets):
                    cands = sorted(buckets[key])
                    chosen = [v for v in cands if v in selected]
                    rep = chosen[0] if chosen else cands[int(rng.integers(len(cands)))]
                    selected.add(rep)
                    if rep not in visited:
                        visited.add(rep)
                        nxt.append(rep)
            frontier = nxt
    return ego.subgraph(selected, form="reduced")


def walk_keys(g: EgoGraph, start, k: int, direction: str) -> set:
    """Typed walk keys of length 1..k ending (forw) or starting (back) at ``start``.

    A key is (label(start), etype_1, label_1, ..., etype_m, label_m) read
    outward from ``start``.
    """
    keys = set()
    layer = {(start, (g.label(start),))}
    for _ in range(k):
        nxt = set()
        for n, key in layer:
            edges = g.in_edges(n) if direction == "forw" else g.out_edges(n)
            for e in edges:
                v = e.src if direction == "forw" else e.dst
                nxt.add((v, key + (e.etype, g.label(v))))
        keys.update(key for _, key in nxt)
        layer = nxt
    return keys


def anchor_path_keys(g: EgoGraph, k: int) -> set:
    """Typed walk keys u ~> anchor ~> w with at most k hops on each side."""
    a = g.anchor
    ins = walk_keys(g, a, k, "forw") | {(g.label(a),)}
    outs = walk_keys(g, a, k, "back") | {(g.label(a),)}
    paths = set()
    for i in ins:
        head = tuple(reversed(i))
        for o in outs:
            if len(i) == 1 and len(o) == 1:
                continue
            paths.add(head + o[1:])
    return paths


def fingerprint(g: EgoGraph, k: Optional[int] = None) -> str:
    """Digest of the anchor's typed walk-key sets (invariant under reduction)."""
    k = g.k if k is None else k
    a = g.anchor
    parts = [g.label(a)]
    for direction in DIRECTIONS:
        keys = sorted("\x1f".join(key) for key in walk_keys(g, a, k, direction))
        parts.append(direction + "=" + "\x1e".join(keys))
    return sha256_hex("\x1d".join(parts))


def reduce_all(egos: dict, k: int, seed: int = 0) -> dict:
    out = {}
    for anchor in sorted(egos):
        ego = egos[anchor]
        nh = compute_node_hashes(ego, k)
        out[anchor] = reduce_ego_graph(ego, nh, k, rng_seed=[seed, anchor])
    return out


def group_by_fingerprint(egos: Iterable[EgoGraph]) -> dict:
    groups: dict = {}
    for ego in egos:
        fp = ego.meta.get("fingerprint") or fingerprint(ego)
        ego.meta["fingerprint"] = fp
        groups.setdefault(fp, []).append(ego)
    return groups


def dedup_ego_graphs(egos: Iterable[EgoGraph]) -> list:
    """One ego per fingerprint (the first seen); members are recorded in meta."""
    out = []
    for fp, members in group_by_fingerprint(egos).items():
        rep = members[0]
        rep.meta["members"] = [m.anchor for m in members]
        out.append(rep)
    return out
