"""Training-pair generation by flow-frequency sampling."""
from __future__ import annotations

import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import networkx as nx
import numpy as np
from networkx.algorithms import isomorphism

from .partition import EgoGraph

log = logging.getLogger(__name__)

POSITIVE, NEGATIVE = 1, 0


class EmptyEgo(ValueError):
    pass


class EmptyCorpus(ValueError):
    pass


class FlowPath(NamedTuple):
    nodes: tuple
    edges: tuple  # Edge records along the path, in flow order
    key: str


def _flow_key(g: EgoGraph, nodes, edges) -> str:
    parts = [g.label(nodes[0])]
    for e, n in zip(edges, nodes[1:]):
        parts += [e.etype, g.label(n)]
    return "|".join(parts)


def _one_sided(g: EgoGraph, k: int, direction: str) -> list:
    """Simple paths of 1..k edges leaving the anchor outward; returned as (nodes, edges)."""
    out = []
    a = g.anchor

    def dfs(node, nodes, edges):
        if edges:
            out.append((tuple(nodes), tuple(edges)))
        if len(edges) == k:
            return
        nbrs = g.in_edges(node) if direction == "in" else g.out_edges(node)
        for e in nbrs:
            v = e.src if direction == "in" else e.dst
            if v in nodes:
                continue
            nodes.append(v)
            edges.append(e)
            dfs(v, nodes, edges)
            nodes.pop()
            edges.pop()

    dfs(a, [a], [])
    return out


def enumerate_flows(ego: EgoGraph, k: Optional[int] = None, limit: Optional[int] = None) -> list:
    """All simple paths u ~> anchor ~> w with at most k edges on either side.

    One-sided flows (only u ~> anchor, or only anchor ~> w) are included.
    ``limit`` truncates the (deterministically ordered) result.
    """
    k = ego.k if k is None else k
    if ego.anchor is None:
        raise ValueError("flows need an anchored graph")
    ins = _one_sided(ego, k, "in")
    outs = _one_sided(ego, k, "out")
    flows = []
    a = ego.anchor
    empty = ((a,), ())
    for inn, ie in [empty] + ins:
        head_nodes = tuple(reversed(inn))
        head_edges = tuple(reversed(ie))
        used = set(inn)
        for onn, oe in [empty] + outs:
            if not ie and not oe:
                continue
            if used.intersection(onn[1:]):
                continue
            nodes = head_nodes + onn[1:]
            edges = head_edges + oe
            flows.append(FlowPath(nodes, edges, _flow_key(ego, nodes, edges)))
            if limit is not None and len(flows) >= limit:
                return flows
    return flows


def flow_keys(ego: EgoGraph, k: Optional[int] = None, limit: Optional[int] = None) -> set:
    return {f.key for f in enumerate_flows(ego, k, limit)}


def group_key(ego: EgoGraph) -> str:
    return ego.meta.get("anchor_key") or ego.meta.get("anchor_abstraction") or ego.label(ego.anchor)


def flow_statistics(egos: Sequence[EgoGraph], k: Optional[int] = None, limit: Optional[int] = None) -> dict:
    """group key -> Counter(flow key -> number of egos of that group containing it)."""
    stats: dict = defaultdict(Counter)
    for ego in egos:
        stats[group_key(ego)].update(flow_keys(ego, k, limit))
    return dict(stats)


def edge_subgraph(ego: EgoGraph, edges) -> EgoGraph:
    edges = list(dict.fromkeys(edges))
    keep = {ego.anchor} | {e.src for e in edges} | {e.dst for e in edges}
    nodes = {n: ego.nodes[n] for n in sorted(keep)}
    return EgoGraph(anchor=ego.anchor, nodes=nodes, edges=edges, k=ego.k, form="query",
                    meta={"source": ego.anchor})


def expand_flow(ego: EgoGraph, flow: FlowPath, target_edges: tuple, rng) -> EgoGraph:
    """Grow a flow by random incident edges until the drawn target size is reached."""
    lo, hi = target_edges
    goal = int(rng.integers(lo, hi + 1))
    chosen = list(dict.fromkeys(flow.edges))
    chosen_set = set(chosen)
    nodes = set(flow.nodes)
    while len(chosen) < goal:
        cands = sorted({e for n in nodes for e in ego.in_edges(n) + ego.out_edges(n)} - chosen_set)
        if not cands:
            break
        e = cands[int(rng.integers(len(cands)))]
        chosen.append(e)
        chosen_set.add(e)
        nodes.update((e.src, e.dst))
    return edge_subgraph(ego, chosen)


def choose_flow(flows: list, freq: Optional[Counter], rng) -> FlowPath:
    """Pick a flow key with probability proportional to 1/frequency, then a flow of that key."""
    by_key = defaultdict(list)
    for f in flows:
        by_key[f.key].append(f)
    keys = sorted(by_key)
    w = np.array([1.0 / max(1, freq.get(key, 1)) if freq else 1.0 for key in keys])
    key = keys[int(rng.choice(len(keys), p=w / w.sum()))]
    group = by_key[key]
    return group[int(rng.integers(len(group)))]


def sample_positive(ego: EgoGraph, flow_stats: Optional[dict] = None, target_edges=(10, 15), rng=None,
                    flows: Optional[list] = None) -> EgoGraph:
    """An edge-induced subgraph of ``ego`` grown around an inverse-frequency flow."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    flows = enumerate_flows(ego) if flows is None else flows
    if not flows:
        raise EmptyEgo(f"ego of anchor {ego.anchor} has no flows")
    freq = flow_stats.get(group_key(ego)) if flow_stats else None
    flow = choose_flow(flows, freq, rng)
    return expand_flow(ego, flow, target_edges, rng)


def _two_hop_keys(g: EgoGraph) -> set:
    keys = set()
    for e1 in g.edges:
        for e2 in g.out_edges(e1.dst):
            keys.add((g.label(e1.src), e1.etype, g.label(e1.dst), e2.etype, g.label(e2.dst)))
    return keys


def validate_negative(query: EgoGraph, target: EgoGraph) -> bool:
    """True when ``query`` is certainly not contained in ``target``.

    Either some node/edge abstraction of the query is missing from the
    target, or some 2-hop typed flow of the query is.
    """
    t_nodes = {(lab.kind, lab.abstraction) for lab in target.nodes.values()}
    if any((lab.kind, lab.abstraction) not in t_nodes for lab in query.nodes.values()):
        return True
    t_edges = set(target.edge_signatures())
    if any(sig not in t_edges for sig in query.edge_signatures()):
        return True
    return not _two_hop_keys(query) <= _two_hop_keys(target)


def to_networkx(g: EgoGraph) -> nx.DiGraph:
    out = nx.DiGraph()
    for n, lab in g.nodes.items():
        out.add_node(n, label=(lab.kind, lab.abstraction))
    for e in g.edges:
        if out.has_edge(e.src, e.dst):
            out[e.src][e.dst]["etypes"].add(e.etype)
        else:
            out.add_edge(e.src, e.dst, etypes={e.etype})
    return out


def is_subgraph(query: EgoGraph, target: EgoGraph) -> bool:
    """Exact labeled subgraph monomorphism test (small graphs only)."""
    gm = isomorphism.DiGraphMatcher(
        to_networkx(target), to_networkx(query),
        node_match=lambda t, q: t["label"] == q["label"],
        edge_match=lambda t, q: q["etypes"] <= t["etypes"],
    )
    return gm.subgraph_is_monomorphic()


@dataclass
class SamplePair:
    query: EgoGraph
    target: EgoGraph
    label: int
    branch: str = "positive"


@dataclass
class PairSampler:
    """Draws positive and negative pairs around a fixed ego corpus."""

    egos: list
    k: int = 3
    target_edges: tuple = (10, 15)
    pool_min: int = 3
    retries: int = 32
    flow_limit: Optional[int] = 20000
    sources: Optional[list] = None
    _flows: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.egos = [e for e in self.egos if e.edges]
        if not self.egos:
            raise EmptyCorpus("no ego-graph with edges")
        self.sources = [e for e in (self.sources or self.egos) if e.edges]
        self.stats = flow_statistics(self.sources, self.k, self.flow_limit)
        self.by_key = defaultdict(list)
        self.by_abs = defaultdict(list)
        for i, e in enumerate(self.sources):
            self.by_key[group_key(e)].append(i)
            self.by_abs[e.meta.get("anchor_abstraction") or e.label(e.anchor)].append(i)

    def flows(self, ego: EgoGraph) -> list:
        key = id(ego)
        if key not in self._flows:
            self._flows[key] = enumerate_flows(ego, self.k, self.flow_limit)
        return self._flows[key]

    def positive(self, target: EgoGraph, rng) -> SamplePair:
        q = sample_positive(target, self.stats, self.target_edges, rng, flows=self.flows(target))
        return SamplePair(q, target, POSITIVE, "positive")

    def _branch_pool(self, target: EgoGraph) -> tuple:
        fp = target.meta.get("fingerprint")

        def ok(i):
            src = self.sources[i]
            return src is not target and (fp is None or src.meta.get("fingerprint") != fp)

        same_key = [i for i in self.by_key.get(group_key(target), []) if ok(i)]
        if len(same_key) >= self.pool_min:
            return "same_process", same_key
        key = group_key(target)
        ab = target.meta.get("anchor_abstraction") or target.label(target.anchor)
        same_abs = [i for i in self.by_abs.get(ab, []) if ok(i) and group_key(self.sources[i]) != key]
        if same_abs:
            return "same_abstraction", same_abs
        return "random", [i for i in range(len(self.sources)) if ok(i)]

    def negative(self, target: EgoGraph, rng) -> Optional[SamplePair]:
        branch, pool = self._branch_pool(target)
        everyone = [i for i in range(len(self.sources)) if self.sources[i] is not target]
        if not everyone:
            raise EmptyCorpus("no other ego-graph to draw negatives from")
        for attempt in range(self.retries):
            if attempt == self.retries // 2 and branch != "random":
                branch, pool = "random", everyone
            if not pool:
                branch, pool = "random", everyone
            src = self.sources[pool[int(rng.integers(len(pool)))]]
            flows = self.flows(src)
            if not flows:
                continue
            freq = self.stats.get(group_key(src)) if branch != "random" else None
            q = expand_flow(src, choose_flow(flows, freq, rng), self.target_edges, rng)
            if validate_negative(q, target):
                return SamplePair(q, target, NEGATIVE, branch)
        log.debug("no valid negative for anchor %s after %d tries", target.anchor, self.retries)
        return None

    def pairs(self, n_pairs: int, rng) -> list:
        """``n_pairs`` positives and as many negatives, targets drawn uniformly."""
        out = []
        while len(out) < 2 * n_pairs:
            target = self.egos[int(rng.integers(len(self.egos)))]
            neg = self.negative(target, rng)
            if neg is None:
                continue
            out.append(self.positive(target, rng))
            out.append(neg)
        return out


def split_egos(egos: list, train_fraction: float, seed) -> tuple:
    """Random ego-level split made before any pairing."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(egos))
    cut = int(round(train_fraction * len(egos)))
    return [egos[i] for i in sorted(order[:cut])], [egos[i] for i in sorted(order[cut:])]


SAMPLES_FORMAT = "provsearch-samples"


def write_samples(path: str, pairs: list) -> None:
    """Sample corpus: header, each target ego once, then (split, pair) records.

    ``pairs`` holds (split, SamplePair) tuples.
    """
    from .graphio import dumps, ego_to_dict

    pos: dict = {}
    egos = []
    for _, p in pairs:
        if id(p.target) not in pos:
            pos[id(p.target)] = len(egos)
            egos.append(p.target)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps({"format": SAMPLES_FORMAT, "version": 1, "egos": len(egos), "pairs": len(pairs)}) + "\n")
        for e in egos:
            fh.write(dumps(ego_to_dict(e)) + "\n")
        for split, p in pairs:
            rec = {"split": split, "label": p.label, "branch": p.branch, "target": pos[id(p.target)],
                   "query": ego_to_dict(p.query)}
            fh.write(dumps(rec) + "\n")


def read_samples(path: str) -> tuple:
    """Return (egos, list of (split, SamplePair))."""
    import json

    from .graphio import GraphFormatError, ego_from_dict

    with open(path, encoding="utf-8") as fh:
        head = json.loads(fh.readline())
        if head.get("format") != SAMPLES_FORMAT:
            raise GraphFormatError(f"{path}: not a sample corpus")
        egos = [ego_from_dict(json.loads(fh.readline()), form="reduced") for _ in range(head["egos"])]
        pairs = []
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            pairs.append((rec["split"], SamplePair(ego_from_dict(rec["query"]), egos[rec["target"]], int(rec["label"]),
                                                   rec.get("branch", ""))))
    if len(pairs) != head["pairs"]:
        raise GraphFormatError(f"{path}: pair count mismatch")
    return egos, pairs


def generate_pairs(egos: list, n_train: int, n_test: int, train_fraction: float = 0.8, seed: int = 0,
                   k: int = 3, target_edges=(10, 15), pool_min: int = 3, retries: int = 32) -> list:
    """Split egos 80/20 first, then draw balanced train and test pairs.

    Training pairs only touch training egos; test targets come from the
    held-out egos, with negatives drawn from the whole corpus.
    """
    egos = [e for e in egos if e.edges]
    train, test = split_egos(egos, train_fraction, seed)
    rng = np.random.default_rng([seed, 1])
    out = []
    kw = dict(k=k, target_edges=tuple(target_edges), pool_min=pool_min, retries=retries)
    if n_train:
        out += [("train", p) for p in PairSampler(train, **kw).pairs(n_train // 2, rng)]
    if n_test and test:
        rng = np.random.default_rng([seed, 2])
        out += [("test", p) for p in PairSampler(test, sources=egos, **kw).pairs(n_test // 2, rng)]
    return out
