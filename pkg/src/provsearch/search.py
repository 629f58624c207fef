"""Offline embedding index and online query evaluation."""
from __future__ import annotations

import hashlib
import json
import logging
import struct
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .config import PipelineConfig
from .embedder import Model, order_penalty
from .graph import ETYPES, Edge
from .partition import EgoGraph
from .pipeline import prepare_query

log = logging.getLogger(__name__)

_MAGIC = b"PVSI"
_ETYPE_INDEX = {t: i for i, t in enumerate(ETYPES)}


class EmptyQuery(ValueError):
    pass


class NoProcessAnchor(ValueError):
    pass


class EmptyQueryEdges(ValueError):
    pass


@dataclass
class EmbeddingIndex:
    """Densely packed (anchor, abstraction, fingerprint, z_p) records."""

    anchors: np.ndarray
    abstractions: list
    fingerprints: list
    members: list
    z: np.ndarray
    model_digest: str = ""

    def __len__(self):
        return len(self.anchors)

    @property
    def d(self) -> int:
        return self.z.shape[1]

    def save(self, path: str) -> None:
        head = {"count": len(self), "d": int(self.z.shape[1]) if self.z.ndim == 2 else 0,
                "dtype": self.z.dtype.name, "model": self.model_digest,
                "anchors": [int(a) for a in self.anchors], "abstractions": self.abstractions,
                "fingerprints": self.fingerprints, "members": self.members}
        blob = json.dumps(head, sort_keys=True, separators=(",", ":")).encode()
        with open(path, "wb") as fh:
            fh.write(_MAGIC + struct.pack("<Q", len(blob)) + blob)
            fh.write(np.ascontiguousarray(self.z, dtype=self.z.dtype.newbyteorder("<")).tobytes())

    @classmethod
    def load(cls, path: str) -> "EmbeddingIndex":
        with open(path, "rb") as fh:
            data = fh.read()
        if data[:4] != _MAGIC:
            raise ValueError(f"{path}: not an embedding index")
        (hl,) = struct.unpack("<Q", data[4:12])
        head = json.loads(data[12:12 + hl])
        dt = np.dtype(head["dtype"]).newbyteorder("<")
        z = np.frombuffer(data, dtype=dt, offset=12 + hl, count=head["count"] * head["d"])
        z = z.reshape(head["count"], head["d"]).astype(np.dtype(head["dtype"]))
        return cls(np.array(head["anchors"], dtype=np.int64), head["abstractions"], head["fingerprints"],
                   head["members"], z, head.get("model", ""))


def model_digest(model: Model) -> str:
    h = hashlib.sha256()
    for name in sorted(model.params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(model.params[name]).tobytes())
    return h.hexdigest()


def build_index(model: Model, egos: Sequence[EgoGraph]) -> EmbeddingIndex:
    """One record per (deduplicated) reduced ego, in ascending anchor order."""
    egos = sorted(egos, key=lambda e: e.anchor)
    z = model.embed(egos) if egos else np.zeros((0, model.d), dtype=model.dtype)
    return EmbeddingIndex(
        anchors=np.array([e.anchor for e in egos], dtype=np.int64),
        abstractions=[e.meta.get("anchor_abstraction") or e.label(e.anchor) for e in egos],
        fingerprints=[e.meta.get("fingerprint", "") for e in egos],
        members=[list(e.meta.get("members", [e.anchor])) for e in egos],
        z=z, model_digest=model_digest(model),
    )


def predict_subgraph(z_q: np.ndarray, index: EmbeddingIndex, tau_ovp: float,
                     abstraction: Optional[str] = None, chunk: int = 4096) -> list:
    """Records with order-violation penalty <= tau_ovp, as (record, penalty) by ascending penalty."""
    if len(index) == 0:
        return []
    pen = np.empty(len(index), dtype=np.float64)
    zq = np.asarray(z_q, dtype=index.z.dtype)
    for i in range(0, len(index), chunk):
        pen[i:i + chunk] = order_penalty(zq, index.z[i:i + chunk])
    hit = pen <= tau_ovp
    if abstraction is not None:
        hit &= np.array([a == abstraction for a in index.abstractions])
    idx = np.flatnonzero(hit)
    order = idx[np.argsort(pen[idx], kind="stable")]
    return [(int(i), float(pen[i])) for i in order]


class ProvenanceStore:
    """Collapsed ego edge arrays keyed by anchor, for assembling G*."""

    def __init__(self, egos: Sequence[EgoGraph]):
        self.abs_names: list = []
        abs_id: dict = {}
        self.node_abs: dict = {}
        self.edges: dict = {}
        for ego in egos:
            for n, lab in ego.nodes.items():
                if lab.abstraction not in abs_id:
                    abs_id[lab.abstraction] = len(self.abs_names)
                    self.abs_names.append(lab.abstraction)
                self.node_abs[n] = abs_id[lab.abstraction]
            arr = np.array(sorted({(e.src, e.dst, _ETYPE_INDEX[e.etype]) for e in ego.edges}),
                           dtype=np.int64).reshape(-1, 3)
            self.edges[ego.anchor] = arr
        self.abs_id = abs_id
        n_max = max(self.node_abs) + 1 if self.node_abs else 0
        self.abs_of = np.full(n_max, -1, dtype=np.int64)
        for n, a in self.node_abs.items():
            self.abs_of[n] = a

    def union(self, anchors) -> np.ndarray:
        parts = [self.edges[a] for a in anchors if a in self.edges]
        if not parts:
            return np.zeros((0, 3), dtype=np.int64)
        return np.unique(np.concatenate(parts), axis=0)


@dataclass
class MatchResult:
    decision: bool
    score: float
    raw_score: float
    component: Optional[int]
    matched_edges: list
    candidates: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"decision": self.decision, "score": self.score, "raw_score": self.raw_score,
                "component": self.component, "matched_edges": self.matched_edges,
                "candidates": {str(k): v for k, v in sorted(self.candidates.items())}}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _query_signature_counts(g_q: EgoGraph) -> Counter:
    return Counter(g_q.edge_signatures())


def match_score(edges: np.ndarray, store: ProvenanceStore, g_q: EgoGraph, tau: float) -> tuple:
    """Best connected component of G* by capped signature overlap with G_Q.

    ``edges`` is the (m, 3) array of (src, dst, etype) of G*. Returns
    (g, raw best score, component id, matched edge list). Components are
    numbered by their smallest node id.
    """
    if not g_q.edges:
        raise EmptyQueryEdges("query has no edges")
    q_counts = _query_signature_counts(g_q)
    total = sum(q_counts.values())
    if len(edges) == 0:
        return 0.0, 0.0, None, []
    nodes, inv = np.unique(edges[:, :2], return_inverse=True)
    inv = inv.reshape(-1, 2)
    adj = coo_matrix((np.ones(len(edges)), (inv[:, 0], inv[:, 1])), shape=(len(nodes), len(nodes)))
    _, label = connected_components(adj, directed=True, connection="weak")
    # relabel components by smallest member node id
    first = np.full(label.max() + 1, len(nodes))
    np.minimum.at(first, label, np.arange(len(nodes)))
    comp_of_node = np.argsort(np.argsort(first, kind="stable"), kind="stable")[label]
    comp = comp_of_node[inv[:, 0]]
    abs_src = store.abs_of[edges[:, 0]]
    abs_dst = store.abs_of[edges[:, 1]]
    want = {}
    names = store.abs_names
    for (s, t, d), c in q_counts.items():
        if s in store.abs_id and d in store.abs_id:
            want[(store.abs_id[s], _ETYPE_INDEX[t], store.abs_id[d])] = c
    best, best_comp, best_edges = 0, None, []
    if want:
        keys = abs_src * (len(ETYPES) * len(names)) + edges[:, 2] * len(names) + abs_dst
        want_keys = {s * (len(ETYPES) * len(names)) + t * len(names) + d: c for (s, t, d), c in want.items()}
        mask = np.isin(keys, np.fromiter(want_keys, dtype=np.int64))
        sel = np.flatnonzero(mask)
        per_comp: dict = {}
        for i in sel:
            per_comp.setdefault(int(comp[i]), {}).setdefault(int(keys[i]), []).append(int(i))
        for c in sorted(per_comp):
            got = per_comp[c]
            score = sum(min(len(ix), want_keys[k]) for k, ix in got.items())
            if score > best:
                best, best_comp = score, c
                best_edges = [ix[:want_keys[k]] for k, ix in sorted(got.items())]
    raw = best / total
    matched = []
    for ix in best_edges:
        for i in ix:
            s, d, t = (int(v) for v in edges[i])
            matched.append([s, d, ETYPES[t], names[store.abs_of[s]], names[store.abs_of[d]]])
    matched.sort()
    g = raw if raw > tau else 0.0
    return g, raw, best_comp, matched


def query(index: EmbeddingIndex, model: Model, q: EgoGraph, cfg: PipelineConfig,
          store: ProvenanceStore) -> MatchResult:
    """Decide whether query graph ``q`` is entailed by the indexed provenance graph."""
    if not q.nodes:
        raise EmptyQuery("query graph is empty")
    if not any(lab.kind == "process" for lab in q.nodes.values()):
        raise NoProcessAnchor("query graph has no process node")
    prepared = prepare_query(q, cfg)
    anchors = sorted(prepared.egos)
    z = model.embed([prepared.egos[a] for a in anchors])
    candidates = {}
    chosen = set()
    for a, zq in zip(anchors, z):
        ab = prepared.egos[a].label(a) if cfg.prune_by_abstraction else None
        hits = predict_subgraph(zq, index, cfg.tau_ovp, ab)
        lst = []
        for rec, pen in hits:
            for m in index.members[rec]:
                lst.append([int(m), pen])
                chosen.add(int(m))
        candidates[a] = lst
    if not prepared.graph.edges:
        raise EmptyQueryEdges("query has no edges after preparation")
    g, raw, comp, matched = match_score(store.union(sorted(chosen)), store, prepared.graph, cfg.tau)
    return MatchResult(decision=g > 0, score=g, raw_score=raw, component=comp, matched_edges=matched,
                       candidates=candidates)


def perturb_query(g: EgoGraph, node_frac: float, edge_frac: float, rng) -> EgoGraph:
    """Drop floor(node_frac*|V|) random non-anchor nodes, then floor(edge_frac*|E|) random edges."""
    if not (0 <= node_frac < 1 and 0 <= edge_frac < 1):
        raise ValueError("fractions must be in [0, 1)")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    pool = sorted(n for n in g.nodes if n != g.anchor)
    n_drop = min(len(pool), int(np.floor(node_frac * len(g.nodes))))
    drop = set(rng.choice(pool, size=n_drop, replace=False).tolist()) if n_drop else set()
    out = g.subgraph(set(g.nodes) - drop)
    e_drop = int(np.floor(edge_frac * len(out.edges)))
    if e_drop:
        gone = set(rng.choice(len(out.edges), size=e_drop, replace=False).tolist())
        out.edges = [e for i, e in enumerate(out.edges) if i not in gone]
        out.invalidate()
    return out
