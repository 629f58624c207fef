"""Glue between the stages: raw events to ego corpora, query graphs to query egos."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from .config import PipelineConfig
from .events import OSProfile, RawEvent, filter_event
from .graph import Node, ProvGraph, build_graph, dedup_objects, merge_threads
from .partition import EgoGraph, extract_ego_graphs
from .reduction import collapse_versions, fingerprint, reduce_all
from .versioning import SinkConfig, designate_sinks, unversioned, version_graph


@dataclass
class LogArtifacts:
    graph: ProvGraph
    collapsed: dict
    reduced: dict
    stats: dict = field(default_factory=dict)


def _annotate(g: ProvGraph, egos: dict) -> None:
    for anchor, ego in egos.items():
        node = g.nodes[anchor]
        ego.meta.update(anchor_key=node.image_path or node.key, image_path=node.image_path,
                        anchor_abstraction=node.abstraction)


def _avg(egos: dict) -> tuple:
    if not egos:
        return (0.0, 0.0)
    n = len(egos)
    return (sum(e.num_nodes() for e in egos.values()) / n, sum(e.num_edges() for e in egos.values()) / n)


def egos_from_graph(g: ProvGraph, cfg: PipelineConfig) -> tuple:
    """Return (collapsed, reduced) ego maps for every process of ``g``."""
    if cfg.version:
        vg = designate_sinks(version_graph(g), SinkConfig(cfg.sink_degree_percentile, cfg.sink_degree_absolute))
    else:
        vg = unversioned(g)
    versioned = extract_ego_graphs(vg, cfg.k)
    collapsed = {a: collapse_versions(e) for a, e in versioned.items()}
    _annotate(g, collapsed)
    if cfg.reduce:
        reduced = reduce_all(collapsed, cfg.k, seed=cfg.seed)
    else:
        reduced = {a: e.copy(form="reduced") for a, e in collapsed.items()}
    for ego in reduced.values():
        ego.meta["fingerprint"] = fingerprint(ego, cfg.k)
    return collapsed, reduced


def process_events(events: Iterable[RawEvent], profile: OSProfile, cfg: PipelineConfig,
                   with_stats: bool = False) -> LogArtifacts:
    raw = build_graph((e for e in events if filter_event(e)), profile, cfg.window_ns)
    g = dedup_objects(merge_threads(raw)) if cfg.simplify else raw
    collapsed, reduced = egos_from_graph(g, cfg)
    stats = {}
    if with_stats:
        base = {a: collapse_versions(e) for a, e in extract_ego_graphs(unversioned(raw), cfg.k).items()}
        simple = {a: collapse_versions(e) for a, e in extract_ego_graphs(unversioned(g), cfg.k).items()}
        stats = {
            "Initial": (len(raw.nodes), len(raw.edges)) + _avg(base),
            "GS": (len(g.nodes), len(g.edges)) + _avg(simple),
            "DEM": (len(g.nodes), len(g.edges)) + _avg(collapsed),
            "BR": (len(g.nodes), len(g.edges)) + _avg(reduced),
        }
    return LogArtifacts(graph=g, collapsed=collapsed, reduced=reduced, stats=stats)


def query_to_provgraph(q: EgoGraph) -> ProvGraph:
    nodes = {n: Node(id=n, kind=lab.kind, abstraction=lab.abstraction, key=f"q:{n}", first_ts=0, last_ts=0)
             for n, lab in q.nodes.items()}
    edges = [e for e in q.edges if e.src != e.dst]
    return ProvGraph(nodes, edges)


@dataclass
class PreparedQuery:
    graph: EgoGraph
    egos: dict


def has_timestamps(q: EgoGraph) -> bool:
    return len({e.ts for e in q.edges}) > 1


def prepare_query(q: EgoGraph, cfg: PipelineConfig) -> PreparedQuery:
    """Run a query graph through simplify -> version -> partition -> reduce.

    Versioning needs edge order, so queries without timestamps skip it.
    Degree-based sinks are never applied to queries. The returned
    ``graph`` is the union of the reduced query ego-graphs and is the
    reference G_Q for scoring.
    """
    g = query_to_provgraph(q)
    if cfg.simplify:
        g = dedup_objects(g)
    vg = version_graph(g) if cfg.version and has_timestamps(q) else unversioned(g)
    collapsed = {a: collapse_versions(e) for a, e in extract_ego_graphs(vg, cfg.k).items()}
    for a, ego in collapsed.items():
        ego.meta["anchor_abstraction"] = g.nodes[a].abstraction
    egos = reduce_all(collapsed, cfg.k, seed=cfg.seed) if cfg.reduce else collapsed
    keep = set()
    for ego in egos.values():
        keep.update(ego.nodes)
    full = EgoGraph(anchor=None, nodes={n: q.nodes[n] for n in g.nodes}, edges=list(g.edges), k=cfg.k,
                    form="query")
    union_edges = {(e.src, e.dst, e.etype): e for ego in egos.values() for e in ego.edges}
    union = full.subgraph(keep, form="reduced")
    union.edges = sorted(union_edges.values())
    union.invalidate()
    return PreparedQuery(graph=union, egos=egos)
