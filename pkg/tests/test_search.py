import numpy as np
import pytest

from helpers import ego, random_ego
from provsearch.config import PipelineConfig
from provsearch.embedder import Model, Vocab, order_penalty
from provsearch.events import OSProfile
from provsearch.search import (
    EmbeddingIndex, EmptyQuery, EmptyQueryEdges, NoProcessAnchor, ProvenanceStore, build_index, match_score,
    perturb_query, predict_subgraph, query,
)

VOCAB = Vocab.for_profile(OSProfile.load("linux"))


def _store():
    # two components: {1, 2, 3} and {10, 11}
    a = ego(1, {1: ("process", "bin"), 2: ("file", "etc"), 3: ("file", "tmp")}, [(2, 1, "read"), (1, 3, "write")])
    b = ego(10, {10: ("process", "bin"), 11: ("file", "etc")}, [(11, 10, "read")])
    return ProvenanceStore([a, b])


def _q(edges):
    nodes = {0: ("process", "bin"), 1: ("file", "etc"), 2: ("file", "tmp"), 3: ("file", "var")}
    used = {n for e in edges for n in e[:2]}
    return ego(0, {n: nodes[n] for n in used | {0}}, edges, form="reduced")


def test_full_match_scores_one():
    store = _store()
    g, raw, comp, matched = match_score(store.union([1, 10]), store, _q([(1, 0, "read"), (0, 2, "write")]), 0.5)
    assert (g, raw, comp) == (1.0, 1.0, 0)
    assert sorted(m[:3] for m in matched) == [[1, 3, "write"], [2, 1, "read"]]


def test_partial_match_below_tau_is_zero():
    store = _store()
    q = _q([(1, 0, "read"), (0, 2, "write"), (0, 3, "write")])
    g, raw, _, _ = match_score(store.union([10]), store, q, 0.5)
    assert raw == pytest.approx(1 / 3) and g == 0.0
    g, raw, _, _ = match_score(store.union([1]), store, q, 0.5)
    assert raw == pytest.approx(2 / 3) and g == raw


def test_multiplicity_is_capped():
    store = _store()
    q = _q([(1, 0, "read")])
    # two etc -read-> bin edges exist but in different components; one query edge needs only one
    g, raw, comp, matched = match_score(store.union([1, 10]), store, q, 0.5)
    assert raw == 1.0 and comp == 0 and len(matched) == 1


def test_empty_union_and_empty_query():
    store = _store()
    assert match_score(store.union([]), store, _q([(1, 0, "read")]), 0.5)[:3] == (0.0, 0.0, None)
    with pytest.raises(EmptyQueryEdges):
        match_score(store.union([1]), store, _q([]), 0.5)


def test_predict_subgraph_threshold_and_order():
    z = np.array([[1.0, 1.0], [0.5, 1.0], [2.0, 2.0], [0.0, 0.0]])
    idx = EmbeddingIndex(np.arange(4), ["bin", "bin", "usr", "bin"], [""] * 4, [[i] for i in range(4)], z)
    zq = np.array([1.0, 1.0])
    hits = predict_subgraph(zq, idx, 0.3)
    assert [h[0] for h in hits] == [0, 2, 1]
    assert hits[2][1] == pytest.approx(0.25)
    assert [h[0] for h in predict_subgraph(zq, idx, 0.3, abstraction="bin")] == [0, 1]
    brute = [i for i in range(4) if order_penalty(zq, z[i]) <= 0.3]
    assert sorted(h[0] for h in hits) == brute


def test_index_round_trip(tmp_path):
    m = Model(VOCAB, k=2, hidden=8, d=6, seed=0)
    egos = [random_ego(np.random.default_rng(s), 6, 8) for s in range(5)]
    for i, g in enumerate(egos):
        g.anchor = 10 - i
        g.nodes[g.anchor] = g.nodes.pop(0)
        g.edges = [e._replace(src=g.anchor if e.src == 0 else e.src, dst=g.anchor if e.dst == 0 else e.dst)
                   for e in g.edges]
        g.invalidate()
    idx = build_index(m, egos)
    assert list(idx.anchors) == sorted(idx.anchors)
    idx.save(str(tmp_path / "i"))
    back = EmbeddingIndex.load(str(tmp_path / "i"))
    assert np.array_equal(back.z, idx.z) and list(back.anchors) == list(idx.anchors)
    assert back.members == idx.members and back.model_digest == idx.model_digest


def test_perturb_floor_arithmetic():
    nodes = {i: ("file", "etc") for i in range(1, 20)}
    nodes[0] = ("process", "bin")
    g = ego(0, nodes, [(i, 0, "read") for i in range(1, 20)])
    rng = np.random.default_rng(0)
    assert perturb_query(g, 0.15, 0, rng).num_nodes() == 17
    out = perturb_query(g, 0, 0.45, rng)
    assert out.num_edges() == 19 - 8 and out.num_nodes() == 20
    same = perturb_query(g, 0, 0, rng)
    assert same.nodes == g.nodes and same.edges == g.edges
    for s in range(20):
        assert 0 in perturb_query(g, 0.9, 0, np.random.default_rng(s)).nodes
    with pytest.raises(ValueError):
        perturb_query(g, 1.0, 0, rng)


def test_query_errors():
    m = Model(VOCAB, k=2, hidden=4, d=4, seed=0)
    idx = build_index(m, [])
    store = ProvenanceStore([])
    cfg = PipelineConfig()
    with pytest.raises(EmptyQuery):
        query(idx, m, ego(None, {}, []), cfg, store)
    with pytest.raises(NoProcessAnchor):
        query(idx, m, ego(None, {1: ("file", "etc")}, []), cfg, store)


def test_query_finds_its_own_source():
    m = Model(VOCAB, k=3, hidden=16, d=16, seed=0)
    g = ego(0, {0: ("process", "usrbin"), 1: ("file", "etc"), 2: ("file", "tmp"), 3: ("process", "bin")},
            [(1, 0, "read", 1), (0, 2, "write", 2), (2, 3, "read", 3)], form="reduced")
    g.meta["anchor_abstraction"] = "usrbin"
    other = ego(3, dict(g.nodes), list(g.edges), form="reduced")
    r = query(build_index(m, [g, other]), m, g.copy(anchor=None, form="query"), PipelineConfig(),
              ProvenanceStore([g, other]))
    assert r.decision and r.score == 1.0
    assert {0, 3} <= {c for lst in r.candidates.values() for c, _ in lst}


def test_dropping_candidates_never_raises_the_score():
    rng = np.random.default_rng(4)
    egos = []
    for i in range(6):
        g = random_ego(rng, 6, 9)
        off = 100 * i
        g = ego(off, {n + off: tuple(lab) for n, lab in g.nodes.items()},
                [(e.src + off, e.dst + off, e.etype) for e in g.edges])
        egos.append(g)
    store = ProvenanceStore(egos)
    q = random_ego(rng, 5, 6)
    anchors = [g.anchor for g in egos]
    full = match_score(store.union(anchors), store, q, 0.5)[1]
    for drop in range(6):
        sub = anchors[:drop] + anchors[drop + 1:]
        assert match_score(store.union(sub), store, q, 0.5)[1] <= full
