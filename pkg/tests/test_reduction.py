import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import ego, random_ego
from provsearch.reduction import (
    DepthMismatch, anchor_path_keys, collapse_versions, compute_node_hashes, dedup_ego_graphs, fingerprint,
    reduce_ego_graph, sha256_hex, walk_keys,
)


def _star(n_leaves, etype="read"):
    nodes = {0: ("process", "bin")}
    nodes.update({i: ("file", "etc") for i in range(1, n_leaves + 1)})
    return ego(0, nodes, [(i, 0, etype) for i in range(1, n_leaves + 1)], k=2)


def test_hash_encoding_is_pinned():
    g = ego(0, {0: ("process", "bin"), 1: ("file", "etc")}, [(1, 0, "read")], k=1)
    nh = compute_node_hashes(g, 1)
    h_etc, h_bin = sha256_hex("etc"), sha256_hex("bin")
    assert nh[1]["forw"][0] == h_etc
    assert nh[0]["forw"][1] == sha256_hex(h_bin + "|" + "read:" + h_etc)
    assert nh[0]["back"][1] == sha256_hex(h_bin + "|")


def test_identical_leaves_collapse_to_one():
    red = reduce_ego_graph(_star(6), compute_node_hashes(_star(6), 2), 2)
    assert red.num_nodes() == 2 and red.num_edges() == 1


def test_distinct_leaves_survive():
    g = ego(0, {0: ("process", "bin"), 1: ("file", "etc"), 2: ("file", "tmp")}, [(1, 0, "read"), (2, 0, "read")], k=1)
    assert reduce_ego_graph(g, compute_node_hashes(g, 1), 1).num_nodes() == 3


def test_depth_mismatch():
    g = _star(3)
    with pytest.raises(DepthMismatch):
        reduce_ego_graph(g, compute_node_hashes(g, 1), 2)


def test_walk_keys_read_outward():
    g = ego(0, {0: ("process", "bin"), 1: ("file", "etc"), 2: ("process", "usr")},
            [(1, 2, "read"), (2, 0, "clone_fork_exec")], k=2)
    assert walk_keys(g, 0, 2, "forw") == {("bin", "clone_fork_exec", "usr"),
                                          ("bin", "clone_fork_exec", "usr", "read", "etc")}
    assert ("etc", "read", "usr", "clone_fork_exec", "bin") in anchor_path_keys(g, 2)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 20), st.integers(1, 40), st.integers(1, 3))
def test_reduction_preserves_anchor_paths(seed, n, m, k):
    g = random_ego(np.random.default_rng(seed), n, m, k=k)
    red = reduce_ego_graph(g, compute_node_hashes(g, k), k, rng_seed=seed)
    assert anchor_path_keys(red, k) == anchor_path_keys(g, k)
    assert red.num_nodes() <= g.num_nodes()


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, 10**6))
def test_seed_changes_only_the_representative(seed, other):
    g = random_ego(np.random.default_rng(seed), 15, 30, k=3)
    nh = compute_node_hashes(g, 3)
    a, b = reduce_ego_graph(g, nh, 3, rng_seed=0), reduce_ego_graph(g, nh, 3, rng_seed=other)
    assert fingerprint(a) == fingerprint(b) == fingerprint(g)
    assert len(dedup_ego_graphs([a, b])) == 1


def test_collapse_versions_folds_chain():
    v = ego(0, {0: ("process", "bin"), 1: ("file", "tmp"), 2: ("file", "tmp")},
            [(0, 1, "write", 5), (0, 2, "write", 9)], form="versioned")
    v.base = {0: 10, 1: 11, 2: 11}
    v.anchor = 10
    c = collapse_versions(v)
    assert set(c.nodes) == {10, 11} and [(e.src, e.dst, e.ts) for e in c.edges] == [(10, 11, 5)]


def test_dedup_records_members():
    a, b = _star(3), _star(5)
    b.anchor = 0
    out = dedup_ego_graphs([a, b])
    assert len(out) == 1 and out[0].meta["members"] == [0, 0]
