import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import prov_graph, random_prov_graph
from provsearch.versioning import SinkConfig, designate_sinks, unversioned, version_graph


def test_receive_after_emit_creates_version():
    g = prov_graph({0: ("process", "bin"), 1: ("file", "tmp"), 2: ("process", "usr")},
                   [(0, 1, "write", 1), (1, 2, "read", 2), (0, 1, "write", 3)])
    vg = version_graph(g)
    assert len(vg.chains[1]) == 2
    # the reader only sees the first version of the file
    (read,) = [e for e in vg.edges if e.etype == "read"]
    assert read.src == vg.chains[1][0]


def test_receives_without_emission_share_a_version():
    g = prov_graph({0: ("process", "bin"), 1: ("file", "tmp")}, [(0, 1, "write", 1), (0, 1, "write", 2)])
    assert all(len(c) == 1 for c in version_graph(g).chains.values())


def test_unversioned_has_one_version_per_node():
    g = random_prov_graph(np.random.default_rng(0), 10, 30)
    vg = unversioned(g)
    assert len(vg) == len(g.nodes) and all(len(c) == 1 for c in vg.chains.values())


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 12), st.integers(1, 30))
def test_local_time_order(seed, n, m):
    # every edge into a version precedes every edge out of it (and the version edges)
    vg = version_graph(random_prov_graph(np.random.default_rng(seed), n, m))
    edges = vg.edges + vg.version_edges()
    for v in range(len(vg)):
        ins = [e.ts for e in edges if e.dst == v]
        outs = [e.ts for e in edges if e.src == v]
        if ins and outs:
            assert max(ins) <= min(outs)


def test_sinks_zero_degree_objects_and_hubs():
    nodes = {0: ("process", "bin"), 1: ("file", "etc"), 2: ("file", "tmp"), 3: ("process", "usr")}
    nodes.update({i: ("file", "var") for i in range(4, 14)})
    edges = [(1, 0, "read", 1), (0, 2, "write", 2), (2, 3, "read", 3)]
    edges += [(i, 3, "read", i) for i in range(4, 14)]
    vg = designate_sinks(version_graph(prov_graph(nodes, edges)), SinkConfig(degree_absolute=5))
    sink_base = {vg.vnodes[v].base for v in range(len(vg)) if vg.sink[v]}
    # 1 and the var files only emit; 3 exceeds degree 5; 2 both receives and emits
    assert sink_base == {1, 3} | set(range(4, 14))
