"""Shared builders for tests: tiny graphs, random versioned graphs, event records."""
import json

import numpy as np

from provsearch.graph import Edge, Node, ProvGraph
from provsearch.partition import EgoGraph, NodeLabel
from provsearch.versioning import VersionedGraph, VersionedNode

PROC_ABS = ("usr", "bin", "sbin")
OBJ_ABS = ("etc", "tmp", "var", "home")


def ego(anchor, nodes, edges, k=3, form="collapsed"):
    """nodes: {id: (kind, abstraction)}; edges: [(src, dst, etype[, ts])]."""
    labs = {n: NodeLabel(*v) for n, v in nodes.items()}
    es = [Edge(e[0], e[1], e[2], e[3] if len(e) > 3 else i) for i, e in enumerate(edges)]
    return EgoGraph(anchor=anchor, nodes=labs, edges=es, k=k, form=form)


def prov_graph(nodes, edges):
    """nodes: {id: (kind, abstraction)}; edges: [(src, dst, etype, ts)]."""
    out = {}
    for n, (kind, ab) in nodes.items():
        out[n] = Node(id=n, kind=kind, abstraction=ab, key=f"{kind}:{n}", first_ts=1, last_ts=1,
                      image_path=f"/{ab}/p{n}" if kind == "process" else None)
    return ProvGraph(out, [Edge(*e) for e in edges])


def random_prov_graph(rng, n_nodes, n_edges, p_proc=0.4, etypes=("read", "write", "clone_fork_exec")):
    kinds = ["process" if rng.random() < p_proc else "file" for _ in range(n_nodes)]
    kinds[0] = "process"
    nodes = {i: (k, str(rng.choice(PROC_ABS if k == "process" else OBJ_ABS))) for i, k in enumerate(kinds)}
    edges = []
    for t in range(n_edges):
        s, d = rng.choice(n_nodes, size=2, replace=False)
        edges.append((int(s), int(d), str(rng.choice(etypes)), int(rng.integers(1, 10 * n_edges))))
    return prov_graph(nodes, edges)


def random_versioned_graph(rng, n_bases, max_versions=3, edge_factor=1.5, sink_p=0.15):
    """Random graph over node versions with per-entity sinks, built directly."""
    g = random_prov_graph(rng, n_bases, 0)
    vnodes, chains = [], {}
    for b in range(n_bases):
        chains[b] = []
        for i in range(int(rng.integers(1, max_versions + 1))):
            chains[b].append(len(vnodes))
            vnodes.append(VersionedNode(b, i, i))
    n = len(vnodes)
    edges, seen = [], set()
    for t in range(int(edge_factor * n)):
        s, d = (int(x) for x in rng.choice(n, size=2, replace=False))
        if vnodes[s].base == vnodes[d].base:
            continue
        et = str(rng.choice(("read", "write")))
        if (s, d, et) not in seen:
            seen.add((s, d, et))
            edges.append(Edge(s, d, et, t))
    vg = VersionedGraph(g, vnodes, edges, chains)
    sinks = {b for b in range(n_bases) if rng.random() < sink_p}
    vg.sink = [vn.base in sinks for vn in vnodes]
    return vg


def random_ego(rng, n_nodes, n_edges, k=3, n_abs=2):
    """Connected-ish random collapsed ego around node 0 with few labels (so reduction bites)."""
    nodes = {0: ("process", "usr")}
    for i in range(1, n_nodes):
        kind = "process" if rng.random() < 0.3 else "file"
        nodes[i] = (kind, str(rng.choice(OBJ_ABS[:n_abs])))
    edges = set()
    for i in range(1, n_nodes):
        j = int(rng.integers(0, i))
        et = str(rng.choice(("read", "write")))
        edges.add((j, i, et) if rng.random() < 0.5 else (i, j, et))
    while len(edges) < min(n_edges, 2 * n_nodes * (n_nodes - 1)):
        s, d = (int(x) for x in rng.choice(n_nodes, size=2, replace=False))
        edges.add((s, d, str(rng.choice(("read", "write")))))
    return ego(0, nodes, sorted(edges), k=k)


def proc(uid, pid, image, tid=None):
    d = {"uid": uid, "kind": "process", "pid": pid, "image_path": image}
    if tid is not None:
        d["tid"] = tid
    return d


def file(uid, path):
    return {"uid": uid, "kind": "file", "path": path}


def event(ts, etype, subject, obj):
    return json.dumps({"ts": ts, "event_type": etype, "subject": subject, "object": obj})


def is_dominated(a, b, tol=0.0):
    return bool(np.all(a <= b + tol))


def run_cli(args):
    """Run the CLI in-process; returns (exit code, stdout text)."""
    import contextlib
    import io

    from provsearch.cli import main

    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        code = main([str(a) for a in args])
    return code, buf.getvalue()
