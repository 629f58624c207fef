"""JSONL graph records shared by the ego corpus, sample corpus and query files.

A record::

    {"anchor": 3, "form": "reduced", "k": 3,
     "nodes": [[3, "process", "usrbin"], [7, "file", "etc"]],
     "edges": [[7, 3, "read", 120]], "meta": {...}}

Edge timestamps are optional (``[src, dst, etype]``); query graphs usually
omit them and may omit ``anchor``.
"""
from __future__ import annotations

import json
from typing import Iterable, Iterator

from .graph import ETYPES, KINDS, Edge
from .partition import EgoGraph, NodeLabel

CORPUS_FORMAT = "provsearch-egos"


class GraphFormatError(ValueError):
    pass


def ego_to_dict(g: EgoGraph) -> dict:
    out = {
        "anchor": g.anchor,
        "form": g.form,
        "k": g.k,
        "nodes": [[n, lab.kind, lab.abstraction] for n, lab in sorted(g.nodes.items())],
        "edges": [[e.src, e.dst, e.etype, e.ts] for e in g.edges],
    }
    if g.meta:
        out["meta"] = g.meta
    return out


def ego_from_dict(d: dict, form: str = "query") -> EgoGraph:
    try:
        nodes = {}
        for row in d["nodes"]:
            if isinstance(row, dict):
                nid, kind, ab = row["id"], row["kind"], row["abstraction"]
            else:
                nid, kind, ab = row
            if kind not in KINDS:
                raise GraphFormatError(f"unknown node kind {kind!r}")
            nodes[int(nid)] = NodeLabel(kind, ab)
        edges = []
        for row in d["edges"]:
            if isinstance(row, dict):
                src, dst, etype, ts = row["src"], row["dst"], row["etype"], row.get("ts", 0)
            else:
                src, dst, etype = row[:3]
                ts = row[3] if len(row) > 3 and row[3] is not None else 0
            if etype not in ETYPES:
                raise GraphFormatError(f"unknown edge type {etype!r}")
            if src not in nodes or dst not in nodes:
                raise GraphFormatError(f"edge {src}->{dst} references a missing node")
            edges.append(Edge(int(src), int(dst), etype, int(ts)))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, GraphFormatError):
            raise
        raise GraphFormatError(f"bad graph record: {exc}") from None
    anchor = d.get("anchor")
    return EgoGraph(anchor=anchor, nodes=nodes, edges=edges, k=int(d.get("k", 3)),
                    form=d.get("form", form), meta=dict(d.get("meta", {})))


def dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), sort_keys=True)


def write_egos(path: str, egos: Iterable[EgoGraph], k: int, **header) -> int:
    egos = list(egos)
    head = {"format": CORPUS_FORMAT, "version": 1, "k": k, "count": len(egos), **header}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(head) + "\n")
        for g in egos:
            fh.write(dumps(ego_to_dict(g)) + "\n")
    return len(egos)


def read_egos(path: str) -> tuple:
    """Return (header, list of EgoGraph)."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip()]
    if not lines:
        raise GraphFormatError(f"{path}: empty corpus")
    head = json.loads(lines[0])
    if head.get("format") != CORPUS_FORMAT:
        raise GraphFormatError(f"{path}: not an ego corpus")
    egos = [ego_from_dict(json.loads(ln), form="reduced") for ln in lines[1:]]
    if len(egos) != head.get("count", len(egos)):
        raise GraphFormatError(f"{path}: record count mismatch")
    return head, egos


def read_query(path: str) -> EgoGraph:
    with open(path, encoding="utf-8") as fh:
        text = fh.read().strip()
    try:
        first = text.splitlines()[0]
        d = json.loads(first if first.strip().startswith("{") and first.strip().endswith("}") else text)
    except (json.JSONDecodeError, IndexError) as exc:
        raise GraphFormatError(f"{path}: {exc}") from None
    return ego_from_dict(d, form="query")


def iter_records(path: str) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield json.loads(line)
