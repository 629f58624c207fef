"""Command-line entry point: ``provsearch <command> [options]``.

Exit codes: 0 success, 1 configuration/usage error, 2 input error,
3 pipeline error. Failures print one JSON error line on stderr.
"""
import os
import sys


def _cap_threads(argv):
    # BLAS pools are sized at import time, so --threads must be seen first
    for i, a in enumerate(argv):
        n = a.split("=", 1)[1] if a.startswith("--threads=") else (argv[i + 1] if a == "--threads" and i + 1 < len(argv) else None)
        if n and n.isdigit() and int(n) > 0:
            for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
                os.environ[var] = n


_cap_threads(sys.argv[1:])

import argparse  # noqa: E402
import json  # noqa: E402
import logging  # noqa: E402

import numpy as np  # noqa: E402

from . import embedder, metrics, sampler, search, synth  # noqa: E402
from .config import ConfigError, PipelineConfig, load_config  # noqa: E402
from .events import IngestError, OSProfile, read_events  # noqa: E402
from .graph import GraphError, write_snapshot  # noqa: E402
from .graphio import GraphFormatError, dumps, read_egos, read_query, write_egos  # noqa: E402
from .pipeline import process_events  # noqa: E402
from .reduction import dedup_ego_graphs  # noqa: E402

log = logging.getLogger("provsearch")


class InputError(Exception):
    pass


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("common options")
    g.add_argument("--config", help="flat key = value config file")
    g.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    g.add_argument("--seed", type=int, help="global seed")
    g.add_argument("--hops", type=int, help="ego-graph radius k")
    g.add_argument("--threads", type=int, help="BLAS thread cap (default: machine parallelism)")
    g.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="provsearch", description="Behavior search over provenance graphs with order embeddings.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic audit log with planted behaviors")
    p.add_argument("--scenario", help="scenario JSON (default: built-in background)")
    p.add_argument("--plants", type=int, default=0, help="number of built-in plants to embed")
    p.add_argument("--plant-offset", type=int, default=0, help="first built-in plant to use")
    p.add_argument("--noise-rate", type=float, help="noise share of all events")
    p.add_argument("--out", required=True, help="events JSONL")
    p.add_argument("--annotations", help="ground-truth JSON")
    p.add_argument("--queries-dir", help="write one query graph file per plant")

    p = sub.add_parser("ingest", parents=[common], help="events -> graph snapshot, ego corpus and match store")
    p.add_argument("--logs", help="events JSONL")
    p.add_argument("--graph", help="graph snapshot output")
    p.add_argument("--egos", help="reduced ego corpus output")
    p.add_argument("--store", help="collapsed ego corpus output")

    p = sub.add_parser("reduce-stats", parents=[common], help="per-stage node/edge table for a log")
    p.add_argument("--logs", help="events JSONL")

    p = sub.add_parser("gen-samples", parents=[common], help="positive/negative training pairs")
    p.add_argument("--egos", action="append", help="ego corpus (repeatable)")
    p.add_argument("--samples", help="sample corpus output")
    p.add_argument("--pairs", type=int, help="training pairs (default num_batches * batch_size)")
    p.add_argument("--test-pairs", type=int, help="held-out pairs")

    p = sub.add_parser("train", parents=[common], help="train the embedding model")
    p.add_argument("--samples", help="sample corpus")
    p.add_argument("--model", help="checkpoint output")
    p.add_argument("--loss-trace", help="loss CSV output")

    p = sub.add_parser("build-index", parents=[common], help="embed an ego corpus into an index")
    p.add_argument("--model", help="checkpoint")
    p.add_argument("--egos", help="reduced ego corpus")
    p.add_argument("--index", help="index output")

    p = sub.add_parser("query", parents=[common], help="match a query graph; prints MatchResult JSON")
    p.add_argument("--query", required=True, help="query graph file")
    p.add_argument("--index", help="embedding index")
    p.add_argument("--model", help="checkpoint")
    p.add_argument("--store", help="collapsed ego corpus")
    p.add_argument("--out", help="also write the MatchResult JSON here")

    p = sub.add_parser("eval", parents=[common], help="metrics over held-out pairs")
    p.add_argument("--samples", help="sample corpus")
    p.add_argument("--model", help="checkpoint")
    p.add_argument("--split", default="test", help="which pairs to score (test, train or all)")
    p.add_argument("--imbalance", help="1:m ratio with positive rotation")
    p.add_argument("--perturb", help="node_frac,edge_frac removed from each query")
    p.add_argument("--out", help="metrics CSV output (default stdout)")
    return parser


def resolve_config(args) -> PipelineConfig:
    cfg = load_config(args.config)
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        cfg.set(key, value)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.hops is not None:
        cfg.k = args.hops
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg.threads = args.threads
    for name in ("logs", "graph", "egos", "store", "samples", "model", "index", "loss_trace"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value[0] if isinstance(value, list) and len(value) == 1 else value)
    return cfg.validate()


def _need(cfg, *names):
    for n in names:
        if not getattr(cfg, n):
            raise ConfigError(f"missing path: {n}")


def _open(path, mode="r"):
    try:
        return open(path, mode, encoding=None if "b" in mode else "utf-8")
    except OSError as exc:
        raise InputError(f"cannot open {path}: {exc.strerror}") from None


def _load_events(path):
    with _open(path) as fh:
        return list(read_events(fh))


def _read_egos(path):
    try:
        return read_egos(path)
    except OSError as exc:
        raise InputError(f"cannot open {path}: {exc.strerror}") from None


def _load_model(path):
    try:
        return embedder.Model.load(path)
    except OSError as exc:
        raise InputError(f"cannot open {path}: {exc.strerror}") from None
    except (ValueError, KeyError) as exc:
        raise InputError(f"{path}: {exc}") from None


def _store_path(cfg):
    return cfg.store or (cfg.egos + ".collapsed" if cfg.egos else None)


def cmd_synth(args, cfg) -> int:
    if args.scenario:
        try:
            sc = synth.ScenarioConfig.load(args.scenario)
        except OSError as exc:
            raise InputError(f"cannot open {args.scenario}: {exc.strerror}") from None
        if args.seed is not None:
            sc.seed = args.seed
    else:
        plants = synth.plant_library(args.plant_offset + args.plants)[args.plant_offset:] if args.plants else []
        sc = synth.default_scenario(plants, seed=cfg.seed)
    if args.noise_rate is not None:
        sc.noise_rate = args.noise_rate
        sc.validate()
    events, ann = synth.generate_synthetic_logs(sc)
    synth.write_events(args.out, events)
    if args.annotations:
        with open(args.annotations, "w", encoding="utf-8") as fh:
            json.dump(ann, fh, sort_keys=True, indent=1)
    if args.queries_dir:
        os.makedirs(args.queries_dir, exist_ok=True)
        seen = set()
        for a in ann["plants"]:
            if a["plant"] not in seen:
                seen.add(a["plant"])
                with open(os.path.join(args.queries_dir, a["plant"] + ".json"), "w", encoding="utf-8") as fh:
                    fh.write(dumps(a["query"]) + "\n")
    print(dumps({"events": len(events), "plants": len(ann["plants"])}))
    return 0


def cmd_ingest(args, cfg) -> int:
    _need(cfg, "logs", "egos")
    profile = OSProfile.load(cfg.profile)
    art = process_events(_load_events(cfg.logs), profile, cfg)
    if cfg.graph:
        write_snapshot(art.graph, cfg.graph)
    egos = [art.reduced[a] for a in sorted(art.reduced)]
    if cfg.dedup:
        egos = dedup_ego_graphs(egos)
    write_egos(cfg.egos, egos, cfg.k, source=os.path.basename(cfg.logs))
    write_egos(_store_path(cfg), [art.collapsed[a] for a in sorted(art.collapsed)], cfg.k, form="collapsed")
    print(dumps({"nodes": len(art.graph.nodes), "edges": len(art.graph.edges), "egos": len(egos)}))
    return 0


def cmd_reduce_stats(args, cfg) -> int:
    _need(cfg, "logs")
    art = process_events(_load_events(cfg.logs), OSProfile.load(cfg.profile), cfg, with_stats=True)
    print(f"{'stage':<8}{'graph_N':>10}{'graph_E':>10}{'ego_N':>10}{'ego_E':>10}")
    for stage, (gn, ge, en, ee) in art.stats.items():
        print(f"{stage:<8}{gn:>10d}{ge:>10d}{en:>10.2f}{ee:>10.2f}")
    return 0


def cmd_gen_samples(args, cfg) -> int:
    paths = args.egos or ([cfg.egos] if cfg.egos else [])
    if not paths:
        raise ConfigError("missing path: egos")
    _need(cfg, "samples")
    egos = []
    for path in paths:
        egos.extend(_read_egos(path)[1])
    egos = dedup_ego_graphs(egos) if cfg.dedup else egos
    n_train = args.pairs if args.pairs is not None else cfg.num_batches * cfg.batch_size
    n_test = args.test_pairs if args.test_pairs is not None else cfg.test_pairs
    pairs = sampler.generate_pairs(egos, n_train, n_test, cfg.train_fraction, cfg.seed, cfg.k,
                                   (cfg.target_edges_min, cfg.target_edges_max), cfg.negative_pool_min,
                                   cfg.negative_retries)
    sampler.write_samples(cfg.samples, pairs)
    print(dumps({"egos": len(egos), "train": sum(s == "train" for s, _ in pairs),
                 "test": sum(s == "test" for s, _ in pairs)}))
    return 0


def _batches(pairs, cfg):
    n = len(pairs)
    for b in range(cfg.num_batches):
        chunk = [pairs[(b * cfg.batch_size + j) % n] for j in range(cfg.batch_size)]
        yield [p.query for p in chunk], [p.target for p in chunk], np.array([p.label for p in chunk])


def cmd_train(args, cfg) -> int:
    _need(cfg, "samples", "model")
    _, pairs = sampler.read_samples(cfg.samples)
    train = [p for s, p in pairs if s == "train"]
    test = [p for s, p in pairs if s == "test"]
    if not train:
        raise InputError(f"{cfg.samples}: no training pairs")
    model = embedder.Model(embedder.Vocab.for_profile(OSProfile.load(cfg.profile)), k=cfg.k, hidden=cfg.hidden,
                           d=cfg.d, seed=cfg.seed, dtype=np.dtype(cfg.dtype))
    tc = embedder.TrainConfig(alpha=cfg.alpha, batch_size=cfg.batch_size, num_batches=cfg.num_batches, lr=cfg.lr,
                              momentum=cfg.momentum, optimizer=cfg.optimizer, seed=cfg.seed)
    res = embedder.train(model, _batches(train, cfg), tc)
    model.save(cfg.model)
    if cfg.loss_trace:
        embedder.write_loss_trace(cfg.loss_trace, res.losses)
    summary = {"batches": len(res.losses), "final_loss": res.losses[-1] if res.losses else None}
    if test:
        summary["test_auc"] = metrics.evaluate(test, model, cfg.tau_ovp)["auc"]
    print(dumps(summary))
    return 0


def cmd_build_index(args, cfg) -> int:
    _need(cfg, "model", "egos", "index")
    model = _load_model(cfg.model)
    _, egos = _read_egos(cfg.egos)
    index = search.build_index(model, egos)
    index.save(cfg.index)
    print(dumps({"records": len(index), "d": model.d}))
    return 0


def cmd_query(args, cfg) -> int:
    _need(cfg, "index", "model")
    store_path = _store_path(cfg)
    if not store_path:
        raise ConfigError("missing path: store")
    try:
        index = search.EmbeddingIndex.load(cfg.index)
    except OSError as exc:
        raise InputError(f"cannot open {cfg.index}: {exc.strerror}") from None
    model = _load_model(cfg.model)
    if index.model_digest and index.model_digest != search.model_digest(model):
        log.warning("index was built with a different model")
    store = search.ProvenanceStore(_read_egos(store_path)[1])
    try:
        q = read_query(args.query)
    except OSError as exc:
        raise InputError(f"cannot open {args.query}: {exc.strerror}") from None
    result = search.query(index, model, q, cfg, store)
    text = result.to_json()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)
    return 0


def _parse_ratio(text):
    try:
        one, m = text.split(":")
        if int(one) != 1 or int(m) < 1:
            raise ValueError
        return int(m)
    except ValueError:
        raise ConfigError(f"--imbalance expects 1:m, got {text!r}") from None


def _parse_fracs(text):
    try:
        a, b = (float(x) for x in text.split(","))
    except ValueError:
        raise ConfigError(f"--perturb expects node_frac,edge_frac, got {text!r}") from None
    if not (0 <= a < 1 and 0 <= b < 1):
        raise ConfigError("--perturb fractions must be in [0, 1)")
    return a, b


def cmd_eval(args, cfg) -> int:
    _need(cfg, "samples", "model")
    m = _parse_ratio(args.imbalance) if args.imbalance else None
    fracs = _parse_fracs(args.perturb) if args.perturb else None
    model = _load_model(cfg.model)
    _, pairs = sampler.read_samples(cfg.samples)
    pairs = [p for s, p in pairs if args.split == "all" or s == args.split]
    if not pairs:
        raise InputError(f"{cfg.samples}: no {args.split} pairs")
    if fracs is not None:
        rng = np.random.default_rng([cfg.seed, 3])
        pairs = [sampler.SamplePair(search.perturb_query(p.query, fracs[0], fracs[1], rng), p.target, p.label,
                                    p.branch) for p in pairs]
    labels = np.array([p.label for p in pairs])
    pen = metrics.pair_penalties(model, pairs)
    if m is not None:
        rows, mean = metrics.evaluate_imbalanced(labels, pen, cfg.tau_ovp, m, np.random.default_rng([cfg.seed, 4]))
        text = metrics.metrics_csv(rows + [mean], [f"fold{i}" for i in range(len(rows))] + ["mean"])
    else:
        text = metrics.metrics_csv([metrics.evaluate_penalties(labels, pen, cfg.tau_ovp)], ["all"])
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


COMMANDS = {
    "synth": cmd_synth, "ingest": cmd_ingest, "reduce-stats": cmd_reduce_stats, "gen-samples": cmd_gen_samples,
    "train": cmd_train, "build-index": cmd_build_index, "query": cmd_query, "eval": cmd_eval,
}


def _fail(code: int, kind: str, exc) -> int:
    sys.stderr.write(json.dumps({"error": kind, "code": code, "message": str(exc)}) + "\n")
    return code


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail(1, "usage", exc)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        return _fail(1, "config", exc)
    except (InputError, IngestError, GraphFormatError, synth.InvalidConfig, json.JSONDecodeError) as exc:
        return _fail(2, "input", exc)
    except (GraphError, embedder.DivergenceDetected, search.EmptyQuery, search.NoProcessAnchor,
            search.EmptyQueryEdges, sampler.EmptyCorpus, sampler.EmptyEgo, ValueError) as exc:
        return _fail(3, "pipeline", exc)


if __name__ == "__main__":
    sys.exit(main())
