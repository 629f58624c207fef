import numpy as np

from helpers import event, file, proc
from provsearch.config import PipelineConfig
from provsearch.events import OSProfile, read_events
from provsearch.graphio import ego_from_dict, ego_to_dict, read_egos, write_egos
from provsearch.pipeline import has_timestamps, prepare_query, process_events
from provsearch.reduction import anchor_path_keys
from provsearch.synth import default_scenario, generate_synthetic_logs, plant_library

LINUX = OSProfile.load("linux")


def _small_log():
    sh, cat = proc("p1", 1, "/bin/sh"), proc("p2", 2, "/bin/cat")
    return list(read_events([
        event(1, "read", sh, file("f1", "/etc/profile")),
        event(2, "fork", sh, cat),
        *[event(3 + i, "read", cat, file(f"l{i}", f"/var/log/syslog.{i}")) for i in range(5)],
        event(20, "write", cat, file("o", "/tmp/out")),
    ]))


def test_stage_toggles_and_stats():
    art = process_events(_small_log(), LINUX, PipelineConfig(), with_stats=True)
    assert list(art.stats) == ["Initial", "GS", "DEM", "BR"]
    assert art.stats["GS"][0] < art.stats["Initial"][0]  # the five log files merge
    assert set(art.reduced) == set(art.collapsed)
    raw = process_events(_small_log(), LINUX, PipelineConfig(simplify=False, version=False, reduce=False))
    assert len(raw.graph.nodes) == 9  # profile, sh, cat, five logs, out


def test_reduced_egos_keep_anchor_paths():
    evs, _ = generate_synthetic_logs(default_scenario(plant_library(2), seed=3))
    art = process_events(evs, LINUX, PipelineConfig(k=2))
    for a, c in art.collapsed.items():
        if c.num_edges() <= 40:
            assert anchor_path_keys(art.reduced[a], 2) == anchor_path_keys(c, 2)
        assert art.reduced[a].meta["fingerprint"]


def test_prepare_query_versions_only_timestamped_queries():
    d = {"nodes": [[0, "process", "bin"], [1, "file", "tmp"], [2, "process", "usrbin"], [3, "file", "etc"]],
         "edges": [[0, 1, "write", 1], [1, 2, "read", 2], [3, 0, "read", 3], [0, 1, "write", 4]]}
    timed = ego_from_dict(d)
    untimed = ego_from_dict({"nodes": d["nodes"], "edges": [e[:3] for e in d["edges"]]})
    assert has_timestamps(timed) and not has_timestamps(untimed)
    cfg = PipelineConfig()
    # with time, the later read of etc cannot reach the reader of the earlier file write
    assert 3 not in prepare_query(timed, cfg).egos[2].nodes
    assert 3 in prepare_query(untimed, cfg).egos[2].nodes


def test_corpus_file_round_trip(tmp_path):
    art = process_events(_small_log(), LINUX, PipelineConfig())
    egos = [art.reduced[a] for a in sorted(art.reduced)]
    write_egos(str(tmp_path / "e"), egos, 3)
    head, back = read_egos(str(tmp_path / "e"))
    assert head["count"] == len(egos)
    assert [ego_to_dict(g) for g in back] == [ego_to_dict(g) for g in egos]
    assert np.all([g.form == "reduced" for g in back])
