import json
import time

import pytest

from helpers import run_cli

# criterion number -> (passed, detail); printed in the terminal summary
ACCEPTANCE = {}

N_LOGS = 4
PLANTS_PER_LOG = 6
TRAIN_PROFILE = "num_batches = 400\nbatch_size = 256\n"


@pytest.fixture
def record():
    def _record(n, ok, detail):
        ACCEPTANCE[n] = (bool(ok), detail)
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


def _ok(args):
    code, out = run_cli(args)
    assert code == 0, f"provsearch {' '.join(map(str, args))} exited {code}"
    return out


@pytest.fixture(scope="session")
def workspace(tmp_path_factory):
    """Four synthetic logs with 24 distinct plants, a sample corpus and a model trained at 400x256."""
    d = tmp_path_factory.mktemp("workspace")
    cfg = d / "train.cfg"
    cfg.write_text(TRAIN_PROFILE)
    logs = []
    for i in range(N_LOGS):
        ws = {k: d / f"{k}{i}" for k in ("log", "ann", "q", "egos", "store", "graph", "index")}
        _ok(["synth", "--plants", PLANTS_PER_LOG, "--plant-offset", PLANTS_PER_LOG * i, "--seed", 100 + i,
             "--noise-rate", 0.2, "--out", ws["log"], "--annotations", ws["ann"], "--queries-dir", ws["q"]])
        _ok(["ingest", "--logs", ws["log"], "--egos", ws["egos"], "--store", ws["store"], "--graph", ws["graph"]])
        ws["annotations"] = json.loads(ws["ann"].read_text())
        logs.append(ws)
    samples, model = d / "samples.jsonl", d / "model.pvsm"
    egos_args = [a for ws in logs for a in ("--egos", ws["egos"])]
    _ok(["gen-samples", "--config", cfg, *egos_args, "--samples", samples])
    t0 = time.perf_counter()
    summary = json.loads(_ok(["train", "--config", cfg, "--samples", samples, "--model", model,
                              "--loss-trace", d / "loss.csv"]))
    train_seconds = time.perf_counter() - t0
    for ws in logs:
        _ok(["build-index", "--model", model, "--egos", ws["egos"], "--index", ws["index"]])
    return {"dir": d, "config": cfg, "logs": logs, "samples": samples, "model": model,
            "train_summary": summary, "train_seconds": train_seconds}
