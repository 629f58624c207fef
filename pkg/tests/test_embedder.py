import numpy as np
import pytest

from helpers import ego, random_ego
from provsearch.embedder import (
    RELATIONS, DimensionMismatch, DivergenceDetected, Model, TrainConfig, Vocab, grad_check, node_features,
    order_penalty, pair_loss, train, write_loss_trace,
)
from provsearch.events import OSProfile
from provsearch.graph import ETYPES

VOCAB = Vocab.for_profile(OSProfile.load("linux"))
LEAK = 0.01


def _naive_embed(model, g):
    """Per-node loop over the message-passing rule, in float64."""
    ids = sorted(g.nodes)
    h = {n: node_features(g.nodes[n].kind, g.nodes[n].abstraction, VOCAB) for n in ids}
    edges = sorted({(e.src, e.dst, e.etype) for e in g.edges})
    for l in range(model.k):
        W = model.params[f"W{l}"].astype(np.float64)
        b = model.params[f"b{l}"].astype(np.float64)
        fan_in = len(next(iter(h.values())))
        new = {}
        for v in ids:
            acc = h[v] @ W[:fan_in] + b
            for r, (etype, direction) in enumerate(RELATIONS):
                if direction == "in":
                    nb = [s for s, d, t in edges if d == v and t == etype]
                else:
                    nb = [d for s, d, t in edges if s == v and t == etype]
                if nb:
                    acc += np.mean([h[u] for u in nb], axis=0) @ W[(r + 1) * fan_in:(r + 2) * fan_in]
            new[v] = np.where(acc > 0, acc, LEAK * acc)
        h = new
    return np.maximum(sum(h.values()), 0)


def test_relation_order_is_etype_by_direction():
    assert list(RELATIONS) == [(t, d) for t in ETYPES for d in ("in", "out")]


def test_forward_matches_naive_oracle():
    rng = np.random.default_rng(0)
    m = Model(VOCAB, k=3, hidden=12, d=10, seed=1, dtype=np.float64)
    graphs = [random_ego(rng, int(rng.integers(2, 12)), int(rng.integers(1, 20))) for _ in range(6)]
    z = m.embed(graphs)
    for g, zi in zip(graphs, z):
        np.testing.assert_allclose(zi, _naive_embed(m, g), rtol=1e-10, atol=1e-12)


def test_permutation_invariance_and_batch_independence():
    rng = np.random.default_rng(2)
    m = Model(VOCAB, k=3, hidden=16, d=8, seed=0, dtype=np.float64)
    g = random_ego(rng, 10, 18)
    perm = {n: 100 + int(p) for n, p in zip(sorted(g.nodes), rng.permutation(len(g.nodes)))}
    h = ego(perm[g.anchor], {perm[n]: tuple(lab) for n, lab in g.nodes.items()},
            [(perm[e.src], perm[e.dst], e.etype) for e in reversed(g.edges)])
    others = [random_ego(rng, 6, 8) for _ in range(3)]
    z_alone = m.embed([g])[0]
    np.testing.assert_allclose(m.embed([h])[0], z_alone, rtol=1e-12)
    np.testing.assert_allclose(m.embed(others + [g])[-1], z_alone, rtol=1e-12)


def test_disjoint_union_is_additive_before_relu():
    # sum pooling: the pre-activation of a disjoint union is the sum of its parts
    m = Model(VOCAB, k=2, hidden=8, d=6, seed=3, dtype=np.float64)
    a = ego(0, {0: ("process", "bin"), 1: ("file", "etc")}, [(1, 0, "read")])
    b = ego(5, {5: ("process", "usr"), 6: ("file", "tmp")}, [(5, 6, "write")])
    u = ego(0, {**{n: tuple(x) for n, x in a.nodes.items()}, **{n: tuple(x) for n, x in b.nodes.items()}},
            [(1, 0, "read"), (5, 6, "write")])
    _, (_, sa) = m.forward(m.batch([a]), keep=True)
    _, (_, sb) = m.forward(m.batch([b]), keep=True)
    _, (_, su) = m.forward(m.batch([u]), keep=True)
    np.testing.assert_allclose(su, sa + sb, rtol=1e-12)


def test_embeddings_nonnegative_and_finite():
    m = Model(VOCAB, k=3, hidden=32, d=16, seed=4)
    z = m.embed([random_ego(np.random.default_rng(s), 8, 12) for s in range(20)])
    assert z.shape == (20, 16) and np.all(z >= 0) and np.all(np.isfinite(z))


def test_unknown_category_maps_to_unknown():
    v = Vocab(["process", "file"], ["etc"])
    assert v.abs_index("martian") == v.abs_index("unknown")


def test_order_penalty_values():
    assert order_penalty([1.0, 2.0], [0.0, 5.0]) == pytest.approx(1.0)
    assert order_penalty([1.0, 2.0], [1.0, 2.0]) == 0
    with pytest.raises(DimensionMismatch):
        order_penalty([1.0], [1.0, 2.0])


def test_pair_loss_hinge():
    zq = np.array([[2.0, 0.0], [1.0, 0.0], [3.0, 0.0]])
    zp = np.zeros((3, 2))
    loss, dzq, dzp, e = pair_loss(zq, zp, np.array([1, 0, 0]), alpha=2.0)
    # positive contributes E=4; negative with E=1 < alpha adds 1; negative with E=9 adds 0
    assert loss == pytest.approx(5.0)
    np.testing.assert_allclose(dzq, [[4.0, 0], [-2.0, 0], [0, 0]])
    np.testing.assert_allclose(dzp, -dzq)


def test_checkpoint_round_trip(tmp_path):
    m = Model(VOCAB, k=2, hidden=8, d=4, seed=9)
    path = tmp_path / "m.pvsm"
    m.save(str(path))
    back = Model.load(str(path))
    assert back.header() == m.header()
    for name in m.params:
        assert np.array_equal(back.params[name], m.params[name])
    path.write_bytes(b"XXXX" + path.read_bytes()[4:])
    with pytest.raises(ValueError):
        Model.load(str(path))


def _tiny_pairs(seed):
    rng = np.random.default_rng(seed)
    qs = [random_ego(rng, 3, 3) for _ in range(4)]
    ts = [random_ego(rng, 6, 8) for _ in range(4)]
    return qs, ts, np.array([1, 0, 1, 0])


@pytest.mark.parametrize("seed", [0, 1])
def test_grad_check_and_negative_control(seed):
    m = Model(VOCAB, k=2, hidden=6, d=5, seed=seed)
    qs, ts, lab = _tiny_pairs(seed)
    assert grad_check(m, qs, ts, lab, fraction=0.05, seed=seed) <= 1e-4

    def corrupt(g):
        g["b1"] *= 2.0

    assert grad_check(m, qs, ts, lab, fraction=0.05, seed=seed, corrupt=corrupt) > 1e-2


def _batches(n, seed=0):
    qs, ts, lab = _tiny_pairs(seed)
    for _ in range(n):
        yield qs, ts, lab


@pytest.mark.parametrize("opt", ["momentum", "adam"])
def test_training_reduces_loss(opt):
    m = Model(VOCAB, k=2, hidden=16, d=8, seed=0)
    res = train(m, _batches(60), TrainConfig(batch_size=8, num_batches=60, lr=1e-2, optimizer=opt, log_every=0))
    assert len(res.losses) == 60 and res.losses[-1] < res.losses[0]


def test_zero_learning_rate_keeps_parameters():
    m = Model(VOCAB, k=2, hidden=8, d=4, seed=0)
    before = {n: p.copy() for n, p in m.params.items()}
    train(m, _batches(3), TrainConfig(batch_size=8, num_batches=3, lr=0.0, log_every=0))
    assert all(np.array_equal(before[n], m.params[n]) for n in before)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_detected():
    m = Model(VOCAB, k=2, hidden=8, d=4, seed=0)
    m.params["W0"][:] = np.inf
    with pytest.raises(DivergenceDetected):
        train(m, _batches(2), TrainConfig(batch_size=8, num_batches=2, log_every=0))


def test_loss_trace_csv(tmp_path):
    path = tmp_path / "loss.csv"
    write_loss_trace(str(path), [1.5, 0.25])
    assert path.read_text() == "batch,loss\n0,1.5\n1,0.25\n"
