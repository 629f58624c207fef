"""Multi-relational message passing into order embeddings, with manual gradients.

Layer l computes, for every node v,

    h_v^l = leaky(W_self^l h_v^{l-1} + sum_r mean_{u in N_r(v)} W_r^l h_u^{l-1} + b^l)

over 8 relations (4 edge types x {incoming, outgoing}); the graph embedding
is z = relu(sum_v h_v^k). Per layer the self and relation weights are stored
stacked in one matrix ``W{l}`` of shape (9 * fan_in, fan_out): row block 0
is W_self and block 1 + r is W_r.
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .events import NETWORK_CATEGORIES, UNKNOWN, OSProfile
from .graph import ETYPES, KINDS
from .partition import EgoGraph

log = logging.getLogger(__name__)

RELATIONS = tuple((t, d) for t in ETYPES for d in ("in", "out"))
LEAK = 0.01
SIGMA = "leaky_relu:0.01"
RHO = "relu"
_MAGIC = b"PVSM"


class DimensionMismatch(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


class DivergenceDetected(RuntimeError):
    pass


class Vocab:
    """Frozen kind and abstraction vocabularies; unseen labels map to ``unknown``."""

    def __init__(self, kinds: Sequence[str], abstractions: Sequence[str]):
        self.kinds = list(kinds)
        abstractions = list(dict.fromkeys(abstractions))
        if UNKNOWN not in abstractions:
            abstractions.append(UNKNOWN)
        self.abstractions = abstractions
        self._k = {k: i for i, k in enumerate(self.kinds)}
        self._a = {a: i for i, a in enumerate(self.abstractions)}
        self.unseen: set = set()

    @classmethod
    def for_profile(cls, profile: OSProfile) -> "Vocab":
        return cls(KINDS, list(profile.categories) + list(NETWORK_CATEGORIES))

    @property
    def dim(self) -> int:
        return len(self.kinds) + len(self.abstractions)

    def kind_index(self, kind: str) -> int:
        return self._k[kind]

    def abs_index(self, ab: str) -> int:
        i = self._a.get(ab)
        if i is None:
            if ab not in self.unseen:
                self.unseen.add(ab)
                log.warning("category %r outside the model vocabulary, using %r", ab, UNKNOWN)
            return self._a[UNKNOWN]
        return i

    def to_dict(self) -> dict:
        return {"kinds": self.kinds, "abstractions": self.abstractions}


def node_features(kind: str, abstraction: str, vocab: Vocab) -> np.ndarray:
    x = np.zeros(vocab.dim)
    x[vocab.kind_index(kind)] = 1.0
    x[len(vocab.kinds) + vocab.abs_index(abstraction)] = 1.0
    return x


@dataclass
class GraphTensor:
    """Compact, id-free view of one graph: feature slots and local edge arrays."""

    kind: np.ndarray
    abst: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    etype: np.ndarray

    @property
    def n(self) -> int:
        return len(self.kind)


_ETYPE_INDEX = {t: i for i, t in enumerate(ETYPES)}


def tensorize(g: EgoGraph, vocab: Vocab) -> GraphTensor:
    ids = sorted(g.nodes)
    local = {n: i for i, n in enumerate(ids)}
    kind = np.array([vocab.kind_index(g.nodes[n].kind) for n in ids], dtype=np.int64)
    abst = np.array([vocab.abs_index(g.nodes[n].abstraction) for n in ids], dtype=np.int64)
    uniq = sorted({(local[e.src], local[e.dst], _ETYPE_INDEX[e.etype]) for e in g.edges})
    arr = np.array(uniq, dtype=np.int64).reshape(-1, 3)
    return GraphTensor(kind, abst, arr[:, 0], arr[:, 1], arr[:, 2])


class Batch:
    """Block-diagonal union of graphs with per-relation mean operators."""

    def __init__(self, graphs: Sequence[GraphTensor], vocab_dim: int, n_kinds: int, dtype=np.float32):
        sizes = np.array([g.n for g in graphs], dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        n = int(offsets[-1])
        self.n_graphs = len(graphs)
        self.n_nodes = n
        x = np.zeros((n, vocab_dim), dtype=dtype)
        rows = np.arange(n)
        if n:
            x[rows, np.concatenate([g.kind for g in graphs])] = 1
            x[rows, n_kinds + np.concatenate([g.abst for g in graphs])] = 1
        self.x = x
        src = np.concatenate([g.src + o for g, o in zip(graphs, offsets)]) if graphs else np.zeros(0, np.int64)
        dst = np.concatenate([g.dst + o for g, o in zip(graphs, offsets)]) if graphs else np.zeros(0, np.int64)
        et = np.concatenate([g.etype for g in graphs]) if graphs else np.zeros(0, np.int64)
        self.rel = []
        for t in range(len(ETYPES)):
            m = et == t
            # incoming: v aggregates over sources u of u->v; outgoing: over targets
            for rows_, cols_ in ((dst[m], src[m]), (src[m], dst[m])):
                deg = np.bincount(rows_, minlength=n).astype(dtype)
                vals = (1.0 / deg[rows_]).astype(dtype) if len(rows_) else np.zeros(0, dtype)
                a = sp.csr_matrix((vals, (rows_, cols_)), shape=(n, n), dtype=dtype)
                self.rel.append(a)
        self.rel_t = [a.T.tocsr() for a in self.rel]
        graph_of = np.repeat(np.arange(len(graphs)), sizes)
        self.pool = sp.csr_matrix((np.ones(n, dtype=dtype), (graph_of, rows)), shape=(len(graphs), n), dtype=dtype)
        self.pool_t = self.pool.T.tocsr()


def _leaky(x):
    return np.where(x > 0, x, LEAK * x)


class Model:
    """Parameters plus forward/backward passes."""

    def __init__(self, vocab: Vocab, k: int = 3, hidden: int = 256, d: int = 256, seed: int = 0,
                 dtype=np.float32):
        self.vocab = vocab
        self.k = k
        self.hidden = hidden
        self.d = d
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.params = {}
        dims = [vocab.dim] + [hidden] * (k - 1) + [d]
        nrel = 1 + len(RELATIONS)
        for l in range(k):
            fan_in, fan_out = dims[l], dims[l + 1]
            limit = np.sqrt(6.0 / (nrel * fan_in + fan_out))
            self.params[f"W{l}"] = rng.uniform(-limit, limit, size=(nrel * fan_in, fan_out)).astype(self.dtype)
            self.params[f"b{l}"] = np.zeros(fan_out, dtype=self.dtype)

    @property
    def dims(self) -> list:
        return [self.vocab.dim] + [self.hidden] * (self.k - 1) + [self.d]

    def relation_block(self, layer: int, r: Optional[int]) -> slice:
        """Row slice of ``W{layer}`` holding W_self (r=None) or W_r."""
        fan_in = self.dims[layer]
        j = 0 if r is None else 1 + r
        return slice(j * fan_in, (j + 1) * fan_in)

    def astype(self, dtype) -> "Model":
        m = Model.__new__(Model)
        m.vocab, m.k, m.hidden, m.d, m.dtype = self.vocab, self.k, self.hidden, self.d, np.dtype(dtype)
        m.params = {n: p.astype(dtype) for n, p in self.params.items()}
        return m

    def batch(self, graphs: Sequence[EgoGraph]) -> Batch:
        return Batch([tensorize(g, self.vocab) for g in graphs], self.vocab.dim, len(self.vocab.kinds), self.dtype)

    def forward(self, batch: Batch, keep: bool = False):
        """Embeddings (n_graphs x d); with ``keep`` also the backward cache."""
        h = batch.x
        cache = []
        for l in range(self.k):
            c = np.concatenate([h] + [a @ h for a in batch.rel], axis=1)
            pre = c @ self.params[f"W{l}"] + self.params[f"b{l}"]
            if keep:
                cache.append((c, pre))
            h = _leaky(pre)
        s = batch.pool @ h
        z = np.maximum(s, 0)
        if keep:
            return z, (cache, s)
        return z

    def backward(self, batch: Batch, saved, dz: np.ndarray) -> dict:
        cache, s = saved
        grads = {}
        dh = batch.pool_t @ (dz * (s > 0))
        for l in reversed(range(self.k)):
            c, pre = cache[l]
            dpre = dh * np.where(pre > 0, 1.0, LEAK).astype(dh.dtype)
            grads[f"W{l}"] = c.T @ dpre
            grads[f"b{l}"] = dpre.sum(axis=0)
            if l == 0:
                break
            dc = dpre @ self.params[f"W{l}"].T
            fan_in = self.dims[l]
            dh = dc[:, :fan_in].copy()
            for r, at in enumerate(batch.rel_t):
                dh += at @ dc[:, (r + 1) * fan_in:(r + 2) * fan_in]
        return grads

    def embed(self, graphs: Sequence[EgoGraph], chunk: int = 2048) -> np.ndarray:
        graphs = list(graphs)
        if not graphs:
            return np.zeros((0, self.d), dtype=self.dtype)
        return np.concatenate([self.forward(self.batch(graphs[i:i + chunk])) for i in range(0, len(graphs), chunk)])

    # -- checkpoint ----------------------------------------------------------

    def header(self) -> dict:
        return {"k": self.k, "hidden": self.hidden, "d": self.d, "dtype": self.dtype.name, "sigma": SIGMA,
                "rho": RHO, "relations": [f"{t}:{d}" for t, d in RELATIONS], "vocab": self.vocab.to_dict(),
                "n_kinds": len(self.vocab.kinds), "n_abstractions": len(self.vocab.abstractions),
                "tensors": [[name, list(self.params[name].shape)] for name in sorted(self.params)]}

    def save(self, path: str) -> None:
        head = json.dumps(self.header(), sort_keys=True, separators=(",", ":")).encode()
        with open(path, "wb") as fh:
            fh.write(_MAGIC + struct.pack("<I", len(head)) + head)
            for name in sorted(self.params):
                fh.write(np.ascontiguousarray(self.params[name], dtype=self.dtype.newbyteorder("<")).tobytes())

    @classmethod
    def load(cls, path: str) -> "Model":
        with open(path, "rb") as fh:
            blob = fh.read()
        if blob[:4] != _MAGIC:
            raise ValueError(f"{path}: not a model checkpoint")
        (hl,) = struct.unpack("<I", blob[4:8])
        head = json.loads(blob[8:8 + hl])
        if head["sigma"] != SIGMA or head["rho"] != RHO:
            raise ValueError(f"{path}: unsupported nonlinearity {head['sigma']}/{head['rho']}")
        m = cls.__new__(cls)
        m.vocab = Vocab(head["vocab"]["kinds"], head["vocab"]["abstractions"])
        m.k, m.hidden, m.d, m.dtype = head["k"], head["hidden"], head["d"], np.dtype(head["dtype"])
        m.params = {}
        off = 8 + hl
        le = m.dtype.newbyteorder("<")
        for name, shape in head["tensors"]:
            count = int(np.prod(shape))
            m.params[name] = np.frombuffer(blob, dtype=le, count=count, offset=off).reshape(shape).astype(m.dtype)
            off += count * m.dtype.itemsize
        return m


def order_penalty(z_q, z_p) -> np.ndarray:
    """||max(0, z_q - z_p)||^2 along the last axis."""
    z_q, z_p = np.asarray(z_q), np.asarray(z_p)
    if z_q.shape[-1] != z_p.shape[-1]:
        raise DimensionMismatch(f"{z_q.shape[-1]} != {z_p.shape[-1]}")
    v = np.maximum(0.0, z_q - z_p)
    return np.sum(v * v, axis=-1)


def pair_loss(zq: np.ndarray, zp: np.ndarray, labels: np.ndarray, alpha: float) -> tuple:
    """Max-margin order loss and its gradients w.r.t. zq and zp."""
    diff = np.maximum(0.0, zq - zp)
    e = np.sum(diff * diff, axis=1)
    pos = labels == 1
    hinge = (~pos) & (e < alpha)
    loss = float(np.sum(e[pos], dtype=np.float64) + np.sum(alpha - e[hinge], dtype=np.float64))
    coef = np.where(pos, 1.0, np.where(hinge, -1.0, 0.0)).astype(zq.dtype)
    dzq = 2.0 * diff * coef[:, None]
    return loss, dzq, -dzq, e


def pair_batch(model: Model, queries, targets) -> Batch:
    """One block-diagonal batch holding all queries followed by all targets."""
    return model.batch(list(queries) + list(targets))


def batch_loss(model: Model, batch: Batch, n_pairs: int, labels, alpha: float, grads: bool = True):
    """Loss over a pair batch built by ``pair_batch``; returns (loss, grads, penalties)."""
    z, saved = model.forward(batch, keep=True)
    loss, dzq, dzp, e = pair_loss(z[:n_pairs], z[n_pairs:], np.asarray(labels), alpha)
    if not grads:
        return loss, None, e
    return loss, model.backward(batch, saved, np.concatenate([dzq, dzp])), e


@dataclass
class TrainConfig:
    alpha: float = 1.0
    batch_size: int = 1024
    num_batches: int = 400
    lr: float = 1e-3
    momentum: float = 0.9
    optimizer: str = "momentum"
    seed: int = 0
    log_every: int = 20


class _Momentum:
    def __init__(self, params, lr, mu):
        self.lr, self.mu = lr, mu
        self.v = {n: np.zeros_like(p) for n, p in params.items()}

    def step(self, params, grads):
        for n in params:
            self.v[n] = self.mu * self.v[n] - self.lr * grads[n]
            params[n] += self.v[n]


class _Adam:
    def __init__(self, params, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps, self.t = lr, b1, b2, eps, 0
        self.m = {n: np.zeros_like(p) for n, p in params.items()}
        self.v = {n: np.zeros_like(p) for n, p in params.items()}

    def step(self, params, grads):
        self.t += 1
        c1, c2 = 1 - self.b1 ** self.t, 1 - self.b2 ** self.t
        for n in params:
            g = grads[n]
            self.m[n] = self.b1 * self.m[n] + (1 - self.b1) * g
            self.v[n] = self.b2 * self.v[n] + (1 - self.b2) * g * g
            params[n] -= (self.lr * (self.m[n] / c1) / (np.sqrt(self.v[n] / c2) + self.eps)).astype(params[n].dtype)


@dataclass
class TrainResult:
    model: Model
    losses: list = field(default_factory=list)


def train(model: Model, batches: Iterable, cfg: TrainConfig, on_batch: Optional[Callable] = None) -> TrainResult:
    """Mini-batch descent over ``batches`` of (queries, targets, labels)."""
    if cfg.optimizer == "adam":
        opt = _Adam(model.params, cfg.lr)
    elif cfg.optimizer == "momentum":
        opt = _Momentum(model.params, cfg.lr, cfg.momentum)
    else:
        raise ValueError(f"unknown optimizer {cfg.optimizer!r}")
    losses = []
    for i, (queries, targets, labels) in enumerate(batches):
        batch = pair_batch(model, queries, targets)
        loss, grads, _ = batch_loss(model, batch, len(labels), labels, cfg.alpha)
        if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise DivergenceDetected(f"non-finite loss/gradient at batch {i}: loss={loss}")
        if cfg.lr:
            opt.step(model.params, grads)
        losses.append(loss)
        if cfg.log_every and i % cfg.log_every == 0:
            log.info("batch %d loss %.4f", i, loss)
        if on_batch is not None:
            on_batch(i, loss)
    return TrainResult(model, losses)


def write_loss_trace(path: str, losses: Sequence[float]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("batch,loss\n")
        for i, v in enumerate(losses):
            fh.write(f"{i},{v!r}\n")


def grad_check(model: Model, queries, targets, labels, alpha: float = 1.0, step: float = 1e-4,
               scale: float = 1e-2, floor: float = 1e-5, fraction: float = 0.01, min_per_tensor: int = 8, seed: int = 0,
               corrupt: Optional[Callable] = None) -> float:
    """Max relative error of analytic vs central-difference gradients.

    Runs in float64 over a random ``fraction`` of every parameter tensor
    (at least ``min_per_tensor`` coordinates). The difference step is
    ``step`` relative to the parameter scale ``scale``; larger absolute
    steps straddle the piecewise-linear kinks. Gradients smaller than
    ``floor`` are compared absolutely. ``corrupt(grads)`` may edit
    the analytic gradients in place, for fault-injection tests.
    """
    eps = step * scale
    m = model.astype(np.float64)
    batch = pair_batch(m, queries, targets)
    labels = np.asarray(labels)
    n = len(labels)
    _, grads, _ = batch_loss(m, batch, n, labels, alpha)
    if corrupt is not None:
        corrupt(grads)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name in sorted(m.params):
        p = m.params[name]
        flat = p.reshape(-1)
        count = min(flat.size, max(min_per_tensor, int(np.ceil(fraction * flat.size))))
        for j in rng.choice(flat.size, size=count, replace=False):
            old = flat[j]
            flat[j] = old + eps
            up = batch_loss(m, batch, n, labels, alpha, grads=False)[0]
            flat[j] = old - eps
            down = batch_loss(m, batch, n, labels, alpha, grads=False)[0]
            flat[j] = old
            num = (up - down) / (2 * eps)
            ana = grads[name].reshape(-1)[j]
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            worst = max(worst, err)
    return worst
