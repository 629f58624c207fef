"""Classification metrics for pair evaluation, including the 1:m imbalance protocol."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .embedder import Model, order_penalty

COLUMNS = ("acc", "f1", "auc", "prec", "recall", "fpr", "mcc")


class DegenerateLabels(ValueError):
    pass


def roc_auc(labels, scores) -> float:
    """Mann-Whitney AUC with average ranks for ties; NaN for single-class input."""
    y = np.asarray(labels).astype(bool)
    s = np.asarray(scores, dtype=np.float64)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(len(s))
    sorted_s = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _div(a, b) -> float:
    return a / b if b else 0.0


def classification_metrics(labels, predictions, scores) -> dict:
    """Acc/F1/AUC/Prec/Recall/FPR/MCC as fractions (MCC in [-1, 1])."""
    y = np.asarray(labels).astype(bool)
    p = np.asarray(predictions).astype(bool)
    tp = int(np.sum(y & p))
    tn = int(np.sum(~y & ~p))
    fp = int(np.sum(~y & p))
    fn = int(np.sum(y & ~p))
    prec = _div(tp, tp + fp)
    rec = _div(tp, tp + fn)
    denom = math.sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))
    return {
        "acc": _div(tp + tn, len(y)),
        "f1": _div(2 * prec * rec, prec + rec),
        "auc": roc_auc(y, scores),
        "prec": prec,
        "recall": rec,
        "fpr": _div(fp, fp + tn),
        "mcc": (tp * tn - fp * fn) / denom if denom else 0.0,
        "tp": tp, "tn": tn, "fp": fp, "fn": fn,
    }


def pair_penalties(model: Model, pairs) -> np.ndarray:
    zq = model.embed([p.query for p in pairs])
    zp = model.embed([p.target for p in pairs])
    return order_penalty(zq, zp)


def evaluate_penalties(labels, penalties, tau_ovp: float, strict: bool = False) -> dict:
    """Predict "contained" when the penalty is within tau_ovp; AUC ranks by -penalty."""
    labels = np.asarray(labels)
    if strict and len(np.unique(labels)) < 2:
        raise DegenerateLabels("need both positive and negative pairs")
    pen = np.asarray(penalties, dtype=np.float64)
    return classification_metrics(labels, pen <= tau_ovp, -pen)


def evaluate(pairs, model: Model, tau_ovp: float) -> dict:
    return evaluate_penalties([p.label for p in pairs], pair_penalties(model, pairs), tau_ovp)


def imbalance_folds(labels, m: int, rng) -> list:
    """Index sets for the 1:m protocol.

    All negatives are kept in every fold; positives are shuffled and dealt
    into folds of max(1, n_neg // m) so each positive is tested exactly once.
    """
    labels = np.asarray(labels)
    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels == 0)
    if m < 1:
        raise ValueError("m must be >= 1")
    if not len(pos) or not len(neg):
        raise DegenerateLabels("imbalance protocol needs positives and negatives")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    pos = rng.permutation(pos)
    per = max(1, len(neg) // m)
    return [np.concatenate([pos[i:i + per], neg]) for i in range(0, len(pos), per)]


def evaluate_imbalanced(labels, penalties, tau_ovp: float, m: int, rng) -> tuple:
    """Per-fold metric rows and their column means."""
    labels = np.asarray(labels)
    penalties = np.asarray(penalties)
    rows = []
    for idx in imbalance_folds(labels, m, rng):
        rows.append(evaluate_penalties(labels[idx], penalties[idx], tau_ovp))
    mean = {c: float(np.mean([r[c] for r in rows])) for c in COLUMNS}
    return rows, mean


def metrics_csv(rows: Sequence[dict], names: Optional[Sequence[str]] = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("run",) + COLUMNS)
    for i, r in enumerate(rows):
        w.writerow([names[i] if names else i] + [repr(float(r[c])) for c in COLUMNS])
    return buf.getvalue()
