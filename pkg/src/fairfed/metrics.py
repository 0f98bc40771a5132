"""Per-group true-positive rates, disparity summaries and the gradient
rank-correlation diagnostic."""
from dataclasses import asdict, dataclass
from typing import List

import numpy as np

from .errors import ContractError, ShapeError
from .fairness import ThresholdVerdict, evaluate_threshold
from .model import predict


@dataclass(frozen=True)
class ClientFairness:
    client_id: int
    tpr: List[float]
    tprd: float
    tprsd: float
    wtpr: float
    btpr: float
    threshold_verdict: ThresholdVerdict


@dataclass(frozen=True)
class FairnessReport:
    per_client: List[ClientFairness]

    def to_dict(self):
        return {"per_client": [asdict(c) for c in self.per_client]}

    @classmethod
    def from_dict(cls, payload):
        clients = []
        for c in payload["per_client"]:
            c = dict(c)
            c["threshold_verdict"] = ThresholdVerdict(**c["threshold_verdict"])
            clients.append(ClientFairness(**c))
        return cls(clients)

    def column(self, name):
        return np.array([getattr(c, name) for c in self.per_client])


def group_tpr(model, test):
    """Fraction of each group's samples whose predicted class is correct."""
    counts = test.group_counts()
    if np.any(counts == 0):
        raise ContractError(f"group(s) {np.flatnonzero(counts == 0).tolist()} missing from test set")
    hits = predict(model, test.features) == test.labels
    return np.bincount(test.groups, weights=hits, minlength=test.num_groups) / counts


def fairness_summary(tpr, eta_mu_threshold=0.5, client_id=0, ddof=0, reference=None):
    """Disparity statistics for one client's per-group TPR vector.

    ``reference`` optionally supplies ``(btpr, wtpr)`` from a baseline run;
    the best-group threshold is then derived from it instead of from ``tpr``.
    ``ddof=0`` gives the population standard deviation.
    """
    tpr = np.asarray(tpr, dtype=np.float64)
    if tpr.size == 0:
        raise ContractError("empty TPR vector")
    wtpr, btpr = float(tpr.min()), float(tpr.max())
    if reference is None:
        verdict = evaluate_threshold(btpr, wtpr, eta_mu_threshold)
    else:
        verdict = evaluate_threshold(reference[0], reference[1], eta_mu_threshold, observed_btpr=btpr)
    return ClientFairness(
        client_id=int(client_id),
        tpr=[float(t) for t in tpr],
        tprd=btpr - wtpr,
        # exact zero for equal TPRs (np.std leaves ~1e-16 behind)
        tprsd=float(np.std(tpr, ddof=ddof)) if tpr.size > ddof and btpr > wtpr else 0.0,
        wtpr=wtpr,
        btpr=btpr,
        threshold_verdict=verdict,
    )


def _fractional_ranks(x):
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(x.size)
    ranks[order] = np.arange(1, x.size + 1)
    # average ranks over ties
    sorted_x = x[order]
    starts = np.flatnonzero(np.r_[True, sorted_x[1:] != sorted_x[:-1]])
    ends = np.r_[starts[1:], x.size]
    for s, e in zip(starts, ends):
        if e - s > 1:
            ranks[order[s:e]] = (s + e + 1) / 2.0
    return ranks


def spearman(u, v):
    """Spearman rank correlation: Pearson correlation of average ranks."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.size != v.size:
        raise ShapeError(f"length mismatch: {u.size} vs {v.size}")
    if u.size < 2:
        raise ContractError("need at least two observations")
    ru, rv = _fractional_ranks(u), _fractional_ranks(v)
    ru -= ru.mean()
    rv -= rv.mean()
    denom = np.sqrt((ru @ ru) * (rv @ rv))
    if denom == 0:
        raise ContractError("correlation undefined for constant input")
    return float(np.clip((ru @ rv) / denom, -1.0, 1.0))


def gradient_correlation(grad_a, grad_b):
    """Spearman correlation between two clients' last-layer gradients."""
    # a ModelParams gradient covers the whole (single, last) layer: weights and bias
    a = grad_a.flat() if hasattr(grad_a, "flat") else np.asarray(grad_a)
    b = grad_b.flat() if hasattr(grad_b, "flat") else np.asarray(grad_b)
    if a.shape != b.shape:
        raise ShapeError(f"gradient shapes differ: {a.shape} vs {b.shape}")
    return spearman(a.ravel(), b.ravel())
