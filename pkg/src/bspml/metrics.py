"""Retrieval and clustering metrics plus weight-balance diagnostics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError


@dataclass(frozen=True)
class RetrievalReport:
    recall: dict
    nmi: float

    def as_dict(self) -> dict:
        out = {f"R@{k}": v for k, v in self.recall.items()}
        out["NMI"] = self.nmi
        return out


@dataclass(frozen=True)
class WeightStats:
    maw: float
    sdaw: float
    class_means: np.ndarray


def recall_at_k(embeddings, labels, ks) -> dict:
    """Fraction of queries with a same-label sample among their ``k``
    most similar others. Ties in similarity go to the smaller id."""
    E = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    n = E.shape[0]
    ks = [int(k) for k in ks]
    if not ks or min(ks) < 1:
        raise ContractError("ks must be a non-empty list of positive integers")
    if max(ks) >= n:
        raise ContractError(f"K={max(ks)} needs at least {max(ks) + 1} samples, got {n}")
    S = E @ E.T
    np.fill_diagonal(S, -np.inf)
    ids = np.broadcast_to(np.arange(n), S.shape)
    # lexsort: last key is primary -> descending similarity, then ascending id
    order = np.lexsort((ids, -S), axis=1)
    hits = labels[order] == labels[:, None]
    first_hit = np.where(hits.any(axis=1), hits.argmax(axis=1), n)
    return {k: float(np.mean(first_hit < k)) for k in ks}


def _kmeans_pp(X, k, rng):
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return np.array(centers)


def _sq_dists(X, centers):
    return np.sum(X**2, axis=1)[:, None] - 2.0 * X @ centers.T + np.sum(centers**2, axis=1)[None, :]


def kmeans(X, k: int, seed: int = 0, restarts: int = 5, max_iter: int = 100,
           tol: float = 1e-8) -> tuple[np.ndarray, float]:
    """Lloyd's algorithm with k-means++ seeding; best inertia over restarts."""
    X = np.asarray(X, dtype=np.float64)
    if not 1 <= k <= X.shape[0]:
        raise ContractError(f"k={k} must lie in [1, {X.shape[0]}]")
    best = None
    for child in np.random.SeedSequence(seed).spawn(restarts):
        rng = np.random.default_rng(child)
        centers = _kmeans_pp(X, k, rng)
        for _ in range(max_iter):
            assign = np.argmin(_sq_dists(X, centers), axis=1)
            new = centers.copy()
            for j in range(k):
                members = X[assign == j]
                if len(members):
                    new[j] = members.mean(axis=0)
            moved = np.max(np.linalg.norm(new - centers, axis=1))
            centers = new
            if moved < tol:
                break
        assign = np.argmin(_sq_dists(X, centers), axis=1)
        inertia = float(np.sum((X - centers[assign]) ** 2))
        if best is None or inertia < best[1]:
            best = (assign, inertia)
    return best


def nmi_score(truth, clusters) -> float:
    """``2 I / (H(truth) + H(clusters))`` in nats; 0 when both entropies vanish."""
    truth = np.asarray(truth)
    clusters = np.asarray(clusters)
    if truth.shape != clusters.shape:
        raise ContractError("partitions must label the same samples")
    n = truth.size
    _, t = np.unique(truth, return_inverse=True)
    _, c = np.unique(clusters, return_inverse=True)
    table = np.zeros((t.max() + 1, c.max() + 1))
    np.add.at(table, (t, c), 1.0)
    p = table / n
    pt, pc = p.sum(axis=1), p.sum(axis=0)
    nz = p > 0
    mi = float(np.sum(p[nz] * np.log(p[nz] / np.outer(pt, pc)[nz])))
    h = -float(np.sum(pt * np.log(pt))) - float(np.sum(pc * np.log(pc)))
    if h <= 0:
        return 0.0
    return max(0.0, min(1.0, 2.0 * mi / h))


def nmi(embeddings, labels, k: int | None = None, seed: int = 0) -> float:
    """Cluster the embeddings with k-means and score against ``labels``.
    ``k`` defaults to the number of distinct labels."""
    labels = np.asarray(labels)
    k = len(np.unique(labels)) if k is None else k
    if k > len(labels):
        raise ContractError(f"k={k} exceeds the number of samples {len(labels)}")
    assign, _ = kmeans(embeddings, k, seed=seed)
    return nmi_score(labels, assign)


def evaluate_retrieval(embeddings, labels, ks, seed: int = 0) -> RetrievalReport:
    return RetrievalReport(recall_at_k(embeddings, labels, ks), nmi(embeddings, labels, seed=seed))


def weight_stats(state) -> WeightStats:
    """Mean and population standard deviation of per-class mean weights."""
    means = np.array([state.w[ids].mean() for ids in state.classes])
    maw = float(means.mean())
    return WeightStats(maw, float(np.sqrt(np.mean((means - maw) ** 2))), means)


def weight_separation(w, mask) -> tuple[float, float, float]:
    """Mean clean weight, mean noisy weight and their difference."""
    w = np.asarray(w, dtype=np.float64)
    noisy = np.asarray(mask.flipped, dtype=bool)
    if noisy.shape != w.shape:
        raise ContractError("mask must cover every weight")
    if not noisy.any() or noisy.all():
        raise ContractError("need at least one clean and one noisy sample")
    clean_mean, noisy_mean = float(w[~noisy].mean()), float(w[noisy].mean())
    return clean_mean, noisy_mean, clean_mean - noisy_mean
