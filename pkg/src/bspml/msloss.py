"""Multi-similarity loss: per-anchor log-sum-exp terms, pair mining and the
sample-weighted informative batch loss with its gradient."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError


@dataclass(frozen=True)
class MSHyperParams:
    alpha: float = 2.0
    beta: float = 50.0
    rho: float = 1.0
    eps: float = 0.1

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if not self.beta > 0:
            raise ConfigError(f"beta must be > 0, got {self.beta}")
        if not self.eps >= 0:
            raise ConfigError(f"eps must be >= 0, got {self.eps}")


def _log1p_sumexp(z, axis=-1):
    """``log(1 + sum(exp(z)))`` along ``axis``; ``-inf`` entries are absent terms."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[axis] == 0:
        return np.zeros(np.delete(np.array(z.shape, dtype=int), axis))
    m = np.maximum(np.max(z, axis=axis, keepdims=True), 0.0)
    s = np.sum(np.exp(z - m), axis=axis, keepdims=True)
    # log1p keeps tiny sums when no exponent is positive
    out = np.where(m > 0, m + np.log(np.exp(-m) + s), np.log1p(s))
    return np.squeeze(out, axis=axis)


def _softmax_with_one(z, axis=-1):
    """Weights ``exp(z_j) / (1 + sum(exp(z)))``; the partial derivatives of
    ``_log1p_sumexp``."""
    m = np.maximum(np.max(z, axis=axis, keepdims=True), 0.0)
    e = np.exp(z - m)
    return e / (np.exp(-m) + np.sum(e, axis=axis, keepdims=True))


def xi_pos(anchor_sims, hp: MSHyperParams) -> float:
    s = np.asarray(anchor_sims, dtype=np.float64)
    return float(_log1p_sumexp(-hp.alpha * (s - hp.rho)) / hp.alpha)


def xi_neg(anchor_sims, hp: MSHyperParams) -> float:
    s = np.asarray(anchor_sims, dtype=np.float64)
    return float(_log1p_sumexp(hp.beta * (s - hp.rho)) / hp.beta)


def _pair_masks(labels):
    labels = np.asarray(labels)
    same = labels[:, None] == labels[None, :]
    pos = same.copy()
    np.fill_diagonal(pos, False)
    return pos, ~same


def xi_table(embeddings, labels, hp: MSHyperParams) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample positive and negative terms over the full sample set."""
    E = np.asarray(embeddings, dtype=np.float64)
    S = E @ E.T
    pos, neg = _pair_masks(labels)
    zp = np.where(pos, -hp.alpha * (S - hp.rho), -np.inf)
    zn = np.where(neg, hp.beta * (S - hp.rho), -np.inf)
    return _log1p_sumexp(zp, axis=1) / hp.alpha, _log1p_sumexp(zn, axis=1) / hp.beta


def ms_loss(embeddings, labels, hp: MSHyperParams) -> float:
    """Class-size normalized sum of positive and negative terms over all anchors."""
    labels = np.asarray(labels)
    xp, xn = xi_table(embeddings, labels, hp)
    _, inverse, counts = np.unique(labels, return_inverse=True, return_counts=True)
    return float(np.sum((xp + xn) / counts[inverse]))


@dataclass(frozen=True, eq=False)
class MiningResult:
    """Boolean ``(n, n)`` masks over batch positions: row ``i`` marks the
    informative positives / negatives of anchor ``i``."""

    pos: np.ndarray
    neg: np.ndarray

    def positives(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.pos[i])

    def negatives(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.neg[i])


def mine_pairs(S, labels, eps: float) -> MiningResult:
    """Keep negatives more similar than the hardest positive minus ``eps``
    and positives less similar than the hardest negative plus ``eps``.

    Both comparisons are strict. An anchor without positives keeps every
    negative; an anchor without negatives keeps no positives.
    """
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1] or S.shape[0] != len(labels):
        raise ContractError("similarity matrix must be square and match the labels")
    if S.shape[0] < 2:
        raise ContractError("mining needs at least 2 samples")
    pos, neg = _pair_masks(labels)
    min_pos = np.min(np.where(pos, S, np.inf), axis=1)
    min_pos[~pos.any(axis=1)] = -np.inf
    max_neg = np.max(np.where(neg, S, -np.inf), axis=1)
    hard_neg = neg & (S > (min_pos - eps)[:, None])
    hard_pos = pos & (S < (max_neg + eps)[:, None])
    return MiningResult(hard_pos, hard_neg)


def _batch_terms(batch_ids, w, mining, S, hp, P, K):
    batch_ids = np.asarray(batch_ids)
    n = batch_ids.size
    if n != P * K:
        raise ContractError(f"batch has {n} samples, expected P*K = {P * K}")
    S = np.asarray(S, dtype=np.float64)
    if S.shape != (n, n) or mining.pos.shape != (n, n):
        raise ContractError("similarity matrix and mining masks must be (P*K, P*K)")
    wb = np.asarray(w, dtype=np.float64)[batch_ids]
    if np.any(wb < 0) or np.any(wb > 1):
        raise ContractError("sample weights must lie in [0, 1]")

    n_pos = mining.pos.sum(axis=1)
    n_neg = mining.neg.sum(axis=1)
    # Empty mined sets contribute nothing.
    avg_wp = np.where(n_pos > 0, (mining.pos @ wb) / np.maximum(n_pos, 1), 0.0)
    avg_wn = np.where(n_neg > 0, (mining.neg @ wb) / np.maximum(n_neg, 1), 0.0)
    zp = np.where(mining.pos, -hp.alpha * (S - hp.rho), -np.inf)
    zn = np.where(mining.neg, hp.beta * (S - hp.rho), -np.inf)
    return wb, avg_wp, avg_wn, zp, zn


def weighted_batch_loss(batch_ids, w, mining: MiningResult, S, hp: MSHyperParams,
                        P: int, K: int) -> float:
    """Informative batch loss with anchors scaled by their weight and each
    mined side scaled by the mean weight of its mined partners."""
    wb, avg_wp, avg_wn, zp, zn = _batch_terms(batch_ids, w, mining, S, hp, P, K)
    per_anchor = wb * (
        avg_wp * _log1p_sumexp(zp, axis=1) / hp.alpha
        + avg_wn * _log1p_sumexp(zn, axis=1) / hp.beta
    )
    return float(per_anchor.sum() / (P * K))


def weighted_batch_loss_grad(batch_ids, w, mining: MiningResult, S, hp: MSHyperParams,
                             P: int, K: int) -> tuple[float, np.ndarray]:
    """Loss and its gradient with respect to the entries of ``S``.

    Weights and mined sets are held constant. Entry ``[i, j]`` is the
    derivative through anchor ``i``'s use of ``S[i, j]``.
    """
    wb, avg_wp, avg_wn, zp, zn = _batch_terms(batch_ids, w, mining, S, hp, P, K)
    lp = _log1p_sumexp(zp, axis=1)
    ln = _log1p_sumexp(zn, axis=1)
    loss = float(np.sum(wb * (avg_wp * lp / hp.alpha + avg_wn * ln / hp.beta)) / (P * K))
    dS = (
        -(wb * avg_wp)[:, None] * _softmax_with_one(zp, axis=1)
        + (wb * avg_wn)[:, None] * _softmax_with_one(zn, axis=1)
    ) / (P * K)
    return loss, dS


def batch_embedding_grad(E, dS) -> np.ndarray:
    """Chain ``dLoss/dS`` through ``S = E E^T``."""
    return (dS + dS.T) @ E
