"""Alternating training: embedding updates on the weighted batch loss,
weight updates by stochastic coordinate descent, and a growing age
parameter."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import embed as nn
from .data import Dataset, split_by_class
from .errors import ConfigError, ContractError, NumericError
from .metrics import weight_stats
from .msloss import (
    MSHyperParams,
    batch_embedding_grad,
    mine_pairs,
    weighted_batch_loss_grad,
    xi_table,
)
from .weights import StepSchedule, WeightState, XiTable, objective, solve_weights

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AgeSchedule:
    lam0: float = 1.0
    mult: float = 1.3
    lam_max: float = 3.0

    def __post_init__(self):
        if not self.lam0 > 0:
            raise ConfigError(f"initial age parameter must be > 0, got {self.lam0}")
        if not self.mult > 1:
            raise ConfigError(f"age multiplier must be > 1, got {self.mult}")
        if not self.lam_max >= self.lam0:
            raise ConfigError("maximum age parameter must be >= the initial one")

    def next(self, lam: float) -> float:
        return min(self.mult * lam, self.lam_max)

    def sequence(self, T: int) -> list[float]:
        out, lam = [], self.lam0
        for _ in range(T):
            lam = self.next(lam)
            out.append(lam)
        return out


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run.

    ``w_iters=None`` means ``20 * N`` coordinate steps per alternation;
    ``w_classes=None`` samples ``min(P, C - 1)`` other classes and
    ``w_samples=None`` samples ``K`` weights per class in the weight step.
    The weight step uses exact coordinate gradients unless
    ``w_exhaustive=False``.
    """

    outer_iters: int = 200
    theta_epochs: int = 1
    w_iters: int | None = None
    P: int = 4
    K: int = 4
    lr: float = 0.02
    hp: MSHyperParams = field(default_factory=MSHyperParams)
    mu: float = 3.0
    age: AgeSchedule = field(default_factory=AgeSchedule)
    w_classes: int | None = None
    w_samples: int | None = None
    w_exhaustive: bool = True
    w_growth: float = 0.0
    w_schedule: StepSchedule = field(default_factory=StepSchedule)
    embed_dim: int = 8
    hidden: int = 32
    activation: str = "tanh"
    seed: int = 0

    def __post_init__(self):
        if self.P < 2 or self.K < 2:
            raise ConfigError("a batch needs P >= 2 classes and K >= 2 samples per class")
        for name in ("outer_iters", "theta_epochs", "embed_dim", "hidden"):
            if getattr(self, name) < 0 or (name in ("embed_dim", "hidden") and getattr(self, name) < 1):
                raise ConfigError(f"{name} must be positive")
        if self.w_iters is not None and self.w_iters < 0:
            raise ConfigError("w_iters must be >= 0")
        if self.lr < 0:
            raise ConfigError("learning rate must be >= 0")
        if self.mu < 0:
            raise ConfigError("mu must be >= 0")
        if self.activation not in nn.ACTIVATIONS:
            raise ConfigError(f"activation must be one of {nn.ACTIVATIONS}")


@dataclass
class ConvergenceTrace:
    rows: list = field(default_factory=list)

    def append(self, t, lam, obj, maw, sdaw):
        prev = self.rows[-1]["objective"] if self.rows else None
        delta = None if prev is None else abs(obj - prev)
        self.rows.append(dict(t=t, **{"lambda": lam}, objective=obj,
                              delta_objective=delta, maw=maw, sdaw=sdaw))

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        return [r[name] for r in self.rows]

    def to_csv(self, path):
        cols = ["t", "lambda", "objective", "delta_objective", "maw", "sdaw"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for r in self.rows:
                writer.writerow(["" if r[c] is None else repr(r[c]) for c in cols])


def _rngs(seed):
    init, theta, weights = np.random.SeedSequence(seed).spawn(3)
    return (
        int(init.generate_state(1)[0]),
        np.random.default_rng(theta),
        np.random.default_rng(weights),
    )


def initial_model(ds: Dataset, config: TrainConfig) -> nn.EmbeddingModel:
    init_seed, _, _ = _rngs(config.seed)
    return nn.init_model(ds.dim, config.embed_dim, (config.hidden,), config.activation, init_seed)


def sample_batch(classes, P: int, K: int, rng) -> np.ndarray:
    """``P`` classes, then ``K`` ids per class, all without replacement."""
    eligible = [c for c, ids in enumerate(classes) if ids.size >= K]
    if len(eligible) < len(classes):
        log.warning("skipping %d classes with fewer than K=%d samples",
                    len(classes) - len(eligible), K)
    if len(eligible) < P:
        raise ContractError(f"only {len(eligible)} classes have at least K={K} samples; need P={P}")
    picked = rng.choice(eligible, size=P, replace=False)
    return np.concatenate([rng.choice(classes[c], size=K, replace=False) for c in picked])


def train_theta(model, ds: Dataset, w, config: TrainConfig, epochs: int, rng,
                classes=None) -> nn.EmbeddingModel:
    """Mini-batch SGD on the weighted informative batch loss with ``w`` fixed.

    One epoch is ``max(1, N // (P K))`` batches.
    """
    classes = split_by_class(ds) if classes is None else classes
    P, K = config.P, config.K
    n_batches = max(1, ds.n_samples // (P * K))
    for _ in range(epochs * n_batches):
        ids = sample_batch(classes, P, K, rng)
        X = ds.features[ids]
        E = nn.embed(model, X)
        S = E @ E.T
        mining = mine_pairs(S, ds.labels[ids], config.hp.eps)
        _, dS = weighted_batch_loss_grad(ids, w, mining, S, config.hp, P, K)
        if not np.any(dS):
            continue
        grads = nn.backward(model, X, batch_embedding_grad(E, dS))
        model = nn.sgd_step(model, grads, config.lr)
    return model


def _weight_step_sizes(config: TrainConfig, C: int):
    if config.w_exhaustive:
        return None, None
    P = min(config.P, C - 1) if config.w_classes is None else config.w_classes
    K = config.K if config.w_samples is None else config.w_samples
    return P, K


def _alternate(ds: Dataset, config: TrainConfig, update_weights: bool, callback=None,
               weight_trace=None, trace_stride=0):
    classes = split_by_class(ds)
    model = initial_model(ds, config)
    _, theta_rng, w_rng = _rngs(config.seed)
    w = np.ones(ds.n_samples)
    lam = config.age.lam0 if update_weights else 0.0
    mu = config.mu if update_weights else 0.0
    w_iters = 20 * ds.n_samples if config.w_iters is None else config.w_iters
    P_w, K_w = _weight_step_sizes(config, ds.num_classes)
    trace = ConvergenceTrace()
    state = None
    for t in range(1, config.outer_iters + 1):
        model = train_theta(model, ds, w, config, config.theta_epochs, theta_rng, classes)
        E = nn.embed(model, ds.features)
        xp, xn = xi_table(E, ds.labels, config.hp)
        state = WeightState(w, classes, XiTable(xp, xn), lam, mu)
        if update_weights:
            rows = [] if weight_trace is not None else None
            state = solve_weights(state, w_iters, config.w_schedule, P_w, K_w, w_rng,
                                  growth=config.w_growth, trace=rows, stride=trace_stride)
            if weight_trace is not None:
                weight_trace[:] = rows
            w = state.w.copy()
            lam = config.age.next(lam)
            state = state.copy(lam=lam)
        obj = objective(state)
        stats = weight_stats(state)
        trace.append(t, lam, obj, stats.maw, stats.sdaw)
        if not math.isfinite(obj):
            raise NumericError(f"non-finite objective at outer iteration {t}",
                               iteration=t, trace=trace)
        log.info("t=%d lambda=%.4g objective=%.6g maw=%.4f sdaw=%.4f",
                 t, lam, obj, stats.maw, stats.sdaw)
        if callback is not None:
            callback(t, model, state)
    if state is None:
        state = WeightState(w, classes, XiTable(np.zeros_like(w), np.zeros_like(w)), lam, mu)
    return model, state, trace


def bspml_train(ds: Dataset, config: TrainConfig, callback=None, weight_trace=None,
                trace_stride: int = 0):
    """Alternate embedding and weight updates for ``config.outer_iters`` rounds.

    Returns ``(model, weight_state, trace)``. Trace row ``t`` holds the
    objective at ``(theta^t, w^t)`` with the age parameter after the
    ``t``-th update. ``callback(t, model, state)`` runs after each round.
    If ``weight_trace`` is a list, it receives the last weight step's rows.
    """
    return _alternate(ds, config, True, callback, weight_trace, trace_stride)


def ms_baseline_train(ds: Dataset, config: TrainConfig, callback=None, return_trace=False):
    """Same pipeline with every weight pinned to 1 and no weight step.

    The trace (``return_trace=True``) records the plain multi-similarity
    loss, i.e. the weighted objective at ``w = 1`` and ``lambda = 0``.
    """
    model, state, trace = _alternate(ds, config, False, callback)
    return (model, state, trace) if return_trace else model
