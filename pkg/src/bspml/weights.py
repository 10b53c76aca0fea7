"""Sample-weight subproblem.

For fixed embeddings the weights ``w in [0, 1]^N`` minimize a nonconvex
quadratic: a pairwise weighted loss built from per-sample positive and
negative terms, an age reward ``-lam * sum_c mean_w(c)`` and a balance
penalty on the spread of class mean weights. This module evaluates that
objective and its exact partial derivatives, draws the doubly stochastic
coordinate gradient, runs projected stochastic coordinate descent, and
provides an exhaustive grid oracle for small instances.

Coordinates are addressed either by global sample id or by ``(c, a)``:
class ``c`` and position ``a`` within ``classes[c]``.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, ContractError, NumericError

log = logging.getLogger(__name__)

ZETA_REFRESH = 10_000


@dataclass(frozen=True, eq=False)
class XiTable:
    pos: np.ndarray
    neg: np.ndarray

    def __post_init__(self):
        for name in ("pos", "neg"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(v)) or np.any(v < 0):
                raise ContractError(f"xi {name} values must be finite and >= 0")
            object.__setattr__(self, name, v)


@dataclass(eq=False)
class WeightState:
    """Weights plus everything the objective needs at fixed embeddings.

    ``zeta`` caches per-class weight sums and is kept in step with ``w``
    by :func:`solve_weights`; use :meth:`with_weights` when replacing
    ``w`` wholesale.
    """

    w: np.ndarray
    classes: list
    xi: XiTable
    lam: float = 1.0
    mu: float = 0.0
    zeta: np.ndarray = field(default=None)

    def __post_init__(self):
        self.w = np.array(self.w, dtype=np.float64)
        self.classes = [np.asarray(ids, dtype=np.int64) for ids in self.classes]
        if np.any(self.w < 0) or np.any(self.w > 1):
            raise ContractError("weights must lie in [0, 1]")
        if self.lam < 0 or self.mu < 0:
            raise ContractError("lam and mu must be >= 0")
        n = self.w.size
        if self.xi.pos.shape != (n,) or self.xi.neg.shape != (n,):
            raise ContractError("xi table must have one entry per weight")
        self.label = np.empty(n, dtype=np.int64)
        self.slot = np.empty(n, dtype=np.int64)
        covered = 0
        for c, ids in enumerate(self.classes):
            self.label[ids] = c
            self.slot[ids] = np.arange(ids.size)
            covered += ids.size
        if covered != n or np.unique(np.concatenate(self.classes)).size != n:
            raise ContractError("classes must partition the sample ids")
        self.sizes = np.array([ids.size for ids in self.classes], dtype=np.int64)
        if self.zeta is None:
            self.refresh_zeta()

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def refresh_zeta(self):
        self.zeta = np.array([self.w[ids].sum() for ids in self.classes])

    def class_means(self) -> np.ndarray:
        return self.zeta / self.sizes

    def with_weights(self, w) -> "WeightState":
        return WeightState(w, self.classes, self.xi, self.lam, self.mu)

    def copy(self, **changes) -> "WeightState":
        changes.setdefault("w", self.w.copy())
        changes.setdefault("zeta", None)
        return replace(self, **changes)

    def coordinate(self, c: int, a: int) -> int:
        return int(self.classes[c][a])


def _check_shape(state: WeightState):
    if state.num_classes < 2:
        raise ContractError("the weight objective needs at least 2 classes")
    if np.any(state.sizes < 2):
        raise ContractError("every class needs at least 2 samples (divides by N^c - 1)")


def _objective_at(state: WeightState, w: np.ndarray) -> float:
    C = state.num_classes
    xp, xn = state.xi.pos, state.xi.neg
    zeta = np.array([w[ids].sum() for ids in state.classes])
    means = zeta / state.sizes
    total = 0.0
    for c, ids in enumerate(state.classes):
        nc = ids.size
        wc = w[ids]
        others = means.sum() - means[c]
        total += np.sum(wc * (zeta[c] - wc) * xp[ids]) / (nc * (nc - 1))
        total += np.sum(wc * xn[ids]) * others / (nc * (C - 1))
    total -= state.lam * means.sum()
    spread = sum((means[c] - means[k]) ** 2 for c in range(C) for k in range(c + 1, C))
    return float(total + state.mu / (C - 1) * spread)


def objective(state: WeightState) -> float:
    _check_shape(state)
    return _objective_at(state, state.w)


def coordinate_derivative(state: WeightState, c: int, a: int) -> float:
    """Exact partial derivative with respect to the ``a``-th weight of class ``c``."""
    _check_shape(state)
    C = state.num_classes
    w, xp, xn = state.w, state.xi.pos, state.xi.neg
    ids = state.classes[c]
    i = ids[a]
    nc = ids.size
    others = np.delete(ids, a)
    g_pos = np.sum(w[others] * (xp[others] + xp[i])) / (nc - 1)
    g_neg = 0.0
    for k in range(C):
        if k == c:
            continue
        ik = state.classes[k]
        g_neg += np.sum(w[ik] * (xn[ik] + xn[i])) / ik.size
    g_neg /= C - 1
    return float((g_pos + g_neg + _balance_term(state, c) - state.lam) / nc)


def _balance_term(state: WeightState, c: int) -> float:
    means = state.zeta / state.sizes
    rest = (means.sum() - means[c]) / (state.num_classes - 1)
    return 2.0 * state.mu * (means[c] - rest)


def full_gradient(state: WeightState, w=None) -> np.ndarray:
    """All partial derivatives at once, indexed by sample id."""
    _check_shape(state)
    w = state.w if w is None else w
    C = state.num_classes
    xp, xn = state.xi.pos, state.xi.neg
    zeta = np.array([w[ids].sum() for ids in state.classes])
    means = zeta / state.sizes
    # class-size normalized sums of w * xi_neg
    wxn_mean = np.array([np.dot(w[ids], xn[ids]) for ids in state.classes]) / state.sizes
    grad = np.empty_like(w)
    for c, ids in enumerate(state.classes):
        nc = ids.size
        wc = w[ids]
        g_pos = (np.dot(wc, xp[ids]) - wc * xp[ids] + xp[ids] * (zeta[c] - wc)) / (nc - 1)
        g_neg = ((wxn_mean.sum() - wxn_mean[c]) + xn[ids] * (means.sum() - means[c])) / (C - 1)
        balance = 2.0 * state.mu * (means[c] - (means.sum() - means[c]) / (C - 1))
        grad[ids] = (g_pos + g_neg + balance - state.lam) / nc
    return grad


def sampled_gradient(state: WeightState, c: int, a: int, pos_ids, neg_groups) -> float:
    """Stochastic coordinate gradient for explicitly drawn samples.

    ``pos_ids`` are same-class ids (excluding the coordinate itself);
    ``neg_groups`` holds one id array per sampled other class.
    """
    w, xp, xn = state.w, state.xi.pos, state.xi.neg
    i = state.classes[c][a]
    pos_ids = np.asarray(pos_ids, dtype=np.int64)
    g_pos = np.mean(w[pos_ids] * (xp[pos_ids] + xp[i])) if pos_ids.size else 0.0
    g_neg = 0.0
    for ids in neg_groups:
        g_neg += np.mean(w[ids] * (xn[ids] + xn[i]))
    g_neg /= len(neg_groups)
    nc = state.sizes[c]
    return float((g_pos + g_neg + _balance_term(state, c) - state.lam) / nc)


def draw_samples(state: WeightState, c: int, a: int, P, K, rng, clip=False):
    """Uniform draws without replacement for the stochastic gradient.

    ``P=None`` takes every other class and ``K=None`` every weight of each
    drawn class. With ``clip`` an oversized ``K`` is cut per class.
    """
    C = state.num_classes
    ids = state.classes[c]
    P = C - 1 if P is None else P
    if not 1 <= P <= C - 1:
        raise ContractError(f"P must lie in [1, C-1] = [1, {C - 1}], got {P}")
    others = np.delete(ids, a)
    k_pos = others.size if K is None else (min(K, others.size) if clip else K)
    if not 1 <= k_pos <= others.size:
        raise ContractError(f"K={K} exceeds N^c - 1 = {others.size} for class {c}")
    pos_ids = others if k_pos == others.size else rng.choice(others, size=k_pos, replace=False)
    if P == C - 1:
        drawn = [k for k in range(C) if k != c]
    else:
        drawn = rng.choice(C - 1, size=P, replace=False)
        drawn = [int(k) + (k >= c) for k in drawn]
    neg_groups = []
    for k in drawn:
        ik = state.classes[k]
        k_neg = ik.size if K is None else (min(K, ik.size) if clip else K)
        if k_neg > ik.size:
            raise ContractError(f"K={K} exceeds N^k = {ik.size} for class {k}")
        neg_groups.append(ik if k_neg == ik.size else rng.choice(ik, size=k_neg, replace=False))
    return pos_ids, neg_groups


def stochastic_gradient(state: WeightState, c: int, a: int, P, K, rng, clip=False) -> float:
    pos_ids, neg_groups = draw_samples(state, c, a, P, K, rng, clip=clip)
    return sampled_gradient(state, c, a, pos_ids, neg_groups)


def project_box(w) -> np.ndarray:
    return np.clip(np.asarray(w, dtype=np.float64), 0.0, 1.0)


def projected_gradient(w, g, gamma: float) -> np.ndarray:
    if not gamma > 0:
        raise ContractError(f"stepsize must be > 0, got {gamma}")
    w = np.asarray(w, dtype=np.float64)
    return (w - project_box(w - gamma * np.asarray(g, dtype=np.float64))) / gamma


def curvature_estimate(state: WeightState) -> float:
    """Bound on how fast a coordinate gradient changes with the weights:
    ``(2 (max xi+ + max xi-) + 2 mu) / N^c``, maximized over classes."""
    per_class = [
        (2.0 * (state.xi.pos[ids].max() + state.xi.neg[ids].max()) + 2.0 * state.mu) / ids.size
        for ids in state.classes
    ]
    return float(max(max(per_class), 1e-6))


def coordinate_lipschitz(state: WeightState) -> float:
    """Largest second derivative along a single coordinate, ``2 mu / (N^c)^2``.

    Only the balance penalty is curved along one coordinate; the pairwise
    terms never multiply a weight with itself. Floored so ``mu = 0`` still
    gives a finite step.
    """
    return float(max(2.0 * state.mu / float(state.sizes.min()) ** 2, 1e-6))


@dataclass(frozen=True)
class StepSchedule:
    """``constant``: gamma0 every step. ``harmonic``: gamma0 / (1 + t / horizon).

    ``gamma0`` may be a number, ``None`` (``1 / curvature_estimate``) or
    ``"coordinate"`` (``1 / coordinate_lipschitz``).
    """

    mode: str = "harmonic"
    gamma0: float | str | None = None
    horizon: float | None = None

    def __post_init__(self):
        if self.mode not in ("constant", "harmonic"):
            raise ConfigError(f"unknown step schedule {self.mode!r}")
        if self.gamma0 not in (None, "coordinate") and not self.gamma0 > 0:
            raise ConfigError("gamma0 must be > 0, None or 'coordinate'")
        if self.horizon is not None and not self.horizon > 0:
            raise ConfigError("decay horizon must be > 0")

    def resolve(self, state: WeightState, T: int) -> "StepSchedule":
        """Fill unset fields: gamma0 from the curvature estimate, horizon = T."""
        if self.gamma0 is None:
            gamma0 = 1.0 / curvature_estimate(state)
        elif self.gamma0 == "coordinate":
            gamma0 = 1.0 / coordinate_lipschitz(state)
        else:
            gamma0 = self.gamma0
        horizon = self.horizon if self.horizon is not None else max(T, 1)
        return StepSchedule(self.mode, float(gamma0), float(horizon))

    def gamma(self, t: int) -> float:
        if self.mode == "constant":
            return float(self.gamma0)
        return float(self.gamma0) / (1.0 + t / self.horizon)


@dataclass(frozen=True)
class TraceRow:
    iter: int
    coordinate: int
    G: float
    gamma: float
    objective: float | None = None
    proj_grad_norm: float | None = None


def solve_weights(state: WeightState, T: int, schedule: StepSchedule | None = None,
                  P=None, K=None, rng=None, *, growth: float = 0.0,
                  trace: list | None = None, stride: int = 0) -> WeightState:
    """Projected stochastic coordinate descent from ``state.w``.

    Each step picks a coordinate uniformly, draws its doubly stochastic
    gradient and takes a clamped step. ``P``/``K`` of ``None`` means
    exhaustive sampling (the exact partial derivative). ``growth > 0``
    enlarges ``P`` and ``K`` by ``growth`` per step, capped per class.

    When ``trace`` is a list, one :class:`TraceRow` per step is appended;
    every ``stride`` steps (and at the last) it also carries the
    objective and the full projected-gradient norm.
    """
    _check_shape(state)
    if T < 0:
        raise ContractError("T must be >= 0")
    rng = np.random.default_rng(rng)
    out = state.copy()
    if T == 0:
        return out
    sched = (schedule or StepSchedule()).resolve(out, T)
    C, N = out.num_classes, out.w.size
    w = out.w
    for t in range(T):
        i = int(rng.integers(N))
        c, a = int(out.label[i]), int(out.slot[i])
        if growth > 0:
            p_t = None if P is None else min(C - 1, P + int(growth * t))
            k_t = None if K is None else K + int(growth * t)
            G = stochastic_gradient(out, c, a, p_t, k_t, rng, clip=True)
        else:
            G = stochastic_gradient(out, c, a, P, K, rng)
        if not math.isfinite(G):
            raise NumericError(f"non-finite stochastic gradient at iteration {t}", iteration=t)
        gamma = sched.gamma(t)
        new = min(1.0, max(0.0, w[i] - gamma * G))
        out.zeta[c] += new - w[i]
        w[i] = new
        if (t + 1) % ZETA_REFRESH == 0:
            out.refresh_zeta()
        if trace is not None:
            row = TraceRow(t, i, G, gamma)
            if stride and ((t + 1) % stride == 0 or t == T - 1):
                pg = projected_gradient(w, full_gradient(out), gamma)
                row = replace(row, objective=_objective_at(out, w),
                              proj_grad_norm=float(np.linalg.norm(pg)))
            trace.append(row)
    out.refresh_zeta()
    return out


def stationarity(state: WeightState, gamma: float = 1.0) -> float:
    """Norm of the full projected gradient at ``state.w``."""
    return float(np.linalg.norm(projected_gradient(state.w, full_gradient(state), gamma)))


def quadratic_form(state: WeightState) -> tuple[np.ndarray, np.ndarray]:
    """``(Q, b)`` with ``objective(w) == w @ Q @ w + b @ w``, recovered by
    polarization from objective evaluations alone."""
    n = state.w.size
    eye = np.eye(n)
    plus = np.array([_objective_at(state, eye[i]) for i in range(n)])
    minus = np.array([_objective_at(state, -eye[i]) for i in range(n)])
    diag = (plus + minus) / 2.0
    b = (plus - minus) / 2.0
    Q = np.diag(diag)
    for i, j in itertools.combinations(range(n), 2):
        both = _objective_at(state, eye[i] + eye[j])
        Q[i, j] = Q[j, i] = (both - plus[i] - plus[j]) / 2.0
    return Q, b


def brute_force_minimize(state: WeightState, resolution: float,
                         max_points: int = 10**8) -> tuple[np.ndarray, float]:
    """Exhaustive search of the objective over the grid
    ``{0, resolution, ..., 1}^N``; ties go to the lexicographically
    smallest ``w``.

    The grid is scored as ``w Q w + b w`` with ``(Q, b)`` from
    :func:`quadratic_form`, splitting coordinates in two halves so each
    chunk is one matrix product.
    """
    _check_shape(state)
    n = state.w.size
    steps = round(1.0 / resolution)
    if steps < 1 or abs(steps * resolution - 1.0) > 1e-9:
        raise ContractError(f"1/resolution must be a positive integer, got {resolution}")
    size = (steps + 1) ** n
    if n > 8 or size > max_points:
        raise ContractError(f"grid of {size} points (N={n}) exceeds the guard of {max_points}")
    Q, b = quadratic_form(state)
    axis = np.linspace(0.0, 1.0, steps + 1)
    h = n // 2
    A = np.array(list(itertools.product(axis, repeat=h))) if h else np.zeros((1, 0))
    B = np.array(list(itertools.product(axis, repeat=n - h)))
    QA, QB, QAB = Q[:h, :h], Q[h:, h:], Q[:h, h:]
    fa = np.einsum("ij,jk,ik->i", A, QA, A) + A @ b[:h]
    fb = np.einsum("ij,jk,ik->i", B, QB, B) + B @ b[h:]
    cross = 2.0 * (A @ QAB)
    rows = max(1, 4_000_000 // len(B))

    def chunks():
        for s in range(0, len(A), rows):
            yield s, fa[s:s + rows, None] + fb[None, :] + cross[s:s + rows] @ B.T

    best = min(float(vals.min()) for _, vals in chunks())
    tol = 1e-12 * (1.0 + abs(best))
    for s, vals in chunks():
        hits = np.flatnonzero(vals.ravel() <= best + tol)
        if hits.size:
            r, col = divmod(int(hits[0]), len(B))
            w = np.concatenate([A[s + r], B[col]])
            return w, _objective_at(state, w)
    raise AssertionError("unreachable: grid minimum not found on second pass")


def classic_spl_weights(losses, lam: float) -> np.ndarray:
    """Hard self-paced weights: 1 where the loss is at most ``lam``, else 0."""
    return (np.asarray(losses, dtype=np.float64) <= lam).astype(np.float64)
