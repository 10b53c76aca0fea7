"""Acceptance checks, one test per criterion.

Each test prints a single ``[criterion N] PASS|FAIL ...`` line and then
asserts. Training-based criteria share their runs through module-scoped
fixtures; run with ``-s`` or read the printed lines in the summary.
"""

import itertools
import time

import numpy as np
import pytest

from bspml import embed as nn
from bspml.data import SyntheticSpec, generate_synthetic, inject_label_noise
from bspml.driver import AgeSchedule, TrainConfig, bspml_train, ms_baseline_train
from bspml.metrics import nmi_score, recall_at_k, weight_separation, weight_stats
from bspml.msloss import MSHyperParams, batch_embedding_grad, mine_pairs, ms_loss, weighted_batch_loss, \
    weighted_batch_loss_grad, xi_table
from bspml.weights import (
    StepSchedule,
    WeightState,
    XiTable,
    _objective_at,
    brute_force_minimize,
    coordinate_derivative,
    objective,
    sampled_gradient,
    solve_weights,
    stationarity,
)

from conftest import make_classes, random_state

SEEDS = range(5)
SPEC = SyntheticSpec(num_classes=4, per_class=50, dim=2, separation=4.0, std=1.0)
TEST_PER_CLASS = 500
NOISE = 0.2


def report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'} {detail}")


# ---------------------------------------------------------------- shared data

def criterion6_data(seed):
    clean = generate_synthetic(SPEC, seed)
    noisy, mask = inject_label_noise(clean, NOISE, seed + 1)
    test = generate_synthetic(
        SyntheticSpec(SPEC.num_classes, TEST_PER_CLASS, SPEC.dim, SPEC.separation, SPEC.std),
        seed + 100,
    )
    return noisy, mask, test


@pytest.fixture(scope="module")
def default_runs():
    """BSPML and MS-baseline runs on every criterion-6 seed with default settings."""
    t0 = time.perf_counter()
    runs = []
    for seed in SEEDS:
        noisy, mask, test = criterion6_data(seed)
        cfg = TrainConfig(seed=seed)
        model, state, trace = bspml_train(noisy, cfg)
        baseline = ms_baseline_train(noisy, cfg)
        runs.append(dict(
            seed=seed,
            gap=weight_separation(state.w, mask)[2],
            r1_bspml=recall_at_k(nn.embed(model, test.features), test.labels, [1])[1],
            r1_ms=recall_at_k(nn.embed(baseline, test.features), test.labels, [1])[1],
            deltas=trace.column("delta_objective"),
        ))
    return runs, time.perf_counter() - t0


# ------------------------------------------------------------------ criterion 1

def enumerated_expectation(state, c, a, P, K):
    """Exact expectation: average over positive draws, class subsets, then
    negative draws, since subsets of unequal classes hold unequal draw counts."""
    others = np.delete(state.classes[c], a)
    other_classes = [k for k in range(state.num_classes) if k != c]
    by_pos = []
    for pos in itertools.combinations(others, K):
        by_subset = []
        for drawn in itertools.combinations(other_classes, P):
            per_class = [list(itertools.combinations(state.classes[k], K)) for k in drawn]
            by_subset.append(np.mean([
                sampled_gradient(state, c, a, list(pos), [np.array(g) for g in negs])
                for negs in itertools.product(*per_class)]))
        by_pos.append(np.mean(by_subset))
    return float(np.mean(by_pos))


def test_criterion_1_unbiased_estimator(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst, cases = 0.0, 0
    for C in (2, 3):
        for sizes in itertools.product(range(2, 5), repeat=C):
            state = random_state(rng, list(sizes))
            for c in range(C):
                for a in range(sizes[c]):
                    exact = coordinate_derivative(state, c, a)
                    max_k = min(sizes[c] - 1, min(s for k, s in enumerate(sizes) if k != c))
                    for P in range(1, C):
                        for K in range(1, max_k + 1):
                            err = abs(enumerated_expectation(state, c, a, P, K) - exact)
                            worst = max(worst, err)
                            cases += 1
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and elapsed < 10
    report(capsys, 1, ok, f"max |E[G] - dL/dw| = {worst:.2e} over {cases} (coordinate, P, K) "
                          f"cases, {elapsed:.1f}s")
    assert worst <= 1e-12
    assert elapsed < 10


# ------------------------------------------------------------------ criterion 2

def test_criterion_2_derivative_vs_finite_differences(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    h = 1e-6
    worst = 0.0
    for _ in range(100):
        C = int(rng.integers(2, 5))
        state = random_state(rng, rng.integers(2, 6, size=C).tolist())
        exact = np.array([coordinate_derivative(state, c, a)
                          for c in range(C) for a in range(state.sizes[c])])
        fd = []
        for c in range(C):
            for i in state.classes[c]:
                wp, wm = state.w.copy(), state.w.copy()
                wp[i] += h
                wm[i] -= h
                fd.append((_objective_at(state, wp) - _objective_at(state, wm)) / (2 * h))
        worst = max(worst, np.linalg.norm(exact - fd) / np.linalg.norm(fd))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-7 and elapsed < 10
    report(capsys, 2, ok, f"max relative error {worst:.2e} on 100 instances, {elapsed:.1f}s")
    assert worst <= 1e-7
    assert elapsed < 10


# ------------------------------------------------------------------ criterion 3

def test_criterion_3_solver_vs_grid_oracle(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    T = 5000
    gaps, norms = [], []
    for k in range(20):
        C, n = [(2, 3), (3, 2), (2, 2)][rng.integers(3)]
        state = random_state(rng, [n] * C, w=np.ones(C * n))
        schedule = StepSchedule("harmonic", gamma0="coordinate")
        out = solve_weights(state, T, schedule, None, None, np.random.default_rng(k))
        gamma = schedule.resolve(state, T).gamma(T - 1)
        _, best = brute_force_minimize(state, 0.05)
        gaps.append(objective(out) - best)
        norms.append(stationarity(out, gamma))
    elapsed = time.perf_counter() - t0
    within = sum(g <= 1e-3 for g in gaps)
    stationary = sum(p <= 1e-4 for p in norms)
    ok = within == 20 and stationary == 20 and elapsed < 120
    report(capsys, 3, ok, f"objective within 1e-3 of grid minimum on {within}/20, "
                          f"projected gradient <= 1e-4 on {stationary}/20 "
                          f"(max gap {max(gaps):.3f}, max norm {max(norms):.1e}), {elapsed:.1f}s")
    assert within == 20
    assert stationary == 20
    assert elapsed < 120


# ------------------------------------------------------------------ criterion 4

def test_criterion_4_batch_loss_gradient(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    h = 1e-5
    worst, checked = 0.0, 0
    for trial in range(12):
        act = ("tanh", "relu")[trial % 2]
        P, K = int(rng.integers(2, 4)), int(rng.integers(2, 5))
        model = nn.init_model(3, 4, (6,), act, seed=trial)
        model = model.with_params(model.params() + rng.normal(scale=0.3, size=model.n_params))
        X = rng.normal(size=(P * K, 3))
        labels = np.repeat(np.arange(P), K)
        ids = rng.permutation(50)[:P * K]
        w = rng.uniform(0, 1, 50)
        hp = MSHyperParams(eps=float(rng.uniform(0.1, 1.0)))
        E = nn.embed(model, X)
        mining = mine_pairs(E @ E.T, labels, hp.eps)
        if not (mining.pos.any() or mining.neg.any()):
            continue
        _, dS = weighted_batch_loss_grad(ids, w, mining, E @ E.T, hp, P, K)
        g = nn.backward(model, X, batch_embedding_grad(E, dS))
        theta = model.params()

        def loss(th):
            Et = nn.embed(model.with_params(th), X)
            return weighted_batch_loss(ids, w, mining, Et @ Et.T, hp, P, K)

        fd = np.array([(loss(theta + h * e) - loss(theta - h * e)) / (2 * h)
                       for e in np.eye(theta.size)])
        worst = max(worst, np.linalg.norm(g - fd) / np.linalg.norm(fd))
        checked += 1
    elapsed = time.perf_counter() - t0
    ok = checked >= 10 and worst <= 1e-4 and elapsed < 30
    report(capsys, 4, ok, f"max relative error {worst:.2e} over {checked} models/batches, "
                          f"{elapsed:.1f}s")
    assert checked >= 10
    assert worst <= 1e-4
    assert elapsed < 30


# ------------------------------------------------------------------ criterion 5

def test_criterion_5_reduction_identities(capsys):
    rng = np.random.default_rng(5)
    hp = MSHyperParams()
    worst = 0.0
    for _ in range(20):
        C = int(rng.integers(2, 5))
        sizes = rng.integers(2, 6, size=C)
        labels = np.repeat(np.arange(C), sizes)
        E = rng.normal(size=(labels.size, 4))
        E /= np.linalg.norm(E, axis=1, keepdims=True)
        lam = float(rng.uniform(0, 5))
        xp, xn = xi_table(E, labels, hp)
        state = WeightState(np.ones(labels.size), make_classes(sizes), XiTable(xp, xn),
                            lam=lam, mu=float(rng.uniform(0, 5)))
        worst = max(worst, abs(objective(state) - (ms_loss(E, labels, hp) - lam * C)))

    noisy, _, _ = criterion6_data(0)
    pinned = AgeSchedule(1e6, 1.3, 1e7)
    cfg = TrainConfig(outer_iters=3, theta_epochs=1, age=pinned, mu=0.0, seed=0)
    traj_b, traj_m, weights_one = [], [], []
    bspml_train(noisy, cfg, callback=lambda t, m, s: (traj_b.append(m.params()),
                                                       weights_one.append(bool(np.all(s.w == 1)))))
    ms_baseline_train(noisy, cfg, callback=lambda t, m, s: traj_m.append(m.params()))
    identical = (len(traj_b) == 3 and all(weights_one)
                 and all(a.tobytes() == b.tobytes() for a, b in zip(traj_b, traj_m)))
    ok = worst <= 1e-9 and identical
    report(capsys, 5, ok, f"max |L(w=1) - (L_MS - lambda C)| = {worst:.1e}; "
                          f"3-epoch trajectories bit-identical: {identical}")
    assert worst <= 1e-9
    assert identical


# ------------------------------------------------------------------ criterion 6

def test_criterion_6_denoising(capsys, default_runs):
    runs, elapsed = default_runs
    gaps = [r["gap"] for r in runs]
    med_b = float(np.median([r["r1_bspml"] for r in runs]))
    med_m = float(np.median([r["r1_ms"] for r in runs]))
    ok = min(gaps) >= 0.2 and med_b >= med_m and elapsed < 600
    report(capsys, 6, ok, f"weight gap min {min(gaps):.3f} (all {[round(g, 3) for g in gaps]}); "
                          f"median Recall@1 BSPML {med_b:.4f} vs MS {med_m:.4f}; {elapsed:.0f}s")
    assert min(gaps) >= 0.2
    assert med_b >= med_m
    assert elapsed < 600


# ------------------------------------------------------------------ criterion 7

def test_criterion_7_trend_reproduction(capsys):
    t0 = time.perf_counter()
    noisy, _, _ = criterion6_data(0)
    sdaw = []
    for mu in (0.0, 0.1, 1.0, 10.0):
        _, state, _ = bspml_train(noisy, TrainConfig(mu=mu, seed=0))
        sdaw.append(weight_stats(state).sdaw)
    maw = []
    for lam_max in (1.0, 2.0, 3.0, 4.0, 5.0):
        _, state, _ = bspml_train(noisy, TrainConfig(age=AgeSchedule(lam_max=lam_max), seed=0))
        maw.append(weight_stats(state).maw)
    elapsed = time.perf_counter() - t0
    sdaw_ok = all(b <= a for a, b in zip(sdaw, sdaw[1:]))
    maw_ok = all(b >= a for a, b in zip(maw, maw[1:]))
    ok = sdaw_ok and maw_ok and elapsed < 1800
    report(capsys, 7, ok, f"SDAW over mu {{0,0.1,1,10}}: {[round(s, 4) for s in sdaw]}; "
                          f"MAW over lambda_max {{1..5}}: {[round(m, 4) for m in maw]}; "
                          f"{elapsed:.0f}s")
    assert sdaw_ok
    assert maw_ok
    assert elapsed < 1800


# ------------------------------------------------------------------ criterion 8

def test_criterion_8_objective_settles(capsys, default_runs):
    runs, _ = default_runs
    tails = [max(r["deltas"][-3:]) for r in runs]
    ok = all(t < 1e-3 for t in tails)
    report(capsys, 8, ok, "largest |L^t - L^(t-1)| over the final 3 rounds per seed: "
                          f"{[f'{t:.1e}' for t in tails]}")
    assert ok


# ------------------------------------------------------------------ criterion 9

def contingency_nmi(a, b):
    a, b = np.asarray(a), np.asarray(b)
    n = a.size
    ua, ub = sorted(set(a.tolist())), sorted(set(b.tolist()))
    table = np.array([[np.sum((a == x) & (b == y)) for y in ub] for x in ua], dtype=float)
    mi = 0.0
    for i in range(len(ua)):
        for j in range(len(ub)):
            if table[i, j]:
                pij = table[i, j] / n
                mi += pij * np.log(pij / (table[i].sum() / n * table[:, j].sum() / n))
    ha = -sum(r / n * np.log(r / n) for r in table.sum(1))
    hb = -sum(r / n * np.log(r / n) for r in table.sum(0))
    return 0.0 if ha + hb == 0 else 2 * mi / (ha + hb)


def test_criterion_9_metric_oracles(capsys):
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 80))
        a = rng.integers(0, int(rng.integers(1, 6)), n)
        b = rng.integers(0, int(rng.integers(1, 6)), n)
        worst = max(worst, abs(nmi_score(a, b) - contingency_nmi(a, b)))
    monotone = 0
    for _ in range(50):
        n = int(rng.integers(3, 40))
        E = rng.normal(size=(n, int(rng.integers(2, 6))))
        E /= np.linalg.norm(E, axis=1, keepdims=True)
        r = recall_at_k(E, rng.integers(0, int(rng.integers(2, 6)), n), range(1, n))
        vals = [r[k] for k in range(1, n)]
        monotone += all(y >= x for x, y in zip(vals, vals[1:]))
    ok = worst <= 1e-10 and monotone == 50
    report(capsys, 9, ok, f"max |NMI - contingency oracle| = {worst:.1e} on 50 partitions; "
                          f"Recall@K nondecreasing on {monotone}/50 embedding sets")
    assert worst <= 1e-10
    assert monotone == 50
