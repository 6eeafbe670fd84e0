"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``. Criterion 10 needs real
citation-graph files and is skipped unless GNNBANDIT_CORA_DIR is set.
"""

import os
import time

import numpy as np
import pytest

from conftest import dense_gcn, dense_softmax
from gnnbandit.attack import (
    AttackConfig,
    QueryOracle,
    bandit_attack,
    bernoulli_round,
    opge_gradient,
)
from gnnbandit.baselines import ZooConfig, random_attack, zoo_attack
from gnnbandit.graph import load_graph, make_graph
from gnnbandit.harness import (
    ExperimentConfig,
    cell_seeds,
    regret_bench,
    run_experiment,
    select_targets,
    simulate_costs,
)
from gnnbandit.models import (
    ModelParams,
    NodeQuery,
    TrainConfig,
    accuracy,
    fit,
    gcn_forward,
    init_params,
    loss_and_grad,
)
from gnnbandit.projection import ArmSet, brute_force_project, project, sample_unit_sphere
from planted import planted_oracle


@pytest.fixture
def report(capsys):
    def emit(criterion, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}")
        assert ok, detail
    return emit


# ---------------------------------------------------------------- 1


def test_criterion_1_projection_oracle(report):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_gap = worst_violation = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 6))
        costs = rng.uniform(0.5, 5.0, n)
        arm = ArmSet(n, int(rng.integers(1, n + 1)), float(rng.uniform(0.2, costs.sum())), costs)
        alpha = float(rng.uniform(0, 0.95))
        x = rng.normal(0.4, 1.5, n)
        z = project(x, arm, alpha)
        ref = brute_force_project(x, arm, alpha)
        worst_gap = max(worst_gap, abs(np.linalg.norm(z - x) - np.linalg.norm(ref - x)))
        worst_violation = max(worst_violation, arm.violation(z, alpha))
    elapsed = time.perf_counter() - start
    ok = worst_gap <= 1e-6 and worst_violation <= 1e-9 and elapsed < 10
    report(1, ok, f"max distance gap {worst_gap:.2e} (<= 1e-6), max violation {worst_violation:.2e} "
                  f"(<= 1e-9), {elapsed:.1f}s (< 10s)")


# ---------------------------------------------------------------- 2


def test_criterion_2_opge_unbiased(report):
    start = time.perf_counter()
    n, delta, draws = 8, 1e-3, 10**6
    s_hat = np.full(n, 0.5)
    # the estimator's spread scales with L(s_hat), so s_hat sits near x0 where
    # the gradient is resolvable at this sample size
    offset = 1e-3 * np.array([1.0, -1.2, 0.8, -0.9, 1.1, -1.0, 0.7, -1.3])
    x0 = s_hat - offset
    grad = 2.0 * (s_hat - x0)
    rng = np.random.default_rng(7)
    total = np.zeros(n)
    for _ in range(draws):
        u = sample_unit_sphere(n, rng)
        d = s_hat + delta * u - x0
        total += opge_gradient(d @ d, u, n, delta)
    est = total / draws
    rel = np.abs(est - grad) / np.abs(grad)
    elapsed = time.perf_counter() - start
    ok = rel.max() <= 0.05 and elapsed < 60
    report(2, ok, f"max per-coordinate relative error {rel.max():.4f} (<= 0.05), {elapsed:.1f}s (< 60s)")


# ---------------------------------------------------------------- 3


def test_criterion_3_bernoulli_expectation(report):
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    s_hat = np.full(4, 0.3)
    draws = 10**5
    total = np.zeros(4)
    for _ in range(draws):
        total += bernoulli_round(s_hat, rng)
    mean = total / draws
    bound = 3 * np.sqrt(0.3 * 0.7 / draws)
    elapsed = time.perf_counter() - start
    ok = np.abs(mean - 0.3).max() <= bound and elapsed < 5
    report(3, ok, f"max |mean - 0.3| = {np.abs(mean - 0.3).max():.5f} (<= 3 sigma = {bound:.5f}), "
                  f"{elapsed:.1f}s (< 5s)")


# ---------------------------------------------------------------- shared SBM task


SBM_OVERRIDES = ["blocks=100,100,100", "p_in=0.1", "p_out=0.01", "feature_shift=2.0",
                 "feature_dim=16", "hidden=16", "lr=0.05", "epochs=200", "num_targets=50",
                 "cost_lo=1", "cost_hi=5", "C=25", "repetitions=30", "eta=1e-4", "delta=1e-6",
                 "alpha=0.7", "seed=0"]


@pytest.fixture(scope="module")
def sbm_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("acceptance")
    out = {}
    timings = {}
    for name, extra in (("main", ["B=5", "T=50", "attacks=all"]),
                        ("budget", ["B=1,2,5", "T=50", "attacks=bandit"]),
                        ("horizon", ["B=5", "T=10,25,50", "attacks=bandit"])):
        cfg = ExperimentConfig.from_text("", SBM_OVERRIDES + extra + [f"out={base / name}"])
        start = time.perf_counter()
        out[name] = run_experiment(cfg)
        timings[name] = time.perf_counter() - start
    return out, timings


def _rate(result, attack, **point):
    rows = [r for r in result.rows if r.attack == attack and all(getattr(r, k) == v for k, v in point.items())]
    return sum(r.success_final for r in rows) / len(rows), len(rows)


# ---------------------------------------------------------------- 4


def test_criterion_4_feasibility_and_accounting(report, sbm_runs):
    runs, _ = sbm_runs
    problems = []
    # harness runs: every queried perturbation is checked inside the harness
    # (it raises on a violation), and every bandit/random row spent exactly T
    for res in runs.values():
        for r in res.rows:
            if r.attack in ("bandit", "random") and r.queries != r.T:
                problems.append(f"{r.attack} used {r.queries} of T={r.T}")
    # direct instrumented runs on the same victim, including a ZOO budget that
    # allows full gradient rounds
    cfg = ExperimentConfig.from_text("", SBM_OVERRIDES + ["B=5", "T=50"])
    from gnnbandit.harness import build_node_task
    g, params = build_node_task(cfg)
    targets = select_targets(params, g, 50, 0)
    n = g.num_nodes
    violations = checked = 0
    for v in targets[:10]:
        costs = simulate_costs(n, 1, 5, cell_seeds(0, v, 0)[0]).values
        arm = ArmSet(n, 5, 25.0, costs, v)
        y = int(g.labels[v])
        for T in (0, 1, 17, 50):
            o = QueryOracle(NodeQuery(params, g, v), arm)
            rep = bandit_attack(o, arm, y, AttackConfig(T=T, seed=v))
            violations += o.violations + (not arm.is_feasible_binary(rep.perturbation))
            checked += T
            if o.queries != T:
                problems.append(f"bandit T={T} used {o.queries}")
        o = QueryOracle(NodeQuery(params, g, v), arm)
        zoo_T = 2 * 2 * n + 7
        rep = zoo_attack(o, arm, y, ZooConfig(T=zoo_T, seed=v))
        violations += o.violations + (not arm.is_feasible_binary(rep.perturbation))
        checked += o.queries
        if o.queries != 2 * n * 2 or rep.queries != o.queries:
            problems.append(f"zoo used {o.queries}, expected {2 * n * 2}")
    ok = violations == 0 and not problems
    report(4, ok, f"{violations} budget/cost violations over {checked} instrumented queries plus all "
                  f"harness runs; accounting issues: {problems[:3] or 'none'} "
                  f"(bandit exactly T, ZOO exactly 2N per round)")


# ---------------------------------------------------------------- 5


def test_criterion_5_forward_and_gradient(report):
    rng = np.random.default_rng(55)
    worst_fwd = 0.0
    for case in range(100):
        n = int(rng.integers(1, 21))
        iu, ju = np.triu_indices(n, k=1)
        keep = rng.random(iu.size) < rng.uniform(0.05, 0.6)
        g = make_graph(n, np.stack([iu[keep], ju[keep]], axis=1), rng.standard_normal((n, 4)))
        p = init_params("gcn", [4, int(rng.integers(2, 9)), 3], seed=case)
        want = dense_softmax(dense_gcn(g.dense_adjacency(), g.features, p.weights))
        worst_fwd = max(worst_fwd, np.abs(gcn_forward(p, g) - want).max())

    g = make_graph(5, [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4), (1, 3)],
                   np.random.default_rng(5).standard_normal((5, 3)), [0, 1, 2, 1, 0],
                   [True, True, True, False, True], 3)
    p = init_params("gcn", [3, 4, 3], init_scale=1.5, seed=3)
    _, grads = loss_and_grad(p, g)
    worst_rel = 0.0
    eps = 1e-5
    for k, w in enumerate(p.weights):
        for idx in np.ndindex(w.shape):
            vals = []
            for sign in (1, -1):
                ws = [x.copy() for x in p.weights]
                ws[k][idx] += sign * eps
                vals.append(loss_and_grad(ModelParams("gcn", tuple(ws)), g)[0])
            num = (vals[0] - vals[1]) / (2 * eps)
            worst_rel = max(worst_rel, abs(grads[k][idx] - num) / max(abs(num), 1e-8))
    ok = worst_fwd <= 1e-9 and worst_rel <= 1e-4
    report(5, ok, f"sparse vs dense forward max diff {worst_fwd:.2e} (<= 1e-9); gradient max relative "
                  f"error {worst_rel:.2e} (<= 1e-4)")


# ---------------------------------------------------------------- 6


def test_criterion_6_planted_recovery(report):
    start = time.perf_counter()
    wins = violations = 0
    for seed in range(100):
        arm = ArmSet.uniform(16, 1)
        o = QueryOracle(planted_oracle(16, seed % 16), arm)
        rep = bandit_attack(o, arm, 0, AttackConfig(T=200, seed=seed))
        wins += rep.success
        violations += o.violations
    hits = 0
    for seed in range(1000):
        arm = ArmSet.uniform(64, 1)
        o = QueryOracle(planted_oracle(64, seed % 64), arm)
        hits += random_attack(o, arm, 0, 50, seed).success
        violations += o.violations
    expected = 1 - (63 / 64) ** 50
    elapsed = time.perf_counter() - start
    ok = wins >= 90 and abs(hits / 1000 - expected) <= 0.05 and elapsed < 120 and violations == 0
    report(6, ok, f"bandit {wins}/100 (>= 90); random {hits / 1000:.3f} vs closed form {expected:.3f} "
                  f"(+-0.05); {elapsed:.1f}s (< 120s)")


# ---------------------------------------------------------------- 7


def test_criterion_7_regret_sublinear(report):
    start = time.perf_counter()
    res = regret_bench(16, 4, [256, 1024, 4096, 16384], 20, seed=0)
    elapsed = time.perf_counter() - start
    regs = ", ".join(f"{r:.1f}" for r in res.regrets)
    ok = (not res.degenerate) and res.exponent <= 0.9 and elapsed < 600
    report(7, ok, f"fitted exponent {res.exponent:.3f} (<= 0.9), mean Reg(T) = [{regs}], "
                  f"theory schedule valid: {[s.valid for s in res.schedules]}, {elapsed:.0f}s (< 600s)")


# ---------------------------------------------------------------- 8


def test_criterion_8_relative_effectiveness(report, sbm_runs):
    runs, timings = sbm_runs
    res = runs["main"]
    bandit, n = _rate(res, "bandit")
    rand, _ = _rate(res, "random")
    zoo, _ = _rate(res, "zoo")
    best = sum(r.success_best for r in res.rows if r.attack == "bandit") / n
    trained = res.info["train_accuracy"]
    ok = trained >= 0.95 and bandit >= rand + 0.20 and bandit >= zoo and timings["main"] < 900
    report(8, ok, f"bandit {bandit:.3f} (best-round {best:.3f}), random {rand:.3f}, zoo {zoo:.3f} over "
                  f"{n} runs; need bandit >= random + 0.20 and >= zoo; victim train acc {trained:.3f}; "
                  f"{timings['main']:.0f}s (< 900s)")


# ---------------------------------------------------------------- 9


def test_criterion_9_monotonicity(report, sbm_runs):
    runs, _ = sbm_runs
    by_b = [_rate(runs["budget"], "bandit", B=b)[0] for b in (1, 2, 5)]
    by_t = [_rate(runs["horizon"], "bandit", T=t)[0] for t in (10, 25, 50)]
    slack = 0.03
    mono = lambda xs: all(b >= a - slack for a, b in zip(xs, xs[1:]))
    ok = mono(by_b) and mono(by_t)
    report(9, ok, f"success by B=1,2,5: {[round(x, 3) for x in by_b]}; by T=10,25,50: "
                  f"{[round(x, 3) for x in by_t]} (non-decreasing, 3-point slack)")


# ---------------------------------------------------------------- 10


CORA = os.environ.get("GNNBANDIT_CORA_DIR")


@pytest.mark.skipif(not CORA, reason="set GNNBANDIT_CORA_DIR to a directory with edges.txt, "
                                     "features.csv, labels.csv and optional train.txt")
def test_criterion_10_cora_optional(capsys):
    train_path = os.path.join(CORA, "train.txt")
    g = load_graph(os.path.join(CORA, "edges.txt"), os.path.join(CORA, "features.csv"),
                   os.path.join(CORA, "labels.csv"), train_path if os.path.exists(train_path) else None)
    if not g.train_mask.any():
        from gnnbandit.graph import sample_train_mask
        g = make_graph(g.num_nodes, g.edges, g.features, g.labels, sample_train_mask(g.labels, 20, 0))
    params = fit(g, TrainConfig(lr=0.2, epochs=200, seed=0, weight_decay=5e-4), "gcn",
                 [g.features.shape[1], 16, g.num_classes]).params
    targets = select_targets(params, g, 100, 0)
    wins = 0
    for v in targets:
        costs = simulate_costs(g.num_nodes, 1, 5, v).values
        arm = ArmSet(g.num_nodes, 5, 25.0, costs, v)
        wins += bandit_attack(QueryOracle(NodeQuery(params, g, v)), arm, int(g.labels[v]),
                              AttackConfig(T=50, seed=v)).success
    with capsys.disabled():
        print(f"\n[INFO] criterion 10 (optional, not asserted): bandit success {wins / 100:.2f} on "
              f"100 targets (reference >= 0.50); train accuracy {accuracy(params, g):.3f}")
