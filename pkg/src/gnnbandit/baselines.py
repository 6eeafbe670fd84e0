"""ZOO and random-search baselines sharing the attack's oracle boundary."""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np

from .attack import AttackReport, QueryOracle, cw_loss, predicted_label, round_top_b
from .errors import BudgetError, ConfigError, DegenerateWarning
from .projection import ArmSet, ProjectionConfig, project


@dataclass
class ZooConfig:
    step_size: float = 0.01
    mu: float = 1e-3
    T: int = 100
    seed: int = 0
    kappa: float = 0.0

    def __post_init__(self):
        if not (self.step_size > 0 and self.mu > 0):
            raise ConfigError("ZOO step size and radius must be positive")
        if self.T < 0:
            raise ConfigError("query budget must be non-negative")


def zoo_attack(oracle: QueryOracle, arm: ArmSet, y: int, cfg: ZooConfig,
               projection: ProjectionConfig = ProjectionConfig()) -> AttackReport:
    """Coordinate-wise symmetric finite differences, 2N queries per round.

    Each probe is rounded with ``round_top_b`` before the query, so every
    queried perturbation is feasible. Runs floor(T / 2N) rounds of projected
    gradient descent on W, then rounds the relaxed iterate.
    """
    n = arm.dimension
    if cfg.T < 2 * n:
        raise BudgetError(f"ZOO needs at least 2N = {2 * n} queries for one round, got T={cfg.T}")
    start = time.perf_counter()
    rounds = cfg.T // (2 * n)
    s_hat = np.zeros(n)
    losses = []
    hit = False

    def loss_at(point):
        nonlocal hit
        p = oracle(round_top_b(np.clip(point, 0.0, 1.0), arm))
        hit = hit or predicted_label(p) != y
        loss = cw_loss(p, y, cfg.kappa)
        losses.append(loss)
        return loss

    for _ in range(rounds):
        grad = np.empty(n)
        for i in range(n):
            e = np.zeros(n)
            e[i] = cfg.mu
            grad[i] = (loss_at(s_hat + e) - loss_at(s_hat - e)) / (2.0 * cfg.mu)
        s_hat = project(s_hat - cfg.step_size * grad, arm, 0.0, projection)

    s = round_top_b(s_hat, arm)
    p = oracle.audit(s)
    success = predicted_label(p) != y
    trace = np.array(losses)
    return AttackReport(
        losses=trace,
        queries=2 * n * rounds,
        perturbation=s,
        success=success,
        success_best=success or hit,
        final_loss=cw_loss(p, y, cfg.kappa),
        wall_time=time.perf_counter() - start,
        audit_queries=1,
        best_loss=float(trace.min()),
    )


def _random_feasible(rng, arm, allowed, max_tries=100):
    k_max = min(int(arm.budget), allowed.size)
    for _ in range(max_tries):
        k = int(rng.integers(1, k_max + 1))
        idx = rng.choice(allowed, size=k, replace=False)
        if arm.costs[idx].sum() <= arm.cost_budget:
            return idx
    # every single allowed index fits the budget, so trimming terminates
    idx = list(idx)
    while arm.costs[idx].sum() > arm.cost_budget:
        idx.pop(int(np.argmax(arm.costs[idx])))
    return np.array(idx)


def random_attack(oracle: QueryOracle, arm: ArmSet, y: int, T: int, seed: int,
                  kappa: float = 0.0) -> AttackReport:
    """Random search: T uniformly random feasible flips, keeping the best.

    Each draw picks a size k uniformly from 1..B, then a uniform k-subset of
    the allowed coordinates; cost-infeasible draws are rejected.
    """
    if T < 1:
        raise ConfigError("random attack needs T >= 1")
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    allowed = np.flatnonzero(arm.allowed & (arm.costs <= arm.cost_budget))
    n = arm.dimension
    if allowed.size == 0:
        warnings.warn("no single perturbation fits the cost budget; emitting the zero perturbation",
                      DegenerateWarning, stacklevel=2)
        s = np.zeros(n, dtype=np.int8)
        p = oracle.audit(s)
        loss = cw_loss(p, y, kappa)
        ok = predicted_label(p) != y
        return AttackReport(np.array([]), 0, s, ok, ok, loss,
                            time.perf_counter() - start, audit_queries=1, best_loss=loss)

    losses = np.empty(T)
    best_s, best_loss, best_p = None, np.inf, None
    hit = False
    for t in range(T):
        s = np.zeros(n, dtype=np.int8)
        s[_random_feasible(rng, arm, allowed)] = 1
        p = oracle(s)
        loss = cw_loss(p, y, kappa)
        losses[t] = loss
        hit = hit or predicted_label(p) != y
        if loss < best_loss:
            best_s, best_loss, best_p = s, loss, p
    success = predicted_label(best_p) != y
    return AttackReport(
        losses=losses,
        queries=T,
        perturbation=best_s,
        success=success,
        success_best=success or hit,
        final_loss=best_loss,
        wall_time=time.perf_counter() - start,
        best_loss=best_loss,
    )
