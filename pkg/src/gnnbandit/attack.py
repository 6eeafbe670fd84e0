"""Bandit structure-perturbation attack with one-point gradient estimates.

This module sees the victim only through a ``QueryOracle``: a callable that
maps a binary perturbation to a probability vector. Nothing here imports the
model code.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import ConfigError, DomainError, ShapeError
from .projection import ArmSet, ProjectionConfig, project, sample_unit_sphere

ROUNDING_MODES = ("top_b", "bernoulli")


class QueryOracle:
    """Counts every model evaluation made through it.

    ``audit`` evaluates without touching ``queries``; it is reserved for
    bookkeeping such as confirming the success flag of a finished attack.
    With ``arm`` given, every queried perturbation is checked against the
    budgets and infeasible ones are tallied in ``violations``.
    """

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], arm: ArmSet | None = None):
        self._fn = fn
        self.arm = arm
        self.queries = 0
        self.audit_queries = 0
        self.violations = 0

    def __call__(self, s) -> np.ndarray:
        self.queries += 1
        if self.arm is not None and not self.arm.is_feasible_binary(s):
            self.violations += 1
        return np.asarray(self._fn(s), dtype=np.float64)

    def audit(self, s) -> np.ndarray:
        self.audit_queries += 1
        return np.asarray(self._fn(s), dtype=np.float64)


@dataclass
class AttackConfig:
    eta: float = 1e-4
    delta: float = 1e-6
    alpha: float = 0.7
    T: int = 50
    kappa: float = 0.0
    seed: int = 0
    rounding: str = "top_b"
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)

    def __post_init__(self):
        if not self.eta > 0:
            raise ConfigError(f"eta must be positive, got {self.eta}")
        if not self.delta > 0:
            raise ConfigError(f"delta must be positive, got {self.delta}")
        if not 0.0 <= self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in [0, 1), got {self.alpha}")
        if self.T < 0:
            raise ConfigError("T must be non-negative")
        if self.kappa < 0:
            raise ConfigError("kappa must be non-negative")
        if self.rounding not in ROUNDING_MODES:
            raise ConfigError(f"rounding must be one of {ROUNDING_MODES}")

    @classmethod
    def for_graph_classification(cls, **kw):
        kw = {"eta": 1e-1, "delta": 1e-3, "alpha": 0.6, **kw}
        return cls(**kw)


@dataclass
class AttackReport:
    losses: np.ndarray
    queries: int
    perturbation: np.ndarray
    success: bool
    success_best: bool
    final_loss: float
    wall_time: float
    audit_queries: int = 0
    best_loss: float = np.nan


def predicted_label(p) -> int:
    # np.argmax already breaks ties toward the lowest index
    return int(np.argmax(p))


def cw_loss(p, y: int, kappa: float = 0.0) -> float:
    """max(p[y] - max_{j != y} p[j], -kappa)."""
    p = np.asarray(p, dtype=np.float64)
    if p.size < 2:
        raise DomainError("CW loss needs at least two classes")
    if not 0 <= y < p.size:
        raise DomainError(f"class {y} outside [0, {p.size})")
    other = np.max(np.delete(p, y))
    return float(max(p[y] - other, -kappa))


def opge_gradient(loss: float, u, n: int, delta: float) -> np.ndarray:
    """One-point gradient estimate (n / delta) * loss * u."""
    if not delta > 0:
        raise DomainError(f"delta must be positive, got {delta}")
    u = np.asarray(u, dtype=np.float64)
    if abs(np.linalg.norm(u) - 1.0) > 1e-9:
        raise DomainError("u must be a unit vector")
    return (n / delta) * loss * u


def round_top_b(s_hat, arm: ArmSet) -> np.ndarray:
    """Set the B largest strictly positive entries to 1, then repair cost.

    Ties go to the lowest index. While the cost budget is exceeded, the
    selected entry with the smallest relaxed value is dropped (ties: the
    highest index goes first).
    """
    s_hat = np.asarray(s_hat, dtype=np.float64)
    if s_hat.shape != (arm.dimension,):
        raise ShapeError(f"relaxed vector has shape {s_hat.shape}, expected ({arm.dimension},)")
    vals = s_hat.copy()
    if arm.owner is not None:
        vals[arm.owner] = 0.0
    order = np.argsort(-vals, kind="stable")
    chosen = [i for i in order[: int(arm.budget)] if vals[i] > 0]
    cost = float(arm.costs[chosen].sum()) if chosen else 0.0
    while chosen and cost > arm.cost_budget:
        # chosen is sorted by decreasing value, lowest index first among ties,
        # so the last element is the smallest value with the highest index
        chosen.pop()
        cost = float(arm.costs[chosen].sum()) if chosen else 0.0
    s = np.zeros(arm.dimension, dtype=np.int8)
    s[chosen] = 1
    return s


def bernoulli_round(s_hat, rng: np.random.Generator, arm: ArmSet | None = None,
                    max_redraws: int = 100) -> np.ndarray:
    """Independent Bernoulli(s_hat[i]) per coordinate.

    With ``arm`` given, infeasible draws are redrawn up to ``max_redraws``
    times before falling back to ``round_top_b``.
    """
    s_hat = np.clip(np.asarray(s_hat, dtype=np.float64), 0.0, 1.0)
    if arm is None:
        return (rng.random(s_hat.size) < s_hat).astype(np.int8)
    if arm.owner is not None:
        s_hat = s_hat.copy()
        s_hat[arm.owner] = 0.0
    for _ in range(max_redraws):
        s = (rng.random(s_hat.size) < s_hat).astype(np.int8)
        if arm.is_feasible_binary(s):
            return s
    return round_top_b(s_hat, arm)


def _round(s_hat, arm, cfg, rng):
    if cfg.rounding == "bernoulli":
        return bernoulli_round(s_hat, rng, arm)
    return round_top_b(s_hat, arm)


@dataclass
class BanditTrace:
    losses: np.ndarray
    perturbation: np.ndarray
    outputs: list
    priors: list


def bandit_optimize(evaluate, arm: ArmSet, cfg: AttackConfig, keep_priors=False) -> BanditTrace:
    """Run the bandit loop against ``evaluate(s) -> (loss, aux)``.

    Each round: draw u on the sphere, perturb the prior v by delta*u, clamp
    to [0, 1] with the owner pinned, round to binary, evaluate once, then
    take a projected step along the one-point gradient estimate.
    """
    rng = np.random.default_rng(cfg.seed)
    n = arm.dimension
    v = np.zeros(n)
    s = np.zeros(n, dtype=np.int8)
    losses = np.empty(cfg.T)
    outputs, priors = [], []
    for t in range(cfg.T):
        u = sample_unit_sphere(n, rng)
        s_hat = np.clip(v + cfg.delta * u, 0.0, 1.0)
        if arm.owner is not None:
            s_hat[arm.owner] = 0.0
        s = _round(s_hat, arm, cfg, rng)
        try:
            loss, aux = evaluate(s)
        except Exception as exc:
            exc.round_index = t + 1
            raise
        losses[t] = loss
        outputs.append(aux)
        g_hat = opge_gradient(loss, u, n, cfg.delta)
        v = project(v - cfg.eta * g_hat, arm, cfg.alpha, cfg.projection)
        if keep_priors:
            priors.append(v)
    return BanditTrace(losses, s, outputs, priors)


def bandit_attack(oracle: QueryOracle, arm: ArmSet, y: int, cfg: AttackConfig) -> AttackReport:
    """Soft-label black-box attack on one target; exactly ``cfg.T`` oracle queries."""
    start = time.perf_counter()

    def evaluate(s):
        p = oracle(s)
        return cw_loss(p, y, cfg.kappa), p

    trace = bandit_optimize(evaluate, arm, cfg)
    audit = 0
    if cfg.T:
        final_p = trace.outputs[-1]
        final_loss = float(trace.losses[-1])
    else:
        final_p = oracle.audit(trace.perturbation)
        final_loss = cw_loss(final_p, y, cfg.kappa)
        audit = 1
    success = predicted_label(final_p) != y
    success_best = success or any(predicted_label(p) != y for p in trace.outputs)
    return AttackReport(
        losses=trace.losses,
        queries=cfg.T,
        perturbation=trace.perturbation,
        success=success,
        success_best=success_best,
        final_loss=final_loss,
        wall_time=time.perf_counter() - start,
        audit_queries=audit,
        best_loss=float(trace.losses.min()) if cfg.T else final_loss,
    )


def flatten_upper(mat) -> np.ndarray:
    mat = np.asarray(mat)
    iu = np.triu_indices(mat.shape[0], k=1)
    return mat[iu]


def unflatten_upper(vec, n: int) -> np.ndarray:
    vec = np.asarray(vec)
    if vec.size != n * (n - 1) // 2:
        raise ShapeError(f"flattened length {vec.size} does not match N={n}")
    out = np.zeros((n, n), dtype=vec.dtype)
    iu = np.triu_indices(n, k=1)
    out[iu] = vec
    out[(iu[1], iu[0])] = vec
    return out


def attack_graph_classification(oracle: QueryOracle, adjacency, y: int, arm: ArmSet,
                                cfg: AttackConfig) -> AttackReport:
    """Bandit attack on a whole-graph classifier over the upper-triangle pairs.

    ``oracle`` receives symmetric zero-diagonal N x N perturbation matrices.
    """
    a = np.asarray(adjacency)
    n = a.shape[0]
    if a.shape != (n, n) or not np.array_equal(a, a.T) or np.any(np.diag(a)):
        raise ShapeError("adjacency must be square, symmetric and zero on the diagonal")
    if arm.dimension != n * (n - 1) // 2:
        raise ShapeError(f"arm dimension {arm.dimension} != N(N-1)/2 = {n * (n - 1) // 2}")

    flat = QueryOracle(lambda s: oracle(unflatten_upper(s, n)))
    flat.audit = lambda s: oracle.audit(unflatten_upper(s, n))
    report = bandit_attack(flat, arm, y, cfg)
    report.perturbation = unflatten_upper(report.perturbation, n)
    return report


class Schedule(NamedTuple):
    eta: float
    delta: float
    alpha: float
    Lambda: float
    valid: bool


@dataclass(frozen=True)
class TheoryParams:
    lipschitz: float
    r_inner: float
    r_outer: float

    def __post_init__(self):
        if not self.lipschitz > 0:
            raise ConfigError("Lipschitz constant must be positive")
        if not 0 < self.r_inner <= self.r_outer:
            raise ConfigError("need 0 < R1 <= R2")


def theoretical_schedule(tp: TheoryParams, n: int, T: int) -> Schedule:
    """Step size, smoothing radius and shrink factor from the regret analysis.

    ``valid`` is False when the formulas give eta <= 0 or alpha >= 1, which
    happens at most practical sizes.
    """
    if n < 1 or T < 1:
        raise ConfigError("N and T must be >= 1")
    cl, r1, r2 = tp.lipschitz, tp.r_inner, tp.r_outer
    delta = T ** -0.25 * np.sqrt(r1 * r2 * n / (3.0 * (cl * r1 + 1.0)))
    eta = r2 / (np.sqrt(T) * n / delta) - delta
    alpha = delta / r1
    lam = 2.0 * np.sqrt(3.0 * r2 * (cl * r1 + 1.0) / r1) + cl * np.sqrt(r2)
    return Schedule(float(eta), float(delta), float(alpha), float(lam),
                    bool(eta > 0 and alpha < 1))


def compute_regret(loss_trace, optimal_loss: float) -> np.ndarray:
    """Cumulative regret sum_{tau <= t} loss[tau] - t * optimal_loss, for each t."""
    trace = np.asarray(loss_trace, dtype=np.float64)
    t = np.arange(1, trace.size + 1)
    return np.cumsum(trace) - t * optimal_loss
