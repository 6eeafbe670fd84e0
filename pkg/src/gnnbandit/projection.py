"""Euclidean projection onto the shrunk arm set (1 - alpha) * W.

W = {s in [0, 1]^N : s[owner] = 0, sum(s) <= B, c @ s <= C}
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import ConfigError, ConvergenceWarning, NumericError, SizeError


@dataclass(frozen=True, eq=False)
class ArmSet:
    """Relaxed feasible perturbations for one target.

    ``owner`` is the coordinate pinned to zero (the target itself), or None
    when every coordinate may be perturbed (graph-level attacks, tests).
    """

    dimension: int
    budget: float
    cost_budget: float
    costs: np.ndarray
    owner: int | None = None

    def __post_init__(self):
        c = np.array(self.costs, dtype=np.float64)
        if c.shape != (self.dimension,):
            raise ConfigError(f"cost vector length {c.size} != dimension {self.dimension}")
        if not (c > 0).all():
            raise ConfigError("costs must be strictly positive")
        if not 1 <= self.budget <= self.dimension:
            raise ConfigError(f"edge budget B={self.budget} must lie in [1, N={self.dimension}]")
        if not self.cost_budget > 0:
            raise ConfigError("cost budget C must be positive")
        if self.owner is not None and not 0 <= self.owner < self.dimension:
            raise ConfigError(f"owner {self.owner} outside [0, {self.dimension})")
        c.setflags(write=False)
        object.__setattr__(self, "costs", c)

    @classmethod
    def uniform(cls, dimension, budget, cost_budget=None, owner=None):
        """Unit costs; ``cost_budget`` defaults to a non-binding value."""
        if cost_budget is None:
            cost_budget = float(dimension) + 1.0
        return cls(dimension, budget, cost_budget, np.ones(dimension), owner)

    @property
    def allowed(self) -> np.ndarray:
        mask = np.ones(self.dimension, dtype=bool)
        if self.owner is not None:
            mask[self.owner] = False
        return mask

    def upper_bounds(self, alpha=0.0) -> np.ndarray:
        ub = np.full(self.dimension, 1.0 - alpha)
        if self.owner is not None:
            ub[self.owner] = 0.0
        return ub

    def violation(self, z, alpha=0.0) -> float:
        """Largest constraint violation of ``z`` w.r.t. (1 - alpha) * W."""
        scale = 1.0 - alpha
        ub = self.upper_bounds(alpha)
        return float(max(
            np.max(-z, initial=0.0),
            np.max(z - ub, initial=0.0),
            z.sum() - scale * self.budget,
            self.costs @ z - scale * self.cost_budget,
            0.0,
        ))

    def is_feasible_binary(self, s) -> bool:
        s = np.asarray(s)
        if not np.isin(s, (0, 1)).all():
            return False
        if self.owner is not None and s[self.owner] != 0:
            return False
        return s.sum() <= self.budget and self.costs @ s <= self.cost_budget + 1e-12


@dataclass(frozen=True)
class ProjectionConfig:
    tolerance: float = 1e-9
    max_iterations: int = 10000

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ConfigError("projection tolerance must be positive")


@dataclass
class ProjectionResult:
    point: np.ndarray
    iterations: int
    converged: bool


def sample_unit_sphere(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw from the unit sphere in R^n (normalized Gaussian)."""
    if n < 1:
        raise ConfigError("sphere dimension must be >= 1")
    while True:
        g = rng.standard_normal(n)
        norm = np.linalg.norm(g)
        if norm > 0:
            return g / norm


def _halfspace(z, a, aa, b):
    over = a @ z - b
    if over > 0:
        return z - (over / aa) * a
    return z


def _suffix_sums(w, a):
    order = np.argsort(w, kind="stable")
    ws = w[order]
    sa = np.concatenate([np.cumsum(a[order][::-1])[::-1], [0.0]])
    saw = np.concatenate([np.cumsum((a * w)[order][::-1])[::-1], [0.0]])
    return ws, sa, saw


def _hinge_sum(t, sorted_parts):
    # sum_i a_i * max(w_i - t, 0), vectorized over t
    ws, sa, saw = sorted_parts
    k = np.searchsorted(ws, t, side="right")
    return saw[k] - t * sa[k]


def _threshold(w, m, a, b):
    """Root t of sum_i a_i * clip(w_i - t, 0, m_i) = b.

    The left side is piecewise linear and nonincreasing in t, so evaluating
    it at every breakpoint and interpolating on the crossing segment is exact.
    Requires 0 < b < sum(a * m).
    """
    lower = w - m
    upper_parts = _suffix_sums(w, a)
    lower_parts = _suffix_sums(lower, a)
    t = np.unique(np.concatenate([w, lower]))
    h = _hinge_sum(t, upper_parts) - _hinge_sum(t, lower_parts)
    j = int(np.searchsorted(-h, -b, side="right")) - 1
    if j < 0:
        return float(t[0])
    if j >= t.size - 1 or h[j] == b:
        return float(t[j])
    return float(t[j] + (h[j] - b) * (t[j + 1] - t[j]) / (h[j] - h[j + 1]))


def _dual_projection(x, ub, c, b1, b2):
    """Exact projection onto {0 <= z <= ub, sum(z) <= b1, c @ z <= b2}.

    The solution has the form clip(x - lam - mu * c, 0, ub) with lam, mu >= 0
    (KKT). Cases are tried in order: no halfspace active, budget only, cost
    only, both, the last by a monotone 1-d root search over mu.
    """
    ones = np.ones_like(x)
    z = np.clip(x, 0.0, ub)
    over_budget = z.sum() > b1
    over_cost = c @ z > b2
    if not over_budget and not over_cost:
        return z
    if over_budget:
        lam = _threshold(x, ub, ones, b1)
        z = np.clip(x - lam, 0.0, ub)
        if c @ z <= b2 * (1 + 1e-15):
            return z
    if over_cost:
        # clip(x - mu c, 0, ub) = c * clip(x / c - mu, 0, ub / c)
        mu = _threshold(x / c, ub / c, c * c, b2)
        z = np.clip(x - mu * c, 0.0, ub)
        if z.sum() <= b1 * (1 + 1e-15):
            return z

    def cost_gap(mu):
        y = x - mu * c
        zy = np.clip(y, 0.0, ub)
        if zy.sum() > b1:
            zy = np.clip(y - _threshold(y, ub, ones, b1), 0.0, ub)
        return c @ zy - b2, zy

    hi = max(float(np.max(x / c)), 0.0) + 1.0
    mu = optimize.brentq(lambda m: cost_gap(m)[0], 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    return cost_gap(mu)[1]


def _dykstra(x, ub, c, b1, b2, cfg, arm, alpha):
    ones = np.ones_like(x)
    cc = c @ c
    nn = float(x.size)
    tol = cfg.tolerance
    z = x.copy()
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    r = np.zeros_like(x)
    for it in range(1, cfg.max_iterations + 1):
        y = np.clip(z + p, 0.0, ub)
        p_new = z + p - y
        w = _halfspace(y + q, ones, nn, b1)
        q_new = y + q - w
        z_new = _halfspace(w + r, c, cc, b2)
        r_new = w + r - z_new
        # the corrections can keep drifting while z stalls, so watch them too
        moved = max(np.max(np.abs(z_new - z)), np.max(np.abs(p_new - p)),
                    np.max(np.abs(q_new - q)), np.max(np.abs(r_new - r)))
        z, p, q, r = z_new, p_new, q_new, r_new
        if moved < tol and arm.violation(z, alpha) < tol:
            return ProjectionResult(z, it, True)
    return ProjectionResult(z, cfg.max_iterations, False)


def project_with_info(x, arm: ArmSet, alpha=0.0, cfg: ProjectionConfig = ProjectionConfig(),
                      method="dual") -> ProjectionResult:
    """Euclidean projection of ``x`` onto (1 - alpha) * W.

    ``method="dual"`` solves the KKT system exactly through its two
    multipliers; ``method="dykstra"`` runs Dykstra's alternating projections
    over the box, budget and cost pieces until the full iterate state moves
    less than ``cfg.tolerance``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (arm.dimension,):
        raise ConfigError(f"point has shape {x.shape}, expected ({arm.dimension},)")
    if not np.isfinite(x).all():
        raise NumericError("cannot project a non-finite point")
    if not 0.0 <= alpha < 1.0:
        raise ConfigError(f"alpha must lie in [0, 1), got {alpha}")
    scale = 1.0 - alpha
    ub = arm.upper_bounds(alpha)
    c = arm.costs
    b1, b2 = scale * arm.budget, scale * arm.cost_budget

    z = np.clip(x, 0.0, ub)
    if z.sum() <= b1 and c @ z <= b2:
        return ProjectionResult(z, 0, True)
    if method == "dykstra":
        return _dykstra(x, ub, c, b1, b2, cfg, arm, alpha)
    if method != "dual":
        raise ConfigError(f"unknown projection method {method!r}")
    z = _dual_projection(x, ub, c, b1, b2)
    return ProjectionResult(z, 1, arm.violation(z, alpha) <= cfg.tolerance)


def project(x, arm: ArmSet, alpha=0.0, cfg: ProjectionConfig = ProjectionConfig(),
            method="dual") -> np.ndarray:
    res = project_with_info(x, arm, alpha, cfg, method)
    if not res.converged:
        warnings.warn(f"projection did not reach tolerance {cfg.tolerance} "
                      f"({method}, {res.iterations} iterations)", ConvergenceWarning, stacklevel=2)
    return res.point


def brute_force_project(x, arm: ArmSet, alpha=0.0) -> np.ndarray:
    """Exact projection by enumerating every active set. Test oracle, N <= 6."""
    n = arm.dimension
    if n > 6:
        raise SizeError(f"brute-force projection limited to N <= 6, got {n}")
    x = np.asarray(x, dtype=np.float64)
    scale = 1.0 - alpha
    ub = arm.upper_bounds(alpha)
    rows = [np.ones(n), arm.costs]
    rhs = [scale * arm.budget, scale * arm.cost_budget]
    free_coords = [i for i in range(n) if ub[i] > 0]
    best, best_d = None, np.inf
    # coordinate state: 0 at lower bound, 1 at upper bound, 2 free
    for states in itertools.product((0, 1, 2), repeat=len(free_coords)):
        z0 = np.zeros(n)
        free = np.zeros(n, dtype=bool)
        for i, st in zip(free_coords, states):
            if st == 1:
                z0[i] = ub[i]
            elif st == 2:
                free[i] = True
        for tight in ((), (0,), (1,), (0, 1)):
            z = z0.copy()
            z[free] = x[free]
            if tight:
                a = np.array([rows[k][free] for k in tight])
                fixed = np.array([rows[k][~free] @ z0[~free] for k in tight])
                target = np.array([rhs[k] for k in tight]) - fixed - a @ x[free]
                lam = np.linalg.lstsq(a @ a.T, target, rcond=None)[0] if free.any() else None
                if lam is not None:
                    z[free] = x[free] + a.T @ lam
            if arm.violation(z, alpha) > 1e-12:
                continue
            d = np.linalg.norm(z - x)
            if d < best_d:
                best, best_d = z, d
    return best
