"""Experiment orchestration: costs, targets, sweeps, regret benchmark, plot data."""

from __future__ import annotations

import csv
import itertools
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .attack import (
    AttackConfig,
    QueryOracle,
    TheoryParams,
    attack_graph_classification,
    bandit_attack,
    bandit_optimize,
    compute_regret,
    cw_loss,
    flatten_upper,
    predicted_label,
    theoretical_schedule,
    unflatten_upper,
)
from .baselines import ZooConfig, random_attack, zoo_attack
from .errors import (
    AvailabilityError,
    BudgetError,
    ConfigError,
    FitError,
    GnnBanditError,
)
from .graph import (
    CostVector,
    generate_graph_dataset,
    generate_sbm,
    load_graph,
    read_costs,
)
from .models import (
    GraphQuery,
    NodeQuery,
    TrainConfig,
    accuracy,
    fit,
    forward,
    load_params,
    pooled_forward,
)
from .projection import ArmSet

METRICS_HEADER = ("attack", "B", "C", "T", "alpha", "delta", "seed", "target",
                  "success_final", "success_best", "queries", "final_loss", "wall_ms")
SUMMARY_HEADER = ("attack", "B", "C", "T", "alpha", "delta", "count", "successes",
                  "success_rate", "success_best_rate", "mean_queries")
ATTACKS = ("bandit", "zoo", "random")
AXES = ("B", "C", "T", "alpha", "delta")


def simulate_costs(n, lo, hi, seed) -> CostVector:
    """i.i.d. uniform(lo, hi) flip costs."""
    if not lo > 0:
        raise ConfigError(f"cost lower bound must be positive, got {lo}")
    if hi < lo:
        raise ConfigError(f"need lo <= hi, got lo={lo}, hi={hi}")
    rng = np.random.default_rng(seed)
    return CostVector(rng.uniform(lo, hi, size=int(n)))


def select_targets(model, g, n, seed, **forward_kw) -> list:
    """Uniform sample of ``n`` correctly classified nodes outside the training set."""
    if n < 0:
        raise ConfigError("number of targets must be non-negative")
    pred = forward(model, g, **forward_kw).argmax(axis=1)
    ok = np.flatnonzero((pred == g.labels) & (g.labels >= 0) & ~g.train_mask)
    if ok.size < n:
        raise AvailabilityError(f"only {ok.size} correctly classified test nodes, need {n}", ok.size)
    rng = np.random.default_rng(seed)
    return sorted(int(v) for v in rng.choice(ok, size=n, replace=False))


# --------------------------------------------------------------------------
# configuration


def _ints(text):
    return [int(x) for x in _split(text)]


def _floats(text):
    return [float(x) for x in _split(text)]


def _split(text):
    return [t.strip() for t in str(text).split(",") if t.strip()]


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class ExperimentConfig:
    """Flat experiment description; every field is one ``key = value`` line."""

    task: str = "node"
    # graph source
    source: str = "sbm"
    blocks: list = field(default_factory=lambda: [100, 100, 100])
    p_in: float = 0.1
    p_out: float = 0.01
    feature_dim: int = 16
    feature_shift: float = 2.0
    train_per_class: int = 20
    edge_file: str = ""
    feature_file: str = ""
    label_file: str = ""
    train_file: str = ""
    # graph-classification data
    num_graphs: int = 200
    graph_nodes: int = 12
    p_same: float = 0.5
    p_diff: float = 0.1
    # victim model
    arch: str = "gcn"
    hidden: list = field(default_factory=lambda: [16])
    lr: float = 0.05
    epochs: int = 200
    init_scale: float = 1.0
    weight_decay: float = 0.0
    self_loops: bool = True
    propagation_steps: int = 2
    weights: str = ""
    # attacks
    attacks: list = field(default_factory=lambda: list(ATTACKS))
    eta: float = 1e-4
    delta: list = field(default_factory=lambda: [1e-6])
    alpha: list = field(default_factory=lambda: [0.7])
    kappa: float = 0.0
    rounding: str = "top_b"
    zoo_step: float = 0.01
    zoo_mu: float = 1e-3
    num_targets: int = 50
    B: list = field(default_factory=lambda: [5])
    C: list = field(default_factory=lambda: [25.0])
    T: list = field(default_factory=lambda: [50])
    costs: str = "uniform"
    cost_lo: float = 1.0
    cost_hi: float = 5.0
    cost_file: str = ""
    repetitions: int = 30
    # regret benchmark
    regret_n: int = 16
    regret_budget: int = 4
    regret_t: list = field(default_factory=lambda: [256, 1024, 4096, 16384])
    regret_trials: int = 20
    # run control
    out: str = "results"
    seed: int = 0
    jobs: int = 1
    timing: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.task not in ("node", "graph", "regret_bench"):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.source not in ("sbm", "files"):
            raise ConfigError(f"unknown graph source {self.source!r}")
        if self.costs not in ("uniform", "file"):
            raise ConfigError(f"unknown cost spec {self.costs!r}")
        for axis in ("B", "C", "T", "alpha", "delta", "attacks", "regret_t"):
            if not getattr(self, axis):
                raise ConfigError(f"sweep axis {axis} is empty")
        unknown = set(self.attacks) - set(ATTACKS)
        if unknown:
            raise ConfigError(f"unknown attacks {sorted(unknown)}")
        if self.cost_lo > self.cost_hi:
            raise ConfigError(f"need cost_lo <= cost_hi, got {self.cost_lo} > {self.cost_hi}")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.num_targets < 0 or self.jobs < 1:
            raise ConfigError("num_targets must be >= 0 and jobs >= 1")

    def set(self, key, value):
        """Override one field from its text form, with the same parsing as the file."""
        kinds = {f.name: f for f in fields(self)}
        key = key.strip()
        if key not in kinds:
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(self, key)
        try:
            if key == "attacks":
                parsed = list(ATTACKS) if str(value).strip() == "all" else _split(value)
            elif key in ("blocks", "hidden", "B", "T", "regret_t"):
                parsed = _ints(value)
            elif key in ("C", "alpha", "delta"):
                parsed = _floats(value)
            elif isinstance(current, bool):
                parsed = _bool(value)
            elif isinstance(current, int):
                parsed = int(value)
            elif isinstance(current, float):
                parsed = float(value)
            else:
                parsed = str(value).strip()
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {value!r} ({exc})") from None
        setattr(self, key, parsed)

    @classmethod
    def from_text(cls, text, overrides=()):
        cfg = cls()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"config line {lineno}: expected 'key = value', got {raw!r}")
            key, value = line.split("=", 1)
            cfg.set(key, value)
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not key=value")
            cfg.set(*item.split("=", 1))
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path, overrides=()):
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_text(text, overrides)

    def sweep_points(self):
        return list(itertools.product(self.B, self.C, self.T, self.alpha, self.delta))


@dataclass
class MetricsRow:
    attack: str
    B: int
    C: float
    T: int
    alpha: float
    delta: float
    seed: int
    target: int
    success_final: bool
    success_best: bool
    queries: int
    final_loss: float
    wall_ms: float

    def as_record(self):
        return [self.attack, self.B, repr(float(self.C)), self.T, repr(float(self.alpha)),
                repr(float(self.delta)), self.seed, self.target, int(self.success_final),
                int(self.success_best), self.queries, repr(float(self.final_loss)),
                repr(float(self.wall_ms))]


# --------------------------------------------------------------------------
# victim setup


def build_node_task(cfg: ExperimentConfig):
    """Graph and trained (or loaded) node classifier for the node task."""
    if cfg.source == "sbm":
        g = generate_sbm(cfg.blocks, cfg.p_in, cfg.p_out, cfg.feature_dim, cfg.feature_shift,
                         seed=cfg.seed, train_per_class=cfg.train_per_class)
    else:
        g = load_graph(cfg.edge_file, cfg.feature_file, cfg.label_file or None,
                       cfg.train_file or None)
    if cfg.weights:
        params = load_params(cfg.weights)
    else:
        if cfg.arch not in ("gcn", "sgc"):
            raise ConfigError(f"node task needs gcn or sgc, got {cfg.arch!r}")
        dims = [g.features.shape[1], g.num_classes] if cfg.arch == "sgc" else \
            [g.features.shape[1], *cfg.hidden, g.num_classes]
        tc = TrainConfig(lr=cfg.lr, epochs=cfg.epochs, init_scale=cfg.init_scale,
                         seed=cfg.seed, weight_decay=cfg.weight_decay)
        params = fit(g, tc, cfg.arch, dims, self_loops=cfg.self_loops,
                     propagation_steps=cfg.propagation_steps).params
    return g, params


def build_graph_task(cfg: ExperimentConfig):
    """Two-type graph dataset, first half used for training the pooled classifier."""
    graphs, labels = generate_graph_dataset(cfg.num_graphs, cfg.graph_nodes, cfg.p_same,
                                            cfg.p_diff, seed=cfg.seed)
    half = len(graphs) // 2
    if cfg.weights:
        params = load_params(cfg.weights)
    else:
        tc = TrainConfig(lr=cfg.lr, epochs=cfg.epochs, init_scale=cfg.init_scale,
                         seed=cfg.seed, weight_decay=cfg.weight_decay)
        params = fit(graphs[:half], tc, "pooled", [2, *cfg.hidden, 2],
                     labels=labels[:half]).params
    return graphs, labels, half, params


def graph_accuracy(params, graphs, labels) -> float:
    pred = [pooled_forward(params, g).argmax() for g in graphs]
    return float(np.mean(np.asarray(pred) == np.asarray(labels)))


def _forward_kw(cfg):
    return {"self_loops": cfg.self_loops, "propagation_steps": cfg.propagation_steps}


# --------------------------------------------------------------------------
# experiment cells


def cell_seeds(master, target, rep):
    """(cost seed, bandit seed, random seed, zoo seed) for one target/repetition.

    Seeds do not depend on the sweep point, so every point and attack sees the
    same costs and random streams for a given (target, repetition).
    """
    ss = np.random.SeedSequence([int(master), int(target), int(rep)])
    return [int(x) for x in ss.generate_state(4, dtype=np.uint32)]


def _clean_loss(oracle, n, y, kappa):
    p = oracle.audit(np.zeros(n, dtype=np.int8))
    return cw_loss(p, y, kappa), predicted_label(p) != y


def _run_unit(task):
    """All sweep points and attacks for one (target, repetition) pair."""
    cfg, victim, target, rep = task
    cost_seed, bandit_seed, random_seed, zoo_seed = cell_seeds(cfg.seed, target, rep)
    if cfg.task == "node":
        g, params = victim
        n = g.num_nodes
        y = int(g.labels[target])
        owner = target
        query = NodeQuery(params, g, target, **_forward_kw(cfg))
    else:
        graph, params, y = victim
        n = graph.num_nodes * (graph.num_nodes - 1) // 2
        owner = None
        graph_query = GraphQuery(params, graph)

        def query(s):
            return graph_query(unflatten_upper(s, graph.num_nodes))

    if cfg.costs == "file":
        costs = read_costs(cfg.cost_file, n)
    else:
        costs = simulate_costs(n, cfg.cost_lo, cfg.cost_hi, cost_seed)

    rows = []
    for B, C, T, alpha, delta in cfg.sweep_points():
        if B > n:
            raise ConfigError(f"B={B} exceeds the perturbation dimension {n}")
        arm = ArmSet(n, B, C, costs.values, owner)
        for name in cfg.attacks:
            oracle = QueryOracle(query, arm)
            start = time.perf_counter()
            if name == "bandit":
                acfg = AttackConfig(eta=cfg.eta, delta=delta, alpha=alpha, T=T, kappa=cfg.kappa,
                                    seed=bandit_seed, rounding=cfg.rounding)
                if cfg.task == "graph":
                    matrix_oracle = QueryOracle(lambda m: oracle(flatten_upper(m)))
                    matrix_oracle.audit = lambda m: oracle.audit(flatten_upper(m))
                    rep_ = attack_graph_classification(matrix_oracle, graph.dense_adjacency(), y, arm, acfg)
                    perturbation = flatten_upper(rep_.perturbation)
                else:
                    rep_ = bandit_attack(oracle, arm, y, acfg)
                    perturbation = rep_.perturbation
                seed, queries = bandit_seed, oracle.queries
                ok, ok_best, loss = rep_.success, rep_.success_best, rep_.final_loss
            elif name == "random":
                rep_ = random_attack(oracle, arm, y, T, random_seed, cfg.kappa)
                seed, queries = random_seed, oracle.queries
                ok, ok_best, loss = rep_.success, rep_.success_best, rep_.final_loss
                perturbation = rep_.perturbation
            else:
                seed = zoo_seed
                try:
                    rep_ = zoo_attack(oracle, arm, y, ZooConfig(cfg.zoo_step, cfg.zoo_mu, T, zoo_seed,
                                                                cfg.kappa))
                    queries = oracle.queries
                    ok, ok_best, loss = rep_.success, rep_.success_best, rep_.final_loss
                    perturbation = rep_.perturbation
                except BudgetError:
                    # fewer than 2N queries: ZOO cannot finish one gradient
                    # estimate, so it emits the unperturbed input
                    loss, ok = _clean_loss(oracle, n, y, cfg.kappa)
                    ok_best, queries = ok, 0
                    perturbation = np.zeros(n, dtype=np.int8)
            elapsed = (time.perf_counter() - start) * 1e3 if cfg.timing else 0.0
            if oracle.violations or not arm.is_feasible_binary(perturbation):
                raise GnnBanditError(f"{name} queried or emitted an infeasible perturbation")
            rows.append(MetricsRow(name, B, C, T, alpha, delta, seed, int(target), bool(ok),
                                   bool(ok_best), int(queries), float(loss), elapsed))
    return rows


def _graph_targets(cfg, graphs, labels, half, params):
    ok = [i for i in range(half, len(graphs)) if pooled_forward(params, graphs[i]).argmax() == labels[i]]
    if len(ok) < cfg.num_targets:
        raise AvailabilityError(f"only {len(ok)} correctly classified test graphs, need {cfg.num_targets}",
                                len(ok))
    rng = np.random.default_rng(cfg.seed)
    return sorted(int(i) for i in rng.choice(ok, size=cfg.num_targets, replace=False))


def _units(cfg: ExperimentConfig):
    if cfg.task == "node":
        g, params = build_node_task(cfg)
        targets = select_targets(params, g, cfg.num_targets, cfg.seed, **_forward_kw(cfg))
        victims = {v: (g, params) for v in targets}
        info = {"train_accuracy": accuracy(params, g, **_forward_kw(cfg))}
    else:
        graphs, labels, half, params = build_graph_task(cfg)
        targets = _graph_targets(cfg, graphs, labels, half, params)
        victims = {i: (graphs[i], params, int(labels[i])) for i in targets}
        info = {"train_accuracy": graph_accuracy(params, graphs[:half], labels[:half])}
    tasks = [(cfg, victims[v], v, r) for v in targets for r in range(cfg.repetitions)]
    info["targets"] = targets
    return tasks, info


def summarize(rows):
    """Mean success per (attack, sweep point): successes / rows in the group."""
    groups = {}
    for r in rows:
        key = (r.attack, r.B, r.C, r.T, r.alpha, r.delta)
        groups.setdefault(key, []).append(r)
    out = []
    for key in sorted(groups, key=lambda k: (ATTACKS.index(k[0]), *k[1:])):
        grp = groups[key]
        k = sum(r.success_final for r in grp)
        out.append((*key, len(grp), k, k / len(grp),
                    sum(r.success_best for r in grp) / len(grp),
                    sum(r.queries for r in grp) / len(grp)))
    return out


def _write_summary(path, summary):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for attack, B, C, T, alpha, delta, count, k, rate, best, q in summary:
            w.writerow([attack, B, repr(float(C)), T, repr(float(alpha)), repr(float(delta)),
                        count, k, repr(rate), repr(best), repr(q)])


@dataclass
class ExperimentResult:
    rows: list
    summary: list
    metrics_path: str
    summary_path: str
    info: dict


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Run every sweep point x target x repetition and write metrics/summary CSVs.

    Rows are written in (target, repetition, sweep point, attack) order and
    flushed as each target/repetition unit completes, so a failing unit
    leaves all earlier rows on disk.
    """
    if cfg.task == "regret_bench":
        raise ConfigError("use regret_bench for the regret task")
    os.makedirs(cfg.out, exist_ok=True)
    tasks, info = _units(cfg)
    metrics_path = os.path.join(cfg.out, "metrics.csv")
    summary_path = os.path.join(cfg.out, "summary.csv")
    rows = []
    pool = ProcessPoolExecutor(cfg.jobs) if cfg.jobs > 1 and len(tasks) > 1 else None
    results = pool.map(_run_unit, tasks, chunksize=max(1, len(tasks) // (4 * cfg.jobs))) \
        if pool else map(_run_unit, tasks)
    try:
        with open(metrics_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(METRICS_HEADER)
            it = iter(results)
            for _, target, rep in ((t[0], t[2], t[3]) for t in tasks):
                try:
                    unit_rows = next(it)
                except GnnBanditError as exc:
                    fh.flush()
                    exc.args = (f"target {target}, repetition {rep}: {exc}",)
                    raise
                for r in unit_rows:
                    w.writerow(r.as_record())
                fh.flush()
                rows.extend(unit_rows)
    finally:
        if pool:
            pool.shutdown(cancel_futures=True)
    summary = summarize(rows)
    _write_summary(summary_path, summary)
    return ExperimentResult(rows, summary, metrics_path, summary_path, info)


def read_metrics(path) -> list:
    """Parse a metrics.csv back into MetricsRow objects."""
    from .errors import FormatError
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise FormatError(f"cannot read metrics file {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != METRICS_HEADER:
            raise FormatError(f"{path}: unexpected metrics header {header}")
        rows = []
        for lineno, rec in enumerate(reader, 2):
            try:
                a, B, C, T, al, de, sd, tg, sf, sb, q, fl, wm = rec
                rows.append(MetricsRow(a, int(B), float(C), int(T), float(al), float(de), int(sd),
                                       int(tg), bool(int(sf)), bool(int(sb)), int(q), float(fl),
                                       float(wm)))
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    return rows


def emit_plotdata(metrics_path, axis, out_dir) -> dict:
    """Write ``<axis>_<attack>.dat`` files of (x, mean success) sorted by x.

    Rows sharing an x value are pooled, so with a single varying axis the
    means equal the summary.csv success rates.
    """
    if axis not in AXES:
        raise ConfigError(f"unknown axis {axis!r}; choose from {', '.join(AXES)}")
    rows = read_metrics(metrics_path)
    os.makedirs(out_dir, exist_ok=True)
    by_attack = {}
    for r in rows:
        by_attack.setdefault(r.attack, {}).setdefault(getattr(r, axis), []).append(r.success_final)
    paths = {}
    for attack, series in by_attack.items():
        path = os.path.join(out_dir, f"{axis}_{attack}.dat")
        with open(path, "w") as fh:
            for x in sorted(series):
                vals = series[x]
                fh.write(f"{x!r} {sum(vals) / len(vals)!r}\n")
        paths[attack] = path
    return paths


# --------------------------------------------------------------------------
# regret benchmark


@dataclass
class RegretResult:
    horizons: list
    regrets: list
    exponent: float
    degenerate: bool
    schedules: list


def fit_regret_exponent(horizons, regrets):
    """Least-squares slope of log Reg(T) on log T.

    Returns (exponent, degenerate). A grid with any non-positive regret
    cannot be fitted in log space and is reported as exponent 0, degenerate.
    """
    horizons = np.asarray(horizons, dtype=np.float64)
    regrets = np.asarray(regrets, dtype=np.float64)
    if horizons.size < 3:
        raise FitError(f"need at least 3 horizons to fit an exponent, got {horizons.size}")
    if np.any(regrets <= 0):
        return 0.0, True
    slope, _ = np.polyfit(np.log(horizons), np.log(regrets), 1)
    return float(slope), False


def regret_bench(n, budget, horizons, trials, seed=0, theory=None,
                 fallback: AttackConfig | None = None) -> RegretResult:
    """Mean cumulative regret of the bandit loop on L(s) = ||s - s*||^2 / N.

    s* is a random binary point with ``budget`` ones; costs are unit and the
    cost budget equals ``budget``, so s* is feasible and the optimum is 0.
    Each horizon uses ``theoretical_schedule`` when it is valid, otherwise
    ``fallback`` (the node-attack defaults unless given).
    """
    horizons = [int(t) for t in horizons]
    if len(horizons) < 3:
        raise FitError(f"need at least 3 horizons to fit an exponent, got {len(horizons)}")
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    fallback = fallback or AttackConfig()
    # Lipschitz constant of ||s - s*||^2 / N on the unit cube is 2 / sqrt(N);
    # W holds the box of side B / N and sits inside the ball of radius sqrt(B)
    theory = theory or TheoryParams(2.0 / np.sqrt(n), budget / (2.0 * n), np.sqrt(budget))
    arm = ArmSet.uniform(n, budget, float(budget))
    means, schedules = [], []
    for T in horizons:
        sched = theoretical_schedule(theory, n, T)
        schedules.append(sched)
        if sched.valid:
            base = replace(fallback, eta=sched.eta, delta=sched.delta, alpha=sched.alpha, T=T)
        else:
            base = replace(fallback, T=T)
        total = 0.0
        for trial in range(trials):
            t_seed, b_seed = np.random.SeedSequence([int(seed), T, trial]).generate_state(2)
            rng = np.random.default_rng(t_seed)
            star = np.zeros(n)
            star[rng.choice(n, size=budget, replace=False)] = 1.0
            trace = bandit_optimize(lambda s: (float(np.sum((s - star) ** 2)) / n, None), arm,
                                    replace(base, seed=int(b_seed)))
            total += compute_regret(trace.losses, 0.0)[-1]
        means.append(total / trials)
    p, degenerate = fit_regret_exponent(horizons, means)
    return RegretResult(horizons, means, p, degenerate, schedules)


def write_regret_csv(result: RegretResult, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["T", "mean_regret", "schedule_valid", "eta", "delta", "alpha"])
        for T, reg, s in zip(result.horizons, result.regrets, result.schedules):
            w.writerow([T, repr(float(reg)), int(s.valid), repr(s.eta), repr(s.delta), repr(s.alpha)])
        w.writerow(["exponent", repr(result.exponent), "degenerate", int(result.degenerate), "", ""])
