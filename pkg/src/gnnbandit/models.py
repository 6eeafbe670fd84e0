"""Victim models: GCN, SGC and a sum-pooled graph classifier.

All models are bias-free stacks of weight matrices acting on row-feature
matrices, ``H_k = act(S @ H_{k-1} @ W_k)`` with ``S`` the symmetric
normalized adjacency.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateNodeError, FormatError, NumericError, ShapeError
from .graph import Graph, normalized_adjacency

ARCHITECTURES = ("gcn", "sgc", "pooled")
MAGIC = "GBNN1"


@dataclass(frozen=True, eq=False)
class ModelParams:
    architecture: str
    weights: tuple

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.architecture!r}")
        ws = []
        for w in self.weights:
            w = np.array(w, dtype=np.float64)
            if w.ndim != 2:
                raise ShapeError("weight matrices must be 2-d")
            w.setflags(write=False)
            ws.append(w)
        if not ws:
            raise ShapeError("at least one weight matrix is required")
        for a, b in zip(ws, ws[1:]):
            if a.shape[1] != b.shape[0]:
                raise ShapeError(f"layer dims do not chain: {a.shape} then {b.shape}")
        if self.architecture == "sgc" and len(ws) != 1:
            raise ShapeError("sgc has exactly one weight matrix")
        if not all(np.isfinite(w).all() for w in ws):
            raise NumericError("non-finite weight entry")
        object.__setattr__(self, "weights", tuple(ws))

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def dims(self) -> tuple:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def num_classes(self) -> int:
        return self.weights[-1].shape[1]


@dataclass
class TrainConfig:
    lr: float = 0.05
    epochs: int = 200
    init_scale: float = 1.0
    seed: int = 0
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.lr <= 0 or self.init_scale <= 0 or self.epochs < 0 or self.weight_decay < 0:
            raise ConfigError(f"invalid TrainConfig {self}")


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_finite(a, what):
    if not np.isfinite(a).all():
        raise NumericError(f"non-finite values in {what}")
    return a


def _check(params, g, arch):
    if params.architecture != arch:
        raise ConfigError(f"expected a {arch} model, got {params.architecture}")
    if g.features.shape[1] != params.dims[0]:
        raise ShapeError(f"feature dim {g.features.shape[1]} != model input dim {params.dims[0]}")


def gcn_logits(params, g, self_loops=True):
    _check(params, g, "gcn")
    s = normalized_adjacency(g, self_loops).matrix
    h = g.features
    last = params.num_layers - 1
    for k, w in enumerate(params.weights):
        h = s @ (h @ w)
        if k < last:
            h = np.maximum(h, 0.0)
    return _check_finite(h, "gcn activations")


def gcn_forward(params: ModelParams, g: Graph, self_loops: bool = True) -> np.ndarray:
    """Per-node class probabilities, shape (N, L_C). No ReLU on the last layer."""
    return softmax(gcn_logits(params, g, self_loops))


def sgc_forward(params: ModelParams, g: Graph, propagation_steps: int = 2) -> np.ndarray:
    """softmax(S^K X W) with S the self-looped normalized adjacency."""
    _check(params, g, "sgc")
    s = normalized_adjacency(g, True).matrix
    h = g.features @ params.weights[0]
    for _ in range(propagation_steps):
        h = s @ h
    return softmax(_check_finite(h, "sgc activations"))


def pooled_forward(params: ModelParams, g: Graph) -> np.ndarray:
    """GCN layers (all ReLU), sum-pool over nodes, linear readout, softmax."""
    _check(params, g, "pooled")
    if params.num_layers < 2:
        raise ShapeError("pooled model needs at least one GCN layer and a readout")
    s = normalized_adjacency(g, True).matrix
    h = g.features
    for w in params.weights[:-1]:
        h = np.maximum(s @ (h @ w), 0.0)
    logits = h.sum(axis=0) @ params.weights[-1]
    return softmax(_check_finite(logits, "pooled activations"))


def forward(params: ModelParams, g: Graph, self_loops=True, propagation_steps=2) -> np.ndarray:
    if params.architecture == "gcn":
        return gcn_forward(params, g, self_loops)
    if params.architecture == "sgc":
        return sgc_forward(params, g, propagation_steps)
    return pooled_forward(params, g)


def predict_label(params: ModelParams, g: Graph, v=None, **kw) -> int:
    probs = forward(params, g, **kw)
    if params.architecture == "pooled":
        return int(np.argmax(probs))
    return int(np.argmax(probs[v]))


# --------------------------------------------------------------------------
# training


def init_params(architecture, dims, init_scale=1.0, seed=0) -> ModelParams:
    dims = [int(d) for d in dims]
    if len(dims) < 2 or min(dims) < 1:
        raise ConfigError(f"invalid dims {dims}")
    rng = np.random.default_rng(seed)
    ws = []
    for fan_in, fan_out in zip(dims, dims[1:]):
        limit = init_scale * np.sqrt(6.0 / (fan_in + fan_out))
        ws.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
    return ModelParams(architecture, tuple(ws))


def _node_loss_and_grad(params, g, s, self_loops, propagation_steps):
    idx = np.flatnonzero(g.train_mask)
    if idx.size == 0:
        raise ConfigError("train_mask is empty")
    y = g.labels[idx]
    ws = params.weights
    if params.architecture == "sgc":
        prop = g.features
        for _ in range(propagation_steps):
            prop = s @ prop
        logits = prop @ ws[0]
        p = softmax(logits)
        loss = -np.mean(np.log(p[idx, y]))
        dz = np.zeros_like(p)
        dz[idx] = p[idx]
        dz[idx, y] -= 1.0
        dz /= idx.size
        return loss, [prop.T @ dz]
    # gcn: keep pre-activations and aggregated inputs for the backward pass
    h = g.features
    aggs, pre = [], []
    last = len(ws) - 1
    for k, w in enumerate(ws):
        agg = s @ h
        z = agg @ w
        aggs.append(agg)
        pre.append(z)
        h = np.maximum(z, 0.0) if k < last else z
    p = softmax(h)
    loss = -np.mean(np.log(p[idx, y]))
    dz = np.zeros_like(p)
    dz[idx] = p[idx]
    dz[idx, y] -= 1.0
    dz /= idx.size
    grads = [None] * len(ws)
    for k in range(last, -1, -1):
        grads[k] = aggs[k].T @ dz
        if k > 0:
            dh = s.T @ (dz @ ws[k].T)
            dz = dh * (pre[k - 1] > 0)
    return loss, grads


def _pooled_loss_and_grad(params, graphs, norms, labels):
    ws = params.weights
    total = 0.0
    grads = [np.zeros_like(w) for w in ws]
    for g, s, y in zip(graphs, norms, labels):
        h = g.features
        aggs, pre = [], []
        for w in ws[:-1]:
            agg = s @ h
            z = agg @ w
            aggs.append(agg)
            pre.append(z)
            h = np.maximum(z, 0.0)
        pooled = h.sum(axis=0)
        p = softmax(pooled @ ws[-1])
        total -= np.log(p[y])
        dl = p.copy()
        dl[y] -= 1.0
        grads[-1] += np.outer(pooled, dl)
        dh = np.broadcast_to(dl @ ws[-1].T, h.shape)
        for k in range(len(ws) - 2, -1, -1):
            dz = dh * (pre[k] > 0)
            grads[k] += aggs[k].T @ dz
            if k > 0:
                dh = s.T @ (dz @ ws[k].T)
    n = len(graphs)
    return total / n, [gr / n for gr in grads]


def loss_and_grad(params: ModelParams, data, self_loops=True, propagation_steps=2, labels=None):
    """Mean cross-entropy and its gradient w.r.t. every weight matrix.

    ``data`` is a Graph for gcn/sgc, or a list of Graphs (with ``labels``)
    for the pooled classifier.
    """
    if params.architecture == "pooled":
        norms = [normalized_adjacency(g, True).matrix for g in data]
        return _pooled_loss_and_grad(params, data, norms, labels)
    s = normalized_adjacency(data, self_loops if params.architecture == "gcn" else True).matrix
    return _node_loss_and_grad(params, data, s, self_loops, propagation_steps)


@dataclass
class TrainResult:
    params: ModelParams
    losses: list = field(default_factory=list)


def fit(data, cfg: TrainConfig, architecture, dims, self_loops=True, propagation_steps=2,
        labels=None) -> TrainResult:
    """Full-batch gradient descent on the mean cross-entropy.

    ``losses[e]`` is the training loss evaluated before the update of epoch e.
    """
    params = init_params(architecture, dims, cfg.init_scale, cfg.seed)
    if architecture == "pooled":
        if labels is None or len(labels) != len(data):
            raise ConfigError("pooled training needs one label per graph")
        norms = [normalized_adjacency(g, True).matrix for g in data]

        def step(p):
            return _pooled_loss_and_grad(p, data, norms, labels)
    else:
        s = normalized_adjacency(data, self_loops if architecture == "gcn" else True).matrix

        def step(p):
            return _node_loss_and_grad(p, data, s, self_loops, propagation_steps)

    ws = [w.copy() for w in params.weights]
    losses = []
    for epoch in range(cfg.epochs):
        loss, grads = step(ModelParams(architecture, tuple(ws)))
        if not np.isfinite(loss):
            raise NumericError(f"non-finite training loss at epoch {epoch}")
        losses.append(float(loss))
        for w, gr in zip(ws, grads):
            w -= cfg.lr * (gr + cfg.weight_decay * w)
    return TrainResult(ModelParams(architecture, tuple(ws)), losses)


def train(data, cfg: TrainConfig, architecture, dims, **kw) -> ModelParams:
    return fit(data, cfg, architecture, dims, **kw).params


def accuracy(params, g, nodes=None, **kw) -> float:
    pred = forward(params, g, **kw).argmax(axis=1)
    nodes = np.flatnonzero(g.train_mask) if nodes is None else np.asarray(nodes)
    return float(np.mean(pred[nodes] == g.labels[nodes]))


# --------------------------------------------------------------------------
# weight files


def save_params(params: ModelParams, path) -> None:
    header = [MAGIC, params.architecture, str(params.num_layers)] + [str(d) for d in params.dims]
    with open(path, "w", encoding="ascii") as fh:
        fh.write(" ".join(header) + "\n")
        for w in params.weights:
            fh.write(" ".join("%.17g" % x for x in w.ravel()) + "\n")


def load_params(path) -> ModelParams:
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise FormatError(f"{path}: empty weight file")
    head = lines[0].split()
    if len(head) < 3 or head[0] != MAGIC:
        raise FormatError(f"{path}: missing {MAGIC} header")
    arch = head[1]
    try:
        k = int(head[2])
        dims = [int(x) for x in head[3:]]
    except ValueError:
        raise FormatError(f"{path}: malformed header") from None
    if len(dims) != k + 1:
        raise FormatError(f"{path}: header lists {len(dims)} dims for {k} layers")
    if len(lines) != k + 1:
        raise FormatError(f"{path}: expected {k} matrix lines, found {len(lines) - 1}")
    ws = []
    for i in range(k):
        try:
            vals = np.array([float(x) for x in lines[i + 1].split()])
        except ValueError:
            raise FormatError(f"{path}: non-numeric entry in matrix {i + 1}") from None
        if vals.size != dims[i] * dims[i + 1]:
            raise FormatError(f"{path}: matrix {i + 1} has {vals.size} entries, "
                              f"header says {dims[i]}x{dims[i + 1]}")
        ws.append(vals.reshape(dims[i], dims[i + 1]))
    try:
        return ModelParams(arch, tuple(ws))
    except (ConfigError, ShapeError) as exc:
        raise FormatError(f"{path}: {exc}") from None


# --------------------------------------------------------------------------
# black-box query functions


class NodeQuery:
    """Maps a perturbation of node ``v``'s adjacency row to ``f(a_v XOR s)``.

    Only the K-hop neighbourhood of ``v`` in the perturbed graph is
    evaluated, which is exact because each layer aggregates one hop.
    """

    def __init__(self, params: ModelParams, g: Graph, v: int, self_loops=True, propagation_steps=2):
        if params.architecture == "pooled":
            raise ConfigError("NodeQuery needs a node classifier")
        if g.features.shape[1] != params.dims[0]:
            raise ShapeError("feature dim does not match model")
        self.v = int(v)
        self.n = g.num_nodes
        self.arch = params.architecture
        self.self_loops = self_loops if self.arch == "gcn" else True
        self.adj = g.dense_adjacency().astype(bool)
        self.deg = self.adj.sum(axis=1).astype(np.float64) + (1.0 if self.self_loops else 0.0)
        self.weights = params.weights
        self.base = g.features @ params.weights[0]
        self.steps = params.num_layers if self.arch == "gcn" else propagation_steps

    def __call__(self, s) -> np.ndarray:
        s = np.asarray(s)
        v = self.v
        flip = np.flatnonzero(s)
        flip = flip[flip != v]
        deg = self.deg
        if flip.size:
            sign = np.where(self.adj[v, flip], -1.0, 1.0)
            deg = deg.copy()
            deg[flip] += sign
            deg[v] += sign.sum()
        if (deg == 0).any():
            raise DegenerateNodeError(int(np.flatnonzero(deg == 0)[0]))

        def rows(idx):
            m = self.adj[idx].copy()
            if flip.size:
                m[np.isin(idx, flip), v] ^= True
                pos = np.flatnonzero(idx == v)
                if pos.size:
                    m[pos[0], flip] ^= True
            if self.self_loops:
                m[np.arange(idx.size), idx] = True
            return m

        # node sets needed at each depth, outermost first
        sets = [np.array([v])]
        masks = []
        for _ in range(self.steps):
            m = rows(sets[-1])
            masks.append(m)
            need = m.any(axis=0)
            need[sets[-1]] = True
            sets.append(np.flatnonzero(need))
        h = self.base[sets[-1]]
        for depth in range(self.steps, 0, -1):
            out_idx, in_idx = sets[depth - 1], sets[depth]
            sub = masks[depth - 1][:, in_idx] / np.sqrt(deg[out_idx, None] * deg[None, in_idx])
            h = sub @ h
            layer = self.steps - depth
            if self.arch == "gcn" and layer < self.steps - 1:
                h = np.maximum(h, 0.0) @ self.weights[layer + 1]
        probs = softmax(h[0])
        if not np.isfinite(probs).all():
            raise NumericError("non-finite prediction")
        return probs


class GraphQuery:
    """Maps a symmetric perturbation matrix S to ``f(A XOR S)`` for a pooled model."""

    def __init__(self, params: ModelParams, g: Graph):
        if params.architecture != "pooled":
            raise ConfigError("GraphQuery needs a pooled model")
        self.params = params
        self.adj = g.dense_adjacency()
        self.x = g.features
        n = g.num_nodes
        self.eye = np.eye(n)

    def __call__(self, pert) -> np.ndarray:
        a = np.abs(self.adj - np.asarray(pert, dtype=np.float64)) + self.eye
        deg = a.sum(axis=1)
        s = a / np.sqrt(deg[:, None] * deg[None, :])
        h = self.x
        for w in self.params.weights[:-1]:
            h = np.maximum(s @ (h @ w), 0.0)
        return softmax(h.sum(axis=0) @ self.params.weights[-1])
