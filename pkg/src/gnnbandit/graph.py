"""Undirected attributed graphs, file ingestion and structure perturbation."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import (
    ConfigError,
    DegenerateNodeError,
    NodeIndexError,
    ParseError,
    ShapeError,
)


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def canonical_edges(edges, num_nodes):
    """Return sorted unique (u, v) pairs with u < v.

    Raises NodeIndexError on out-of-range endpoints and ShapeError on self-loops.
    """
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if e.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    if e.min() < 0 or e.max() >= num_nodes:
        bad = e[(e < 0).any(axis=1) | (e >= num_nodes).any(axis=1)][0]
        raise NodeIndexError(f"edge ({bad[0]}, {bad[1]}) has endpoint outside [0, {num_nodes})")
    if (e[:, 0] == e[:, 1]).any():
        u = int(e[e[:, 0] == e[:, 1]][0, 0])
        raise ShapeError(f"self-loop on node {u} is not allowed")
    e = np.sort(e, axis=1)
    return np.unique(e, axis=0)


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable undirected graph with node features and (partial) labels.

    ``labels`` uses -1 for unlabeled nodes. ``edges`` is canonical: each
    undirected edge appears once as (u, v) with u < v, rows sorted.
    """

    num_nodes: int
    edges: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    train_mask: np.ndarray
    num_classes: int

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        n = self.num_nodes
        u, v = self.edges[:, 0], self.edges[:, 1]
        data = np.ones(2 * len(u))
        a = sp.csr_matrix((data, (np.r_[u, v], np.r_[v, u])), shape=(n, n))
        a.sort_indices()
        return a

    @cached_property
    def degrees(self) -> np.ndarray:
        d = np.bincount(self.edges.ravel(), minlength=self.num_nodes)
        return _frozen(d)

    def dense_adjacency(self) -> np.ndarray:
        a = np.zeros((self.num_nodes, self.num_nodes))
        a[self.edges[:, 0], self.edges[:, 1]] = 1.0
        a[self.edges[:, 1], self.edges[:, 0]] = 1.0
        return a

    def adjacency_vector(self, v: int) -> AdjacencyVector:
        row = np.zeros(self.num_nodes, dtype=np.int8)
        row[self.adjacency.indices[self.adjacency.indptr[v]:self.adjacency.indptr[v + 1]]] = 1
        return AdjacencyVector(row, v)

    def neighbors(self, v: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[v]:a.indptr[v + 1]]

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def structurally_equal(self, other: Graph) -> bool:
        return (
            self.num_nodes == other.num_nodes
            and self.num_classes == other.num_classes
            and np.array_equal(self.edges, other.edges)
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.train_mask, other.train_mask)
        )

    def with_edges(self, edges) -> Graph:
        return make_graph(self.num_nodes, edges, self.features, self.labels,
                          self.train_mask, self.num_classes)


def make_graph(num_nodes, edges, features, labels=None, train_mask=None, num_classes=None) -> Graph:
    n = int(num_nodes)
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] != n:
        raise ShapeError(f"feature matrix has shape {feats.shape}, expected ({n}, d)")
    if labels is None:
        labels = np.full(n, -1, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise ShapeError(f"label vector has length {labels.size}, expected {n}")
    if (labels < -1).any():
        raise ShapeError("labels must be class indices or -1 for unlabeled")
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if (labels >= 0).any() else 0
    if (labels >= num_classes).any():
        raise ShapeError(f"label {labels.max()} not below num_classes={num_classes}")
    if train_mask is None:
        train_mask = np.zeros(n, dtype=bool)
    train_mask = np.asarray(train_mask, dtype=bool)
    if train_mask.shape != (n,):
        raise ShapeError("train_mask length must equal num_nodes")
    if (train_mask & (labels < 0)).any():
        raise ShapeError("train_mask contains unlabeled nodes")
    return Graph(
        num_nodes=n,
        edges=_frozen(canonical_edges(edges, n)),
        features=_frozen(feats),
        labels=_frozen(labels),
        train_mask=_frozen(train_mask),
        num_classes=int(num_classes),
    )


# --------------------------------------------------------------------------
# file ingestion


def _content_lines(path):
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if line:
                yield lineno, line


def read_edges(path):
    pairs = []
    for lineno, line in _content_lines(path):
        parts = line.replace(",", " ").split()
        if len(parts) != 2:
            raise ParseError(f"expected 'u v', got {line!r}", path, lineno)
        try:
            pairs.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise ParseError(f"non-integer node id in {line!r}", path, lineno) from None
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


def read_features(path):
    rows = []
    width = None
    for lineno, line in _content_lines(path):
        try:
            row = [float(x) for x in line.split(",")]
        except ValueError:
            raise ParseError(f"non-numeric feature value in {line!r}", path, lineno) from None
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise ParseError(f"row has {len(row)} columns, expected {width}", path, lineno)
        rows.append(row)
    if not rows:
        raise ShapeError(f"{path}: feature file is empty")
    return np.array(rows, dtype=np.float64)


def read_labels(path, num_nodes):
    """Accepts either ``node_id,label`` rows or one label per line.

    A label of -1 (or an empty field) marks an unlabeled node.
    """
    labels = np.full(num_nodes, -1, dtype=np.int64)
    row = 0
    for lineno, line in _content_lines(path):
        parts = [p.strip() for p in line.split(",")]
        try:
            if len(parts) == 1:
                node, lab = row, parts[0]
            elif len(parts) == 2:
                node, lab = int(parts[0]), parts[1]
            else:
                raise ValueError
            lab = int(lab) if lab != "" else -1
        except ValueError:
            raise ParseError(f"malformed label line {line!r}", path, lineno) from None
        if not 0 <= node < num_nodes:
            raise NodeIndexError(f"{path}:{lineno}: node id {node} outside [0, {num_nodes})")
        labels[node] = lab
        row += 1
    return labels


def read_costs(path, num_nodes):
    vals = []
    for lineno, line in _content_lines(path):
        try:
            vals.append(float(line.split(",")[0]))
        except ValueError:
            raise ParseError(f"non-numeric cost {line!r}", path, lineno) from None
    c = np.array(vals)
    if c.shape != (num_nodes,):
        raise ShapeError(f"{path}: {c.size} costs for {num_nodes} nodes")
    if (c <= 0).any():
        raise ShapeError(f"{path}: costs must be strictly positive")
    return c


def load_graph(edge_path, feature_path, label_path=None, train_path=None) -> Graph:
    """Read a graph from an edge list, a feature CSV and an optional label CSV.

    ``train_path`` optionally lists one training node id per line.
    """
    feats = read_features(feature_path)
    n = feats.shape[0]
    edges = read_edges(edge_path)
    if edges.size and (edges.max() >= n or edges.min() < 0):
        raise NodeIndexError(f"{edge_path}: endpoint {edges.max()} outside [0, {n})")
    labels = read_labels(label_path, n) if label_path is not None else None
    mask = None
    if train_path is not None:
        mask = np.zeros(n, dtype=bool)
        for lineno, line in _content_lines(train_path):
            try:
                mask[int(line)] = True
            except (ValueError, IndexError):
                raise ParseError(f"bad training node id {line!r}", train_path, lineno) from None
    return make_graph(n, edges, feats, labels, mask)


def save_graph(g: Graph, directory) -> dict:
    """Write edges.txt, features.csv, labels.csv and train.txt into ``directory``."""
    os.makedirs(directory, exist_ok=True)
    paths = {k: os.path.join(directory, f) for k, f in
             [("edges", "edges.txt"), ("features", "features.csv"),
              ("labels", "labels.csv"), ("train", "train.txt")]}
    with open(paths["edges"], "w", encoding="ascii") as fh:
        for u, v in g.edges:
            fh.write(f"{u} {v}\n")
    with open(paths["features"], "w", encoding="ascii") as fh:
        for row in g.features:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")
    with open(paths["labels"], "w", encoding="ascii") as fh:
        for i, lab in enumerate(g.labels):
            fh.write(f"{i},{lab}\n")
    with open(paths["train"], "w", encoding="ascii") as fh:
        for i in np.flatnonzero(g.train_mask):
            fh.write(f"{i}\n")
    return paths


def sample_train_mask(labels, per_class, seed) -> np.ndarray:
    """Pick ``per_class`` labeled nodes from each class uniformly at random."""
    rng = np.random.default_rng(seed)
    labels = np.asarray(labels)
    mask = np.zeros(labels.size, dtype=bool)
    for cls in np.unique(labels[labels >= 0]):
        idx = np.flatnonzero(labels == cls)
        k = min(per_class, idx.size)
        mask[rng.choice(idx, size=k, replace=False)] = True
    return mask


def generate_sbm(block_sizes, p_in, p_out, feature_dim, feature_shift, seed,
                 train_per_class=20) -> Graph:
    """Sample a stochastic block model graph with block-shifted Gaussian features.

    Node labels are block ids. Node features are N(shift * onehot(block), I).
    """
    sizes = [int(b) for b in block_sizes]
    if not sizes:
        raise ConfigError("block_sizes must be nonempty")
    if min(sizes) <= 0:
        raise ConfigError("every block must have at least one node")
    if not (0.0 <= p_out <= p_in <= 1.0):
        raise ConfigError(f"need 0 <= p_out <= p_in <= 1, got p_in={p_in}, p_out={p_out}")
    if feature_dim < len(sizes):
        raise ConfigError(f"feature_dim={feature_dim} smaller than the number of blocks {len(sizes)}")
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(len(sizes)), sizes)
    n = labels.size
    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(labels[iu] == labels[ju], p_in, p_out)
    keep = rng.random(iu.size) < prob
    edges = np.stack([iu[keep], ju[keep]], axis=1)
    means = np.zeros((n, feature_dim))
    means[np.arange(n), labels] = feature_shift
    feats = means + rng.standard_normal((n, feature_dim))
    mask = sample_train_mask(labels, train_per_class, rng.integers(2**63))
    return make_graph(n, edges, feats, labels, mask, len(sizes))


# --------------------------------------------------------------------------
# normalization and perturbation


@dataclass(frozen=True, eq=False)
class NormalizedAdjacency:
    matrix: sp.csr_matrix
    self_loops: bool

    def toarray(self):
        return self.matrix.toarray()


def normalized_adjacency(g: Graph, self_loops: bool = True) -> NormalizedAdjacency:
    """D^-1/2 (A [+ I]) D^-1/2 with degrees taken from the (self-looped) adjacency."""
    a = g.adjacency
    if self_loops:
        a = a + sp.identity(g.num_nodes, format="csr")
    deg = np.asarray(a.sum(axis=1)).ravel()
    if (deg == 0).any():
        raise DegenerateNodeError(int(np.flatnonzero(deg == 0)[0]))
    m = sp.csr_matrix(a, dtype=np.float64, copy=True)
    m.sort_indices()
    rows = np.repeat(np.arange(g.num_nodes), np.diff(m.indptr))
    # one rounding per entry: 1 / sqrt(d_u * d_w) with an exact integer product
    m.data = m.data / np.sqrt(deg[rows] * deg[m.indices])
    return NormalizedAdjacency(m, bool(self_loops))


@dataclass(frozen=True, eq=False)
class AdjacencyVector:
    values: np.ndarray
    owner: int

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.int8)
        if not np.isin(vals, (0, 1)).all():
            raise ShapeError("adjacency vector entries must be 0 or 1")
        if not 0 <= self.owner < vals.size:
            raise NodeIndexError(f"owner {self.owner} outside vector of length {vals.size}")
        if vals[self.owner] != 0:
            raise ShapeError("adjacency vector must not contain a self-loop")
        object.__setattr__(self, "values", _frozen(vals))


@dataclass(frozen=True, eq=False)
class PerturbationVector:
    values: np.ndarray
    owner: int

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.int8)
        if not np.isin(vals, (0, 1)).all():
            raise ShapeError("perturbation entries must be 0 or 1")
        if not 0 <= self.owner < vals.size:
            raise NodeIndexError(f"owner {self.owner} outside vector of length {vals.size}")
        if vals[self.owner] != 0:
            raise ShapeError("the owner's self-connection cannot be perturbed")
        object.__setattr__(self, "values", _frozen(vals))


@dataclass(frozen=True, eq=False)
class CostVector:
    values: np.ndarray = field()

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 1 or not (vals > 0).all():
            raise ShapeError("costs must be a 1-d vector of strictly positive values")
        object.__setattr__(self, "values", _frozen(vals))


def apply_perturbation(a: AdjacencyVector, s: PerturbationVector) -> AdjacencyVector:
    if a.values.shape != s.values.shape:
        raise ShapeError(f"length mismatch: {a.values.size} vs {s.values.size}")
    if a.owner != s.owner:
        raise ShapeError(f"owner mismatch: {a.owner} vs {s.owner}")
    return AdjacencyVector(np.bitwise_xor(a.values, s.values), a.owner)


def perturbed_graph_view(g: Graph, v: int, s) -> Graph:
    """Graph with row and column ``v`` of the adjacency XORed with ``s``."""
    vals = s.values if isinstance(s, PerturbationVector) else np.asarray(s)
    if vals.shape != (g.num_nodes,):
        raise ShapeError(f"perturbation length {vals.size} != num_nodes {g.num_nodes}")
    if vals[v] != 0:
        raise ShapeError("the owner's self-connection cannot be perturbed")
    flip = np.flatnonzero(vals)
    if flip.size == 0:
        return g
    nbrs = g.neighbors(v)
    current = np.zeros(g.num_nodes, dtype=bool)
    current[nbrs] = True
    current[flip] ^= True
    kept = g.edges[(g.edges[:, 0] != v) & (g.edges[:, 1] != v)]
    new = np.flatnonzero(current)
    v_edges = np.stack([np.full(new.size, v), new], axis=1)
    return g.with_edges(np.concatenate([kept, v_edges]))


def generate_graph_dataset(num_graphs, num_nodes, p_same, p_diff, seed):
    """Two-class set of small two-type graphs for whole-graph classification.

    Every graph splits its nodes into two types (one-hot features). Class 0
    graphs are assortative (edge probability ``p_same`` within a type,
    ``p_diff`` across), class 1 graphs use the swapped probabilities, so the
    expected density matches and only the wiring pattern tells them apart.
    Returns (graphs, labels).
    """
    if num_graphs < 1 or num_nodes < 2:
        raise ConfigError("need at least one graph with two nodes")
    if not 0.0 <= p_diff < p_same <= 1.0:
        raise ConfigError(f"need 0 <= p_diff < p_same <= 1, got {p_same}, {p_diff}")
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, size=num_graphs)
    types = np.arange(num_nodes) % 2
    feats = np.eye(2)[types]
    iu, ju = np.triu_indices(num_nodes, k=1)
    same = types[iu] == types[ju]
    graphs = []
    for y in labels:
        prob = np.where(same, p_diff, p_same) if y else np.where(same, p_same, p_diff)
        keep = rng.random(iu.size) < prob
        graphs.append(make_graph(num_nodes, np.stack([iu[keep], ju[keep]], axis=1), feats))
    return graphs, labels.astype(np.int64)
