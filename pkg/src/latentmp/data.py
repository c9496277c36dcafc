"""Dataset ingestion, k-NN graph construction, splits, and batch partition.

A dataset directory holds plain CSV files, each with a mandatory header row:

    features.csv  node,f0,...,f{D-1}      one row per node, in index order
    edges.csv     src,dst                 zero-based endpoints
    labels.csv    node,label              or node,l0,...,l{T-1} multi-label
    splits.csv    node,split              split in {train,valid,test}; optional
    meta.csv      key,value               undirected in {0,1}, num_classes
"""

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .seeds import STREAM_BATCH, STREAM_SPLIT, stream_rng

SPLIT_TAGS = ("train", "valid", "test", "none")


@dataclass
class Graph:
    """A single attributed graph with per-node labels and split tags."""

    features: np.ndarray          # (N, D) float64
    edges: np.ndarray             # (E, 2) int64 arcs
    labels: np.ndarray            # (N,) class ids, or (N, T) multi-label bits
    num_classes: int
    split: np.ndarray = field(default=None)  # (N,) strings from SPLIT_TAGS
    undirected: bool = True

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.split is None:
            self.split = np.full(self.num_nodes, "none", dtype="<U5")
        self.validate()

    @property
    def num_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def multilabel(self) -> bool:
        return self.labels.ndim == 2

    def validate(self):
        n = self.num_nodes
        if not np.all(np.isfinite(self.features)):
            raise ValueError("graph features contain non-finite entries")
        if self.edges.size and (self.edges.min() < 0 or self.edges.max() >= n):
            raise ValueError(f"edge endpoint out of range for {n} nodes")
        if self.labels.shape[0] != n:
            raise ValueError(f"{self.labels.shape[0]} labels for {n} nodes")
        if not self.multilabel and self.labels.size and self.labels.max() >= self.num_classes:
            raise ValueError(f"label id {self.labels.max()} exceeds num_classes={self.num_classes}")
        if self.split.shape[0] != n:
            raise ValueError(f"{self.split.shape[0]} split tags for {n} nodes")

    def mask(self, tag: str) -> np.ndarray:
        if tag not in SPLIT_TAGS:
            raise ValueError(f"unknown split {tag!r}")
        return self.split == tag

    def subgraph(self, nodes: np.ndarray) -> "Graph":
        """Induced subgraph on `nodes`, endpoints reindexed to 0..len-1."""
        nodes = np.asarray(nodes, dtype=np.int64)
        pos = np.full(self.num_nodes, -1, dtype=np.int64)
        pos[nodes] = np.arange(len(nodes))
        if self.edges.size:
            keep = (pos[self.edges[:, 0]] >= 0) & (pos[self.edges[:, 1]] >= 0)
            sub_edges = pos[self.edges[keep]]
        else:
            sub_edges = self.edges
        return Graph(features=self.features[nodes], edges=sub_edges,
                     labels=self.labels[nodes], num_classes=self.num_classes,
                     split=self.split[nodes].copy(), undirected=self.undirected)


@dataclass(frozen=True)
class BatchPlan:
    """A seeded partition of the node ids into batches."""

    seed: int
    batches: list

    def __iter__(self):
        return iter(self.batches)


def _read_rows(path: Path, expected_header=None):
    if not path.exists():
        raise FileNotFoundError(f"missing dataset file {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if expected_header is not None and header[:len(expected_header)] != list(expected_header):
        raise ValueError(f"{path}:1: expected header starting {expected_header}, got {header}")
    return header, rows[1:]


def _fail(path: Path, line: int, msg: str):
    raise ValueError(f"{path}:{line}: {msg}")


def load_dataset(dirpath) -> Graph:
    """Load and validate a CSV dataset directory."""
    d = Path(dirpath)
    if not d.is_dir():
        raise FileNotFoundError(f"dataset directory {d} does not exist")

    meta = {}
    if (d / "meta.csv").exists():
        _, rows = _read_rows(d / "meta.csv", ("key", "value"))
        for i, row in enumerate(rows, start=2):
            if len(row) != 2:
                _fail(d / "meta.csv", i, f"expected key,value, got {row}")
            meta[row[0].strip()] = row[1].strip()
    undirected = meta.get("undirected", "1") == "1"

    header, rows = _read_rows(d / "features.csv")
    if header[0] != "node":
        _fail(d / "features.csv", 1, f"first column must be 'node', got {header[0]!r}")
    dim = len(header) - 1
    feats = np.empty((len(rows), dim))
    for i, row in enumerate(rows, start=2):
        if len(row) != dim + 1:
            _fail(d / "features.csv", i, f"expected {dim + 1} columns, got {len(row)}")
        if int(row[0]) != i - 2:
            _fail(d / "features.csv", i, f"node ids must be consecutive, got {row[0]}")
        try:
            feats[i - 2] = [float(v) for v in row[1:]]
        except ValueError:
            _fail(d / "features.csv", i, "non-numeric feature value")
    n = len(rows)

    _, rows = _read_rows(d / "edges.csv", ("src", "dst"))
    edges = np.empty((len(rows), 2), dtype=np.int64)
    for i, row in enumerate(rows, start=2):
        if len(row) != 2:
            _fail(d / "edges.csv", i, f"expected src,dst, got {row}")
        s, t = int(row[0]), int(row[1])
        if not (0 <= s < n and 0 <= t < n):
            _fail(d / "edges.csv", i, f"edge ({s},{t}) out of range for {n} nodes")
        edges[i - 2] = (s, t)
    if undirected and edges.size:
        edges = symmetrize_edges(edges)

    header, rows = _read_rows(d / "labels.csv")
    if header[0] != "node":
        _fail(d / "labels.csv", 1, f"first column must be 'node', got {header[0]!r}")
    if len(rows) != n:
        _fail(d / "labels.csv", len(rows) + 1, f"{len(rows)} label rows for {n} nodes")
    width = len(header) - 1
    labels = np.empty((n, width) if width > 1 else n, dtype=np.int64)
    for i, row in enumerate(rows, start=2):
        if len(row) != width + 1 or int(row[0]) != i - 2:
            _fail(d / "labels.csv", i, f"malformed label row {row}")
        vals = [int(v) for v in row[1:]]
        labels[i - 2] = vals if width > 1 else vals[0]
    num_classes = int(meta.get("num_classes", (labels.max() + 1) if labels.size else 0))

    split = np.full(n, "none", dtype="<U5")
    if (d / "splits.csv").exists():
        _, rows = _read_rows(d / "splits.csv", ("node", "split"))
        for i, row in enumerate(rows, start=2):
            if len(row) != 2:
                _fail(d / "splits.csv", i, f"expected node,split, got {row}")
            node, tag = int(row[0]), row[1].strip()
            if not 0 <= node < n:
                _fail(d / "splits.csv", i, f"node {node} out of range for {n} nodes")
            if tag not in ("train", "valid", "test"):
                _fail(d / "splits.csv", i, f"unknown split tag {tag!r}")
            split[node] = tag

    return Graph(features=feats, edges=edges, labels=labels,
                 num_classes=num_classes, split=split, undirected=undirected)


def save_dataset(graph: Graph, dirpath, raw_edges: np.ndarray | None = None):
    """Write a Graph back to the CSV directory format.

    `raw_edges` stores a specific arc list verbatim (e.g. one arc per
    undirected edge); by default the graph's arcs are written as-is with
    undirected=0 so a reload round-trips bit-exactly.
    """
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    n, dim = graph.features.shape
    with open(d / "features.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node"] + [f"f{j}" for j in range(dim)])
        for i in range(n):
            w.writerow([i] + [repr(v) for v in graph.features[i]])
    edges = graph.edges if raw_edges is None else np.asarray(raw_edges, dtype=np.int64)
    undirected = 0 if raw_edges is None else int(graph.undirected)
    with open(d / "edges.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["src", "dst"])
        w.writerows(edges.tolist())
    with open(d / "labels.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        if graph.multilabel:
            w.writerow(["node"] + [f"l{j}" for j in range(graph.labels.shape[1])])
            for i in range(n):
                w.writerow([i] + graph.labels[i].tolist())
        else:
            w.writerow(["node", "label"])
            for i in range(n):
                w.writerow([i, int(graph.labels[i])])
    tagged = np.flatnonzero(graph.split != "none")
    if tagged.size:
        with open(d / "splits.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node", "split"])
            for i in tagged:
                w.writerow([int(i), graph.split[i]])
    with open(d / "meta.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["key", "value"])
        w.writerow(["undirected", undirected])
        w.writerow(["num_classes", graph.num_classes])


def symmetrize_edges(edges: np.ndarray) -> np.ndarray:
    """Both arc directions for every edge, deduplicated and sorted."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size == 0:
        return edges
    both = np.concatenate([edges, edges[:, ::-1]], axis=0)
    both = np.unique(both, axis=0)
    return both[np.lexsort((both[:, 1], both[:, 0]))]


def knn_graph(X: np.ndarray, k: int, metric: str = "euclidean",
              block: int = 1024) -> np.ndarray:
    """Symmetrized k-nearest-neighbour arcs over the feature rows.

    Self-matches are excluded and distance ties break toward the lower node
    index. Distances are computed blockwise in float64, never materialising
    the full pairwise matrix.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if not 1 <= k < n:
        raise ValueError(f"k must satisfy 1 <= k < N, got k={k}, N={n}")
    if metric not in ("euclidean", "cosine"):
        raise ValueError(f"metric must be euclidean or cosine, got {metric!r}")
    if metric == "cosine":
        norms = np.linalg.norm(X, axis=1, keepdims=True)
        X = X / np.where(norms == 0, 1.0, norms)
    sq = np.einsum("nd,nd->n", X, X)
    neighbours = np.empty((n, k), dtype=np.int64)
    for start in range(0, n, block):
        stop = min(start + block, n)
        d2 = sq[start:stop, None] - 2.0 * (X[start:stop] @ X.T) + sq[None, :]
        rows = np.arange(start, stop)
        d2[np.arange(stop - start), rows] = np.inf
        # stable argsort keeps the smaller index first on exact ties
        order = np.argsort(d2, axis=1, kind="stable")
        neighbours[start:stop] = order[:, :k]
    src = np.repeat(np.arange(n), k)
    arcs = np.stack([src, neighbours.reshape(-1)], axis=1)
    return symmetrize_edges(arcs)


def random_split(n: int, ratios=(0.5, 0.25, 0.25), seed: int = 0) -> np.ndarray:
    """Seeded permutation split; floors each part, remainder goes to train."""
    if n < 3:
        raise ValueError(f"need at least 3 nodes to split, got {n}")
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError(f"ratios must be 3 positive numbers, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    n_train, n_valid, n_test = (int(np.floor(n * r)) for r in ratios)
    n_train += n - (n_train + n_valid + n_test)
    perm = stream_rng(seed, STREAM_SPLIT).permutation(n)
    tags = np.full(n, "none", dtype="<U5")
    tags[perm[:n_train]] = "train"
    tags[perm[n_train:n_train + n_valid]] = "valid"
    tags[perm[n_train + n_valid:]] = "test"
    return tags


def minibatch_partition(n: int, batch_size: int, seed: int) -> BatchPlan:
    """Seeded shuffle chunked into ceil(N / batch_size) batches."""
    if batch_size < 2:
        raise ValueError(f"batch_size must be at least 2, got {batch_size}")
    perm = stream_rng(seed, STREAM_BATCH).permutation(n)
    batches = [perm[i:i + batch_size] for i in range(0, n, batch_size)]
    return BatchPlan(seed=seed, batches=batches)
