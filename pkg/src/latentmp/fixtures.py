"""Synthetic datasets at desk scale.

Three generators: a 3-node toy graph for loader tests, a two-cluster
Gaussian graph that any sane classifier separates, and a citation-style
graph (sparse bag-of-words features, homophilous edges) whose feature
signal alone is deliberately too weak for top accuracy, so the observed
structure carries usable information.
"""

import numpy as np

from .data import Graph, random_split, symmetrize_edges
from .seeds import STREAM_DATA, stream_rng


def toy_graph() -> Graph:
    """Three nodes, two undirected edges, two classes."""
    features = np.array([[0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    edges = symmetrize_edges(np.array([[0, 1], [1, 2]]))
    labels = np.array([0, 1, 1])
    split = np.array(["train", "train", "test"], dtype="<U5")
    return Graph(features=features, edges=edges, labels=labels, num_classes=2, split=split)


def two_cluster_graph(n: int = 400, dim: int = 8, seed: int = 0,
                      separation: float = 1.2, intra_links: int = 3) -> Graph:
    """Two separated Gaussian clusters with intra-cluster edges."""
    rng = stream_rng(seed, STREAM_DATA)
    labels = np.zeros(n, dtype=np.int64)
    labels[n // 2:] = 1
    centers = np.where(labels[:, None] == 0, -separation, separation)
    features = centers + rng.standard_normal((n, dim))
    arcs = []
    members = [np.flatnonzero(labels == c) for c in (0, 1)]
    for u in range(n):
        pool = members[labels[u]]
        others = pool[pool != u]
        for v in rng.choice(others, size=min(intra_links, len(others)), replace=False):
            arcs.append((u, int(v)))
    edges = symmetrize_edges(np.array(arcs, dtype=np.int64))
    split = random_split(n, seed=seed)
    return Graph(features=features, edges=edges, labels=labels, num_classes=2, split=split)


def citation_graph(n: int = 2708, dim: int = 1433, num_classes: int = 7,
                   num_edges: int = 5278, seed: int = 0, words_per_doc: float = 18.0,
                   topic_purity: float = 0.35, homophily: float = 0.81) -> Graph:
    """Citation-network-shaped data: binary word features, homophilous edges.

    Each class prefers a block of the vocabulary; a document draws
    Poisson-many words, each from its class block with probability
    `topic_purity` and uniformly otherwise. Edge endpoints share a class
    with probability `homophily`.
    """
    rng = stream_rng(seed, STREAM_DATA)
    proportions = np.array([0.13, 0.08, 0.154, 0.302, 0.157, 0.11, 0.067])[:num_classes]
    proportions = proportions / proportions.sum()
    labels = rng.choice(num_classes, size=n, p=proportions)

    block = dim // num_classes
    features = np.zeros((n, dim))
    counts = np.maximum(1, rng.poisson(words_per_doc, size=n))
    for u in range(n):
        c = labels[u]
        k = counts[u]
        from_topic = rng.random(k) < topic_purity
        words = np.where(from_topic,
                         c * block + rng.integers(0, block, size=k),
                         rng.integers(0, dim, size=k))
        features[u, words] = 1.0

    members = [np.flatnonzero(labels == c) for c in range(num_classes)]
    seen = set()
    arcs = []
    while len(arcs) < num_edges:
        u = int(rng.integers(0, n))
        if rng.random() < homophily:
            pool = members[labels[u]]
        else:
            other = int(rng.integers(0, num_classes - 1))
            other += other >= labels[u]
            pool = members[other]
        v = int(pool[rng.integers(0, len(pool))])
        if u == v or (u, v) in seen:
            continue
        seen.add((u, v))
        seen.add((v, u))
        arcs.append((u, v))
    edges = symmetrize_edges(np.array(arcs, dtype=np.int64))
    split = random_split(n, seed=seed)
    return Graph(features=features, edges=edges, labels=labels, num_classes=num_classes,
                 split=split)
