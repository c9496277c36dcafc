"""Training objective: supervised classification plus edge-level regularization.

The edge term is a maximum-likelihood pull of the latent edge probabilities
pi_uv toward the observed arcs, weighted by inverse in-degree and averaged
over nodes and layers:

    L_e = -(1 / (N L)) sum_l sum_{(u,v) in E} (1 / d_u) log pi_uv^(l)

Queries reuse each layer's cached key-feature sums, so the cost stays O(E m)
per layer. The total objective is L_s + lambda * L_e.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .attention import ForwardState, edge_log_probs


@dataclass(frozen=True)
class EdgePrior:
    """Observed arcs plus in-degrees of the regularized graph."""

    edges: np.ndarray       # (E, 2) arcs
    in_degree: np.ndarray   # (N,) count of arcs into each node

    @classmethod
    def from_edges(cls, edges: np.ndarray, n: int) -> "EdgePrior":
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= n):
            raise ValueError(f"edge endpoint out of range for {n} nodes")
        deg = np.bincount(edges[:, 1], minlength=n) if edges.size else np.zeros(n, dtype=np.int64)
        if edges.size and np.any(deg[np.unique(edges[:, 0])] == 0):
            raise ValueError("regularized source node has in-degree zero")
        return cls(edges=edges, in_degree=deg)


@dataclass
class LossBreakdown:
    """Scalar loss tensors; total = supervised + lam * edge."""

    supervised: Tensor
    edge: Tensor
    total: Tensor
    lam: float

    def values(self) -> dict:
        return {
            "loss_sup": self.supervised.item(),
            "loss_edge": self.edge.item(),
            "loss_total": self.total.item(),
        }


def supervised_loss(logits: Tensor, labels: np.ndarray, mask: np.ndarray,
                    binary: bool = False) -> Tensor:
    """Mean negative log-likelihood over the masked nodes.

    `binary` selects the cross-entropy on the positive-class probability
    sigmoid(s1 - s0) of a two-column head. That quantity equals the
    two-class softmax NLL, so both modes share the stable log-softmax path.
    """
    logits = logits if isinstance(logits, Tensor) else Tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise ValueError("supervised_loss: empty mask")
    picked = ad.gather_rows(logits, idx)
    y = labels[idx]
    n, c = picked.data.shape
    if binary and c != 2:
        raise ValueError(f"binary loss needs 2 logit columns, got {c}")
    if np.any(y < 0) or np.any(y >= c):
        raise ValueError(f"label outside [0, {c}) in masked nodes")
    onehot = np.zeros((n, c))
    onehot[np.arange(n), y] = 1.0
    per_node = ad.mul(Tensor(onehot), ad.row_log_softmax(picked))
    return ad.scale(ad.sum_all(per_node), -1.0 / n)


def edge_regularization(states: ForwardState, prior: EdgePrior, num_nodes: int) -> Tensor:
    """Inverse-degree weighted negative log-likelihood of the observed arcs."""
    if states is None or not states.layers:
        raise ValueError("edge_regularization: no cached forward states")
    num_layers = len(states.layers)
    if prior.edges.size == 0:
        return Tensor(0.0)
    weights = Tensor((1.0 / prior.in_degree[prior.edges[:, 0]])[:, None])
    total = None
    for ls in states.layers:
        contrib = ad.sum_all(ad.mul(weights, edge_log_probs(ls, prior.edges)))
        total = contrib if total is None else ad.add(total, contrib)
    return ad.scale(total, -1.0 / (num_nodes * num_layers))


def total_loss(logits: Tensor, labels, mask, states: ForwardState | None,
               prior: EdgePrior | None, lam: float, binary: bool = False) -> LossBreakdown:
    """Supervised plus lambda-weighted edge term; lam = 0 skips the edge path."""
    sup = supervised_loss(logits, labels, mask, binary=binary)
    n = logits.data.shape[0] if isinstance(logits, Tensor) else np.asarray(logits).shape[0]
    if lam != 0.0 and prior is not None and prior.edges.size:
        edge = edge_regularization(states, prior, n)
        total = ad.add(sup, ad.scale(edge, lam))
    else:
        edge = Tensor(0.0)
        total = sup
    return LossBreakdown(supervised=sup, edge=edge, total=total, lam=lam)
