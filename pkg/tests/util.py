"""Shared oracles for the test suite: finite differences and a full-network
gradient check with frozen randomness."""

import numpy as np

from latentmp import autodiff as ad
from latentmp.attention import expand_adjacency, network_forward
from latentmp.data import Graph
from latentmp.gumbel import gumbel_from_uniform
from latentmp.losses import EdgePrior, total_loss
from latentmp.trainer import TrainConfig, init_params, sample_model_projections

FD_STEP = 1e-5


def fd_gradient(f, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central finite differences of a scalar function of an array."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    out = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        out[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b, floor: float = 1e-6) -> float:
    a, b = np.asarray(a), np.asarray(b)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def unit_rows(rng, n: int, d: int) -> np.ndarray:
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def small_model(n=12, d_in=5, hidden=8, m=16, heads=2, layers=2, seed=0, lam=0.5):
    """A tiny model plus frozen inputs, draws, and objective for grad checks."""
    cfg = TrainConfig(num_layers=layers, hidden_dim=hidden, num_heads=heads,
                      num_features=m, tau=0.5, num_samples=2, seed=seed,
                      epochs=1, edge_lambda=lam)
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d_in))
    labels = rng.integers(0, 3, size=n)
    mask = np.zeros(n, dtype=bool)
    mask[: n // 2] = True
    arcs = np.array([[i, (i + 1) % n] for i in range(n)])
    graph = Graph(features=X, edges=np.concatenate([arcs, arcs[:, ::-1]]), labels=labels,
                  num_classes=3, undirected=True)
    params = init_params(d_in, 3, cfg)
    projections = sample_model_projections(cfg)
    draws = [[gumbel_from_uniform(rng.random((cfg.num_samples, n))) for _ in range(heads)]
             for _ in range(layers)]
    adj = expand_adjacency(graph.edges, n, 2)
    prior = EdgePrior.from_edges(graph.edges, n)

    def loss_scalar():
        logits, states = network_forward(graph.features, adj, params, projections,
                                         cfg.sample_config(), gumbel_draws=draws,
                                         collect_state=True)
        return total_loss(logits, labels, mask, states, prior, lam)

    return params, loss_scalar


def network_gradcheck(rel_tol: float = 1e-3, **kwargs):
    """Check every parameter coordinate against central finite differences.

    Returns (worst relative error, number of coordinates checked).
    """
    params, loss_scalar = small_model(**kwargs)
    named = list(params.parameters())
    lb = loss_scalar()
    leaf_grads = ad.backward(lb.total)
    analytic = {name: leaf_grads[p].copy() for name, p in named}

    worst, coords = 0.0, 0
    for name, p in named:
        def f(x, p=p):
            old = p.data
            p.data = x
            val = loss_scalar().total.item()
            p.data = old
            return val
        fd = fd_gradient(f, p.data.copy())
        worst = max(worst, rel_err(analytic[name], fd))
        coords += p.data.size
    return worst, coords
