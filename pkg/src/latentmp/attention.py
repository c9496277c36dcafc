"""All-pair message passing in O(N) via kernelized (Gumbel-)Softmax attention.

The dense attention row

    out_u = sum_v softmax_v((q_u . k_v + g_v) / tau) v_v

is replaced by a ratio of random-feature products,

    out_u = phi(q_u/sqrt(tau))' [ sum_v e^{g_v/tau} phi(k_v/sqrt(tau)) v_v' ]
          / phi(q_u/sqrt(tau))' [ sum_w e^{g_w/tau} phi(k_w/sqrt(tau)) ],

whose two summations are shared by every u. Nothing here materialises an
N x N matrix; per Gumbel sample the cost is O(N m d).

Observed edges enter twice: as an additive relational bias on aggregation
(O(E)) and through cached query/key features that answer latent
edge-probability queries in O(m) each after an O(N m) summation.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import Tensor
from .gumbel import gumbel_from_uniform
from .kernels import ProjectionMatrix

_ACTIVATIONS = ("sigmoid", "identity")


@dataclass
class SampleConfig:
    """Knobs of the stochastic structure-sampling path."""

    num_samples: int = 5        # Gumbel draws averaged per layer
    tau: float = 0.25
    num_features: int = 30      # PRF dimension per head
    deterministic: bool = False  # drop the Gumbel noise (plain softmax path)
    temperature_only: bool = False  # keep tau in deterministic mode

    def __post_init__(self):
        if self.num_samples < 1 or self.num_features < 1:
            raise ValueError("num_samples and num_features must be at least 1")
        if self.tau <= 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")

    def effective_tau(self) -> float:
        if self.deterministic and not self.temperature_only:
            return 1.0
        return self.tau


@dataclass
class LayerParams:
    """Per-head query/key/value projections plus the relational-bias scalar."""

    w_q: list  # per head, (d_in, d_out) Tensors
    w_k: list
    w_v: list
    bias: Tensor  # scalar

    @property
    def heads(self) -> int:
        return len(self.w_q)


@dataclass
class ModelParams:
    """Input embedding, message-passing layers, and the output MLP head."""

    embed_w: Tensor
    embed_b: Tensor
    layers: list
    out_w: Tensor
    out_b: Tensor

    def parameters(self):
        yield "embed_w", self.embed_w
        yield "embed_b", self.embed_b
        for i, lp in enumerate(self.layers):
            for h in range(lp.heads):
                yield f"layer{i}.head{h}.w_q", lp.w_q[h]
                yield f"layer{i}.head{h}.w_k", lp.w_k[h]
                yield f"layer{i}.head{h}.w_v", lp.w_v[h]
            yield f"layer{i}.bias", lp.bias
        yield "out_w", self.out_w
        yield "out_b", self.out_b


@dataclass
class HeadState:
    """Cached Gumbel-free features for O(m) edge-probability queries."""

    phi_q: Tensor    # (N, m)
    phi_k: Tensor    # (N, m)
    key_sum: Tensor  # (m, 1), literal column sum of phi_k
    den: Tensor      # (N, 1), phi_q @ key_sum


@dataclass
class LayerState:
    heads: list


@dataclass
class ForwardState:
    layers: list = field(default_factory=list)


def _validate_finite(name: str, *tensors: Tensor):
    for t in tensors:
        if not np.all(np.isfinite(t.data)):
            raise ValueError(f"{name}: non-finite entries in input of shape {t.data.shape}")


def prf_features_graph(X: Tensor, proj: ProjectionMatrix, inv_sqrt_tau: float = 1.0,
                       shift: float | None = None) -> Tensor:
    """Differentiable row-wise PRF map of X / sqrt(tau).

    The stabilising shift rescales every feature by exp(-shift); it cancels
    in the attention and edge-probability ratios. Defaults to the batch
    maximum of the projected entries.
    """
    Xs = ad.scale(X, inv_sqrt_tau) if inv_sqrt_tau != 1.0 else X
    wx = ad.matmul(Xs, Tensor(proj.entries.T))
    if shift is None:
        shift = float(wx.data.max()) if wx.data.size else 0.0
    sq = ad.scale(ad.row_sum(ad.mul(Xs, Xs)), 0.5)
    exponent = ad.sub(ad.sub(wx, sq), Tensor(shift))
    return ad.scale(ad.exp(exponent), proj.m ** -0.5)


def _attention_ratio(phi_q: Tensor, phi_k: Tensor, V: Tensor):
    """Shared-summation form; returns (output, denominator, key_sum)."""
    kv = ad.matmul(ad.transpose(phi_k), V)          # (m, d)
    key_sum = ad.row_sum(ad.transpose(phi_k))       # (m, 1)
    num = ad.matmul(phi_q, kv)                      # (N, d)
    den = ad.matmul(phi_q, key_sum)                 # (N, 1)
    if np.any(den.data <= 0.0):
        raise ValueError("attention denominator underflowed to zero; inputs out of range")
    return ad.div(num, den), den, key_sum


def kernelized_attention(Q, K, V, proj: ProjectionMatrix) -> Tensor:
    """Softmax attention estimated through PRF inner products, O(N m d)."""
    Q, K, V = (t if isinstance(t, Tensor) else Tensor(t) for t in (Q, K, V))
    _validate_finite("kernelized_attention", Q, K, V)
    out, _, _ = _attention_ratio(prf_features_graph(Q, proj), prf_features_graph(K, proj), V)
    return out


def _gumbel_key_weights(draw: np.ndarray, tau: float) -> np.ndarray:
    # max subtraction cancels in the ratio and keeps exp(g/tau) bounded
    return np.exp((draw - draw.max()) / tau)[:, None]


def kernelized_gumbel_attention(Q, K, V, proj: ProjectionMatrix, sc: SampleConfig,
                                gumbel_draws=None, gumbel_rng=None) -> Tensor:
    """Average over K Gumbel draws of attention on a sampled latent graph.

    `gumbel_draws` may inject an explicit (K, N) array (tests share draws
    with the dense oracle); otherwise draws come from `gumbel_rng`. In
    deterministic mode the noise is zero and a single sample is taken, which
    reduces to temperature-scaled kernelized attention.
    """
    Q, K, V = (t if isinstance(t, Tensor) else Tensor(t) for t in (Q, K, V))
    _validate_finite("kernelized_gumbel_attention", Q, K, V)
    n = K.data.shape[0]
    tau = sc.effective_tau()
    inv = tau ** -0.5

    if sc.deterministic:
        draws = np.zeros((1, n))
    elif gumbel_draws is not None:
        draws = np.asarray(gumbel_draws, dtype=np.float64)
        if draws.ndim == 1:
            draws = draws[None, :]
        if draws.shape[1] != n:
            raise ValueError(f"gumbel draws shape {draws.shape} does not match {n} keys")
    else:
        if gumbel_rng is None:
            raise ValueError("kernelized_gumbel_attention needs gumbel_draws or gumbel_rng")
        draws = gumbel_from_uniform(gumbel_rng.random((sc.num_samples, n)))

    phi_q = prf_features_graph(Q, proj, inv)
    phi_k = prf_features_graph(K, proj, inv)
    total = None
    for k in range(draws.shape[0]):
        weighted = ad.mul(phi_k, Tensor(_gumbel_key_weights(draws[k], tau)))
        out, _, _ = _attention_ratio(phi_q, weighted, V)
        total = out if total is None else ad.add(total, out)
    return ad.scale(total, 1.0 / draws.shape[0]) if draws.shape[0] > 1 else total


def expand_adjacency(edges: np.ndarray, n: int, order: int) -> np.ndarray:
    """Boolean 1- or 2-hop reachability arcs, deduplicated, no self-loops."""
    if order not in (1, 2):
        raise ValueError(f"adjacency order must be 1 or 2, got {order}")
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= n):
        raise ValueError(f"edge endpoint out of range for {n} nodes")
    if edges.size == 0:
        return edges
    data = np.ones(len(edges), dtype=bool)
    A = sp.csr_matrix((data, (edges[:, 0], edges[:, 1])), shape=(n, n), dtype=bool)
    if order == 2:
        A = (A + A @ A).tocsr()
    A.setdiag(False)
    A.eliminate_zeros()
    coo = A.tocoo()
    out = np.stack([coo.row.astype(np.int64), coo.col.astype(np.int64)], axis=1)
    return out[np.lexsort((out[:, 1], out[:, 0]))]


def relational_bias(adj, V, b: Tensor, order: int = 1, activation: str = "sigmoid") -> Tensor:
    """Additive term sigma(b) * sum of observed-neighbour values, O(E d)."""
    V = V if isinstance(V, Tensor) else Tensor(V)
    n = V.data.shape[0]
    arcs = expand_adjacency(adj, n, order)
    if activation not in _ACTIVATIONS:
        raise ValueError(f"activation must be one of {_ACTIVATIONS}, got {activation!r}")
    weight = ad.sigmoid(b) if activation == "sigmoid" else b
    if len(arcs) == 0:
        return Tensor(np.zeros_like(V.data))
    pulled = ad.index_sum(ad.gather_rows(V, arcs[:, 1]), arcs[:, 0], n)
    return ad.mul(pulled, weight)


def _head_state(Q: Tensor, K: Tensor, proj: ProjectionMatrix) -> HeadState:
    # edge-probability queries use the raw (untempered, Gumbel-free) features
    phi_q = prf_features_graph(Q, proj)
    phi_k = prf_features_graph(K, proj)
    key_sum = ad.row_sum(ad.transpose(phi_k))
    den = ad.matmul(phi_q, key_sum)
    return HeadState(phi_q=phi_q, phi_k=phi_k, key_sum=key_sum, den=den)


def layer_forward(Z, adj, lp: LayerParams, sc: SampleConfig, projections,
                  gumbel_draws=None, gumbel_rng=None, rb_activation: str = "sigmoid",
                  collect_state: bool = False):
    """One message-passing layer: per-head attention plus relational bias,
    head outputs averaged. `adj` must already be at the desired hop order
    (see expand_adjacency); pass None to disable the bias.

    Returns (Z', LayerState or None).
    """
    Z = Z if isinstance(Z, Tensor) else Tensor(Z)
    heads_out, head_states = [], []
    for h in range(lp.heads):
        Q = ad.matmul(Z, lp.w_q[h])
        K = ad.matmul(Z, lp.w_k[h])
        V = ad.matmul(Z, lp.w_v[h])
        draws = None if gumbel_draws is None else gumbel_draws[h]
        out = kernelized_gumbel_attention(Q, K, V, projections[h], sc,
                                          gumbel_draws=draws, gumbel_rng=gumbel_rng)
        if adj is not None and len(adj):
            out = ad.add(out, relational_bias(adj, V, lp.bias, order=1, activation=rb_activation))
        heads_out.append(out)
        if collect_state:
            head_states.append(_head_state(Q, K, projections[h]))
    total = heads_out[0]
    for other in heads_out[1:]:
        total = ad.add(total, other)
    z_next = ad.scale(total, 1.0 / lp.heads) if lp.heads > 1 else total
    return z_next, (LayerState(heads=head_states) if collect_state else None)


def network_forward(X, adj, params: ModelParams, projections, sc: SampleConfig,
                    gumbel_draws=None, gumbel_rng=None, rb_activation: str = "sigmoid",
                    collect_state: bool = False):
    """Full forward pass: ELU input embedding, L message-passing layers, MLP head.

    `projections` is a per-layer list of per-head ProjectionMatrix.
    `gumbel_draws`, when given, is indexed [layer][head] -> (K, N) array.
    Returns (logits, ForwardState or None).
    """
    X = X if isinstance(X, Tensor) else Tensor(X)
    Z = ad.elu(ad.add(ad.matmul(X, params.embed_w), params.embed_b))
    state = ForwardState() if collect_state else None
    for i, lp in enumerate(params.layers):
        draws = None if gumbel_draws is None else gumbel_draws[i]
        Z, ls = layer_forward(Z, adj, lp, sc, projections[i], gumbel_draws=draws,
                              gumbel_rng=gumbel_rng, rb_activation=rb_activation,
                              collect_state=collect_state)
        if collect_state:
            state.layers.append(ls)
    logits = ad.add(ad.matmul(Z, params.out_w), params.out_b)
    return logits, state


def edge_probability(state: ForwardState, layer: int, u: int, v: int) -> float:
    """Latent edge probability pi_uv at a layer, averaged over heads.

    Uses the cached key-feature sum, so each query costs O(m). The values
    over all v form a distribution: positive and summing to one.
    """
    if state is None or layer >= len(state.layers) or not state.layers[layer].heads:
        raise ValueError(f"no cached state for layer {layer}; run forward with collect_state")
    total = 0.0
    heads = state.layers[layer].heads
    for hs in heads:
        num = float(hs.phi_q.data[u] @ hs.phi_k.data[v])
        total += num / float(hs.den.data[u, 0])
    return total / len(heads)


def edge_log_probs(layer_state: LayerState, edges: np.ndarray) -> Tensor:
    """Differentiable log pi_uv for a batch of (u, v) arcs, (E, 1).

    Per-head probabilities are averaged before the log, mirroring the
    head-averaging of layer outputs.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if not layer_state.heads:
        raise ValueError("layer state has no cached heads")
    src, dst = edges[:, 0], edges[:, 1]
    pi_sum = None
    for hs in layer_state.heads:
        num = ad.row_sum(ad.mul(ad.gather_rows(hs.phi_q, src), ad.gather_rows(hs.phi_k, dst)))
        pi = ad.div(num, ad.gather_rows(hs.den, src))
        pi_sum = pi if pi_sum is None else ad.add(pi_sum, pi)
    avg = ad.scale(pi_sum, 1.0 / len(layer_state.heads)) if len(layer_state.heads) > 1 else pi_sum
    return ad.log(avg)
