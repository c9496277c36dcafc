"""Adam training loop, evaluation metrics, and model persistence.

Each epoch partitions the nodes into seeded mini-batches (a single batch by
default), runs the forward pass on the induced subgraph, applies the
lambda-weighted objective restricted to intra-batch train nodes and edges,
and takes an Adam step. Validation and test metrics are computed every
epoch on the deterministic (noise-free) path; the returned model is the
best-validation snapshot.
"""

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from . import autodiff as ad
from .autodiff import Tensor, backward
from .attention import (ModelParams, LayerParams, SampleConfig, edge_probability,
                        expand_adjacency, network_forward)
from .data import Graph, minibatch_partition
from .kernels import sample_projection
from .losses import EdgePrior, total_loss
from .seeds import STREAM_BATCH, STREAM_GUMBEL, STREAM_INIT, STREAM_PROJECTION, stream_rng

METRICS = ("accuracy", "roc_auc")


class TrainingDiverged(RuntimeError):
    """Raised when the loss stops being finite; carries the epoch."""

    def __init__(self, epoch: int, message: str):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    """Every knob of a training run; two runs with equal configs match exactly."""

    num_layers: int = 2
    hidden_dim: int = 32
    num_heads: int = 4
    num_features: int = 30      # PRF dimension m, per head
    tau: float = 0.25
    num_samples: int = 5        # Gumbel draws K
    edge_lambda: float = 1.0
    lr: float = 0.01
    weight_decay: float = 5e-4
    epochs: int = 200
    batch_size: int = 0         # 0 means full batch
    seed: int = 0
    use_relational_bias: bool = True
    rb_order: int = 2
    rb_activation: str = "sigmoid"
    use_edge_loss: bool = True
    deterministic: bool = False
    temperature_only: bool = False
    metric: str = "accuracy"
    resample_projections: bool = False  # fresh PRF transforms every step
    clip_grad: bool = False
    clip_norm: float = 5.0
    sampled_eval: bool = False

    def __post_init__(self):
        if self.num_layers < 0 or self.hidden_dim < 1 or self.num_heads < 1:
            raise ValueError("num_layers must be >= 0; hidden_dim and num_heads >= 1")
        if self.num_features < 1 or self.num_samples < 1:
            raise ValueError("num_features and num_samples must be >= 1")
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.lr <= 0 or self.epochs < 0:
            raise ValueError("lr must be positive and epochs non-negative")
        if self.rb_order not in (1, 2):
            raise ValueError(f"rb_order must be 1 or 2, got {self.rb_order}")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}, got {self.metric!r}")

    def sample_config(self, deterministic: bool | None = None) -> SampleConfig:
        det = self.deterministic if deterministic is None else deterministic
        return SampleConfig(num_samples=self.num_samples, tau=self.tau,
                            num_features=self.num_features, deterministic=det,
                            temperature_only=self.temperature_only or det)


@dataclass
class AdamState:
    """First/second moment accumulators, keyed like the parameter names."""

    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, named_params) -> "AdamState":
        m = {name: np.zeros_like(p.data) for name, p in named_params}
        v = {name: np.zeros_like(x) for name, x in m.items()}
        return cls(m=m, v=v)


@dataclass
class RunRecord:
    """Per-epoch loss breakdown and metrics, plus the best-validation point."""

    epochs: list = field(default_factory=list)
    best_epoch: int = -1
    best_valid: float = -np.inf
    best_test: float = np.nan


@dataclass
class TrainedModel:
    """Trainable weights bundled with the PRF transforms they were fit with."""

    params: ModelParams
    projections: list
    cfg: TrainConfig
    input_dim: int
    num_classes: int


def adam_step(named_params, grads: dict, state: AdamState, lr: float,
              weight_decay: float = 0.0):
    """Standard Adam update with bias correction; weight decay is the coupled
    L2 form, added to the gradient before the moment updates."""
    state.step += 1
    t = state.step
    for name, p in named_params:
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for parameter {name}")
        if weight_decay:
            g = g + weight_decay * p.data
        state.m[name] = state.beta1 * state.m[name] + (1 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1 - state.beta2) * g * g
        m_hat = state.m[name] / (1 - state.beta1 ** t)
        v_hat = state.v[name] / (1 - state.beta2 ** t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + state.eps)


def _uniform_init(rng, shape):
    bound = 1.0 / np.sqrt(shape[0])
    return rng.uniform(-bound, bound, size=shape)


def init_params(input_dim: int, num_classes: int, cfg: TrainConfig) -> ModelParams:
    """Fan-in uniform weights, zero biases, zero relational-bias scalars."""
    rng = stream_rng(cfg.seed, STREAM_INIT)
    h = cfg.hidden_dim
    embed_w = Tensor(_uniform_init(rng, (input_dim, h)), requires_grad=True)
    embed_b = Tensor(np.zeros((1, h)), requires_grad=True)
    layers = []
    for _ in range(cfg.num_layers):
        w_q = [Tensor(_uniform_init(rng, (h, h)), requires_grad=True) for _ in range(cfg.num_heads)]
        w_k = [Tensor(_uniform_init(rng, (h, h)), requires_grad=True) for _ in range(cfg.num_heads)]
        w_v = [Tensor(_uniform_init(rng, (h, h)), requires_grad=True) for _ in range(cfg.num_heads)]
        layers.append(LayerParams(w_q=w_q, w_k=w_k, w_v=w_v,
                                  bias=Tensor(0.0, requires_grad=True)))
    out_w = Tensor(_uniform_init(rng, (h, num_classes)), requires_grad=True)
    out_b = Tensor(np.zeros((1, num_classes)), requires_grad=True)
    return ModelParams(embed_w=embed_w, embed_b=embed_b, layers=layers,
                       out_w=out_w, out_b=out_b)


def sample_model_projections(cfg: TrainConfig, step: int | None = None) -> list:
    """One ProjectionMatrix per layer and head; fixed per run unless resampled."""
    path_extra = () if step is None else (step,)
    projs = []
    for layer in range(cfg.num_layers):
        row = []
        for head in range(cfg.num_heads):
            child = int(stream_rng(cfg.seed, STREAM_PROJECTION, layer, head, *path_extra)
                        .integers(2 ** 62))
            row.append(sample_projection(cfg.hidden_dim, cfg.num_features, child))
        projs.append(row)
    return projs


def _clone_params(params: ModelParams) -> ModelParams:
    def cp(t):
        return Tensor(t.data.copy(), requires_grad=True)
    return ModelParams(
        embed_w=cp(params.embed_w), embed_b=cp(params.embed_b),
        layers=[LayerParams(w_q=[cp(t) for t in lp.w_q], w_k=[cp(t) for t in lp.w_k],
                            w_v=[cp(t) for t in lp.w_v], bias=cp(lp.bias))
                for lp in params.layers],
        out_w=cp(params.out_w), out_b=cp(params.out_b))


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Probability a random positive outranks a random negative; ties count 1/2."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs both classes present")
    ranks = rankdata(scores)  # average ranks on ties
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def _forward_eval(model: TrainedModel, graph: Graph, sampled: bool = False,
                  collect_state: bool = False):
    cfg = model.cfg
    adj = None
    if cfg.use_relational_bias and graph.edges.size:
        adj = expand_adjacency(graph.edges, graph.num_nodes, cfg.rb_order)
    if sampled:
        sc = cfg.sample_config(deterministic=False)
        rng = stream_rng(cfg.seed, STREAM_GUMBEL, 2 ** 31)
        return network_forward(graph.features, adj, model.params, model.projections, sc,
                               gumbel_rng=rng, rb_activation=cfg.rb_activation,
                               collect_state=collect_state)
    sc = cfg.sample_config(deterministic=True)
    return network_forward(graph.features, adj, model.params, model.projections, sc,
                           rb_activation=cfg.rb_activation, collect_state=collect_state)


def evaluate(model: TrainedModel, graph: Graph, split: str, metric: str | None = None,
             sampled: bool | None = None) -> float:
    """Metric on a split, computed on the deterministic path by default."""
    metric = metric or model.cfg.metric
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}, got {metric!r}")
    mask = graph.mask(split)
    if not mask.any():
        raise ValueError(f"split {split!r} selects no nodes")
    sampled = model.cfg.sampled_eval if sampled is None else sampled
    logits, _ = _forward_eval(model, graph, sampled=sampled)
    out = logits.data[mask]
    y = graph.labels[mask]
    if metric == "accuracy":
        return float(np.mean(out.argmax(axis=1) == y))
    if graph.num_classes != 2:
        raise ValueError("roc_auc needs a binary task")
    return roc_auc(out[:, 1] - out[:, 0], y)


def mean_edge_pi(model: TrainedModel, graph: Graph) -> float:
    """Mean latent probability of the observed arcs, averaged over layers."""
    if graph.edges.size == 0:
        raise ValueError("graph has no edges")
    _, state = _forward_eval(model, graph, collect_state=True)
    vals = [edge_probability(state, l, int(u), int(v))
            for l in range(len(state.layers)) for u, v in graph.edges]
    return float(np.mean(vals))


def _metrics_line(entry: dict) -> str:
    keys = ("epoch", "loss_total", "loss_sup", "loss_edge", "valid_metric", "test_metric")
    parts = []
    for k in keys:
        v = entry[k]
        parts.append(f"{k}={v}" if isinstance(v, int) else f"{k}={v:.10g}")
    return " ".join(parts)


def train(graph: Graph, cfg: TrainConfig, metrics_file=None, log=None):
    """Fit on the graph's train split; returns (TrainedModel, RunRecord).

    The returned model carries the parameters of the epoch with the best
    validation metric (ties resolved toward the earlier epoch).
    """
    if graph.multilabel:
        raise ValueError("multi-label training is not supported")
    n = graph.num_nodes
    if cfg.epochs > 0 and not graph.mask("train").any():
        raise ValueError("graph has an empty train split")
    binary = graph.num_classes == 2

    params = init_params(graph.features.shape[1], graph.num_classes, cfg)
    projections = sample_model_projections(cfg)
    model = TrainedModel(params=params, projections=projections, cfg=cfg,
                         input_dim=graph.features.shape[1], num_classes=graph.num_classes)
    named = list(params.parameters())
    adam = AdamState.for_params(named)
    record = RunRecord()
    sc = cfg.sample_config()
    has_valid = graph.mask("valid").any()
    has_test = graph.mask("test").any()

    full_batch = cfg.batch_size <= 0 or cfg.batch_size >= n
    full_adj = None
    if cfg.use_relational_bias and graph.edges.size:
        full_adj = expand_adjacency(graph.edges, n, cfg.rb_order)
    full_prior = EdgePrior.from_edges(graph.edges, n) if cfg.use_edge_loss else None

    best_params = _clone_params(params)
    for epoch in range(cfg.epochs):
        if cfg.resample_projections:
            projections = sample_model_projections(cfg, step=epoch)
            model.projections = projections
        if full_batch:
            batches = [np.arange(n)]
        else:
            child = int(stream_rng(cfg.seed, STREAM_BATCH, epoch).integers(2 ** 62))
            batches = list(minibatch_partition(n, cfg.batch_size, child))

        sums = {"loss_total": 0.0, "loss_sup": 0.0, "loss_edge": 0.0}
        used = 0
        for b_idx, batch in enumerate(batches):
            sub = graph if full_batch else graph.subgraph(batch)
            train_mask = sub.mask("train")
            if not train_mask.any():
                continue
            adj = full_adj if full_batch else (
                expand_adjacency(sub.edges, sub.num_nodes, cfg.rb_order)
                if cfg.use_relational_bias and sub.edges.size else None)
            prior = full_prior if full_batch else (
                EdgePrior.from_edges(sub.edges, sub.num_nodes) if cfg.use_edge_loss else None)
            gumbel_rng = stream_rng(cfg.seed, STREAM_GUMBEL, epoch, b_idx)
            lam = cfg.edge_lambda if cfg.use_edge_loss else 0.0
            collect = bool(lam) and prior is not None and prior.edges.size > 0

            logits, states = network_forward(
                sub.features, adj, params, projections, sc, gumbel_rng=gumbel_rng,
                rb_activation=cfg.rb_activation, collect_state=collect)
            lb = total_loss(logits, sub.labels, train_mask, states, prior, lam, binary=binary)
            vals = lb.values()
            if not np.isfinite(vals["loss_total"]):
                raise TrainingDiverged(epoch, f"loss became {vals['loss_total']}")
            leaf_grads = backward(lb.total)
            grads = {name: leaf_grads.get(p, np.zeros_like(p.data)) for name, p in named}
            if cfg.clip_grad:
                norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
                if norm > cfg.clip_norm:
                    grads = {k: g * (cfg.clip_norm / norm) for k, g in grads.items()}
            adam_step(named, grads, adam, cfg.lr, cfg.weight_decay)
            for name, p in named:
                p.grad = None
            for k in sums:
                sums[k] += vals[k]
            used += 1

        if used == 0:
            raise ValueError("no batch contained a train node")
        entry = {"epoch": epoch, **{k: sums[k] / used for k in sums}}
        entry["valid_metric"] = evaluate(model, graph, "valid", sampled=False) if has_valid else np.nan
        entry["test_metric"] = evaluate(model, graph, "test", sampled=False) if has_test else np.nan
        record.epochs.append(entry)
        selector = entry["valid_metric"] if has_valid else -entry["loss_total"]
        if selector > record.best_valid:
            record.best_valid = selector
            record.best_epoch = epoch
            record.best_test = entry["test_metric"]
            best_params = _clone_params(params)
        line = _metrics_line(entry)
        if metrics_file is not None:
            metrics_file.write(line + "\n")
        if log is not None:
            log(line)

    model.params = best_params if cfg.epochs > 0 else params
    return model, record


def save_model(path, model: TrainedModel):
    """Serialise weights, PRF transforms, and the config to an .npz file."""
    arrays = {f"param:{name}": p.data for name, p in model.params.parameters()}
    for l, row in enumerate(model.projections):
        for h, proj in enumerate(row):
            arrays[f"proj:{l}:{h}"] = proj.entries
            arrays[f"projseed:{l}:{h}"] = np.asarray(proj.seed)
    cfg_items = dataclasses.asdict(model.cfg)
    arrays["config_keys"] = np.array(sorted(cfg_items), dtype="<U40")
    arrays["config_vals"] = np.array([repr(cfg_items[k]) for k in sorted(cfg_items)], dtype="<U64")
    arrays["meta"] = np.array([model.input_dim, model.num_classes], dtype=np.int64)
    np.savez(path, **arrays)


def load_model(path) -> TrainedModel:
    import ast
    from .kernels import ProjectionMatrix

    with np.load(path) as z:
        cfg_kwargs = {k: ast.literal_eval(v) for k, v in
                      zip(z["config_keys"].tolist(), z["config_vals"].tolist())}
        cfg = TrainConfig(**cfg_kwargs)
        input_dim, num_classes = (int(x) for x in z["meta"])
        params = init_params(input_dim, num_classes, cfg)
        for name, p in params.parameters():
            p.data = z[f"param:{name}"]
        projections = [
            [ProjectionMatrix(entries=z[f"proj:{l}:{h}"], seed=int(z[f"projseed:{l}:{h}"]))
             for h in range(cfg.num_heads)]
            for l in range(cfg.num_layers)]
    return TrainedModel(params=params, projections=projections, cfg=cfg,
                        input_dim=input_dim, num_classes=num_classes)
