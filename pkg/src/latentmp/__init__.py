"""Linear-complexity all-pair message passing over latent graph structure."""

from .attention import (ForwardState, LayerParams, ModelParams, SampleConfig,
                        edge_probability, expand_adjacency, kernelized_attention,
                        kernelized_gumbel_attention, layer_forward, network_forward,
                        relational_bias)
from .data import (BatchPlan, Graph, knn_graph, load_dataset, minibatch_partition,
                   random_split, save_dataset)
from .gumbel import GumbelDraws, argmax_distribution_check, gumbel_softmax_weights, sample_gumbel
from .kernels import (ErrorBoundParams, ProjectionMatrix, prf_map, sample_projection,
                      softmax_kernel_estimate, theoretical_error_bound)
from .losses import EdgePrior, LossBreakdown, edge_regularization, supervised_loss, total_loss
from .oracle import dense_edge_probability, dense_gumbel_attention, dense_softmax_attention
from .trainer import (AdamState, RunRecord, TrainConfig, TrainedModel, TrainingDiverged,
                      adam_step, evaluate, load_model, roc_auc, save_model, train)

__version__ = "0.1.0"
