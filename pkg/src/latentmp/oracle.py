"""Brute-force dense attention references.

Quadratic implementations used only by tests and benchmarks. They
materialise the full N x N weight matrix on purpose and share no code with
the linear-complexity operator they are checked against.
"""

import numpy as np

MAX_ORACLE_NODES = 4096


def _check(Q: np.ndarray, K: np.ndarray, V: np.ndarray | None = None):
    mats = (Q, K) if V is None else (Q, K, V)
    n = Q.shape[0]
    if n > MAX_ORACLE_NODES:
        raise ValueError(f"oracle capped at {MAX_ORACLE_NODES} nodes, got {n}")
    for M in mats:
        if M.ndim != 2 or M.shape[0] != n:
            raise ValueError(f"oracle operands must share their row count, got {[m.shape for m in mats]}")
        if not np.all(np.isfinite(M)):
            raise ValueError("oracle operands must be finite")


def _row_softmax(S: np.ndarray) -> np.ndarray:
    e = np.exp(S - S.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def dense_softmax_attention(Q: np.ndarray, K: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Row u of the result is sum_v softmax_v(q_u . k_v) v_v."""
    Q, K, V = (np.asarray(M, dtype=np.float64) for M in (Q, K, V))
    _check(Q, K, V)
    return _row_softmax(Q @ K.T) @ V


def dense_gumbel_attention(Q: np.ndarray, K: np.ndarray, V: np.ndarray,
                           g: np.ndarray, tau: float) -> np.ndarray:
    """Like dense_softmax_attention with per-key Gumbel noise and temperature."""
    Q, K, V = (np.asarray(M, dtype=np.float64) for M in (Q, K, V))
    _check(Q, K, V)
    g = np.asarray(g, dtype=np.float64)
    if g.shape != (K.shape[0],):
        raise ValueError(f"gumbel draws shape {g.shape} does not match {K.shape[0]} keys")
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    return _row_softmax((Q @ K.T + g[None, :]) / tau) @ V


def dense_edge_probability(Q: np.ndarray, K: np.ndarray) -> np.ndarray:
    """Row-stochastic matrix softmax_v(q_u . k_v)."""
    Q, K = np.asarray(Q, dtype=np.float64), np.asarray(K, dtype=np.float64)
    _check(Q, K)
    return _row_softmax(Q @ K.T)
