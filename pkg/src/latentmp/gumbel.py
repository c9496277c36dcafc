"""Gumbel(0,1) sampling and the Gumbel-Softmax relaxation.

Adding independent Gumbel noise to logits and taking a temperature-tau
softmax is a differentiable surrogate for sampling one category: as tau
shrinks the weight vector approaches the one-hot of argmax(logit + g), and
the argmax index is distributed as softmax(logits).
"""

from dataclasses import dataclass

import numpy as np

from .seeds import STREAM_GUMBEL, stream_rng

_CLAMP = np.finfo(np.float64).eps


@dataclass(frozen=True)
class GumbelDraws:
    """Gumbel(0,1) variates, reproducible from their seed."""

    values: np.ndarray
    seed: int


def gumbel_from_uniform(u: np.ndarray) -> np.ndarray:
    """-log(-log u), with u clamped away from {0, 1} to keep values finite."""
    u = np.clip(u, _CLAMP, 1.0 - _CLAMP)
    return -np.log(-np.log(u))


def sample_gumbel(count: int, seed: int) -> GumbelDraws:
    if count < 1:
        raise ValueError(f"count must be at least 1, got {count}")
    rng = stream_rng(seed, STREAM_GUMBEL)
    return GumbelDraws(values=gumbel_from_uniform(rng.random(count)), seed=seed)


def gumbel_softmax_weights(logits: np.ndarray, g: GumbelDraws | np.ndarray, tau: float) -> np.ndarray:
    """softmax((logits + g) / tau); lies in the open probability simplex."""
    logits = np.asarray(logits, dtype=np.float64)
    values = g.values if isinstance(g, GumbelDraws) else np.asarray(g, dtype=np.float64)
    if logits.shape != values.shape:
        raise ValueError(f"logits shape {logits.shape} does not match draws shape {values.shape}")
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits contain non-finite entries")
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    z = (logits + values) / tau
    z -= z.max()
    e = np.exp(z)
    return e / e.sum()


def argmax_distribution_check(logits: np.ndarray, tau: float, trials: int, seed: int) -> np.ndarray:
    """Empirical frequency that each index wins argmax(logit + g).

    The temperature does not change the argmax, so the frequencies estimate
    softmax(logits) regardless of tau.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if trials < 1:
        raise ValueError(f"trials must be at least 1, got {trials}")
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    rng = stream_rng(seed, STREAM_GUMBEL)
    counts = np.zeros(logits.size, dtype=np.int64)
    chunk = 65536
    done = 0
    while done < trials:
        n = min(chunk, trials - done)
        g = gumbel_from_uniform(rng.random((n, logits.size)))
        winners = np.argmax(logits[None, :] + g, axis=1)
        counts += np.bincount(winners, minlength=logits.size)
        done += n
    return counts / trials
