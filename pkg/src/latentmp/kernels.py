"""Positive random features for softmax-kernel estimation.

The feature map phi sends x in R^d to R^m via

    phi(x)_i = exp(-||x||^2 / 2) * exp(w_i . x) / sqrt(m),

with w_1..w_m i.i.d. standard normal rows. Inner products phi(x).phi(y) are
unbiased, strictly positive estimates of the softmax kernel exp(x.y), with
error shrinking as 1/sqrt(m).

Gaussians are drawn by inverse-CDF transform (scipy.special.ndtri) over a
PCG64 uniform stream, so projections reproduce bit-exactly from their seed
on any platform.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .seeds import STREAM_PROJECTION, stream_rng

_UNIFORM_EPS = np.finfo(np.float64).tiny


@dataclass(frozen=True)
class ProjectionMatrix:
    """An m x d matrix of i.i.d. standard-normal entries, fixed by its seed."""

    entries: np.ndarray
    seed: int

    @property
    def m(self) -> int:
        return self.entries.shape[0]

    @property
    def d(self) -> int:
        return self.entries.shape[1]


@dataclass(frozen=True)
class ErrorBoundParams:
    """Inputs of the kernel-approximation error bound."""

    r: float      # norm bound on the query/key vectors
    tau: float    # temperature
    m: float      # feature dimension
    eps: float    # failure probability

    def __post_init__(self):
        if self.r <= 0 or self.tau <= 0:
            raise ValueError(f"r and tau must be positive, got r={self.r}, tau={self.tau}")
        if self.m < 1:
            raise ValueError(f"m must be at least 1, got {self.m}")
        if not 0 < self.eps <= 1:
            raise ValueError(f"eps must lie in (0, 1], got {self.eps}")


def gaussian(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard normals via inverse CDF of a uniform stream."""
    u = rng.random(shape)
    np.clip(u, _UNIFORM_EPS, 1.0 - np.finfo(np.float64).epsneg, out=u)
    return ndtri(u)


def sample_projection(d: int, m: int, seed: int) -> ProjectionMatrix:
    """Draw the m x d random transformation for a PRF feature map."""
    if d < 1 or m < 1:
        raise ValueError(f"projection dims must be positive, got d={d}, m={m}")
    rng = stream_rng(seed, STREAM_PROJECTION)
    return ProjectionMatrix(entries=gaussian(rng, (m, d)), seed=seed)


def prf_map(x: np.ndarray, proj: ProjectionMatrix) -> np.ndarray:
    """Feature vector phi(x); every entry is strictly positive."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (proj.d,):
        raise ValueError(f"prf_map: input shape {x.shape} does not match projection d={proj.d}")
    return np.exp(proj.entries @ x - 0.5 * (x @ x)) / np.sqrt(proj.m)


def prf_features(X: np.ndarray, proj: ProjectionMatrix, shift: float | None = None) -> np.ndarray:
    """Row-wise phi over a batch, optionally stabilised.

    `shift` subtracts a constant from every exponent; it rescales all
    features by exp(-shift) uniformly, which cancels in the attention and
    edge-probability ratios. Defaults to the batch maximum of w_i . x.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != proj.d:
        raise ValueError(f"prf_features: input shape {X.shape} does not match projection d={proj.d}")
    wx = X @ proj.entries.T
    if shift is None:
        shift = float(wx.max()) if wx.size else 0.0
    sq = 0.5 * np.einsum("nd,nd->n", X, X)[:, None]
    return np.exp(wx - sq - shift) / np.sqrt(proj.m)


def softmax_kernel_estimate(x: np.ndarray, y: np.ndarray, proj: ProjectionMatrix) -> float:
    """phi(x).phi(y), the PRF estimate of exp(x.y)."""
    return float(prf_map(x, proj) @ prf_map(y, proj))


def theoretical_error_bound(p: ErrorBoundParams) -> float:
    """High-probability bound sqrt(exp(6r/tau) / (m eps)) on the estimate gap."""
    return float(np.sqrt(np.exp(6.0 * p.r / p.tau) / (p.m * p.eps)))
