"""Squared-exponential kernel and heteroscedastic GP posteriors over a margin grid.

Demand is observed as Bernoulli sales, so every impression is treated as a
sample with variance proxy ``sigma2 = 1/4``.  A batch of ``n`` impressions with
empirical demand ``y`` is equivalent to a single observation of ``y`` with noise
``sigma2 / n``; aggregating all impressions that share a margin keeps the kernel
matrix at most ``M x M`` regardless of how long the history is.
"""

from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import solve_triangular

logger = logging.getLogger(__name__)

BERNOULLI_VARIANCE_PROXY = 0.25


@dataclass(frozen=True)
class KernelConfig:
    lengthscale: float = 0.4
    signal_variance: float = 1.0
    noise_variance_proxy: float = BERNOULLI_VARIANCE_PROXY

    def __post_init__(self):
        if not self.lengthscale > 0:
            raise ValueError(f"lengthscale must be positive, got {self.lengthscale}")
        if not self.signal_variance > 0:
            raise ValueError(f"signal_variance must be positive, got {self.signal_variance}")
        if not self.noise_variance_proxy > 0:
            raise ValueError(f"noise_variance_proxy must be positive, got {self.noise_variance_proxy}")

    @classmethod
    def for_grid(cls, grid: Sequence[float], **kwargs) -> "KernelConfig":
        """Default lengthscale: half the span of the grid."""
        span = float(max(grid) - min(grid))
        return cls(lengthscale=span / 2 if span > 0 else 1.0, **kwargs)


@dataclass(frozen=True)
class GPConfig:
    rkhs_bound: float = 1.0
    confidence_delta: float = 0.1

    def __post_init__(self):
        if not self.rkhs_bound > 0:
            raise ValueError(f"rkhs_bound must be positive, got {self.rkhs_bound}")
        if not 0 < self.confidence_delta < 1:
            raise ValueError(f"confidence_delta must lie in (0, 1), got {self.confidence_delta}")


@dataclass(frozen=True)
class GPPosterior:
    grid: tuple[float, ...]
    mean: np.ndarray
    variance: np.ndarray
    info_gain: float
    active_mask: np.ndarray

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)

    @property
    def has_data(self) -> bool:
        return bool(self.active_mask.any())


def se_kernel(m1: float, m2: float, cfg: KernelConfig) -> float:
    return cfg.signal_variance * math.exp(-((m1 - m2) ** 2) / (2.0 * cfg.lengthscale ** 2))


def kernel_matrix(xs: Sequence[float], ys: Sequence[float], cfg: KernelConfig) -> np.ndarray:
    a = np.asarray(xs, dtype=float)[:, None]
    b = np.asarray(ys, dtype=float)[None, :]
    return cfg.signal_variance * np.exp(-((a - b) ** 2) / (2.0 * cfg.lengthscale ** 2))


@functools.lru_cache(maxsize=256)
def _grid_kernel(grid: tuple[float, ...], cfg: KernelConfig) -> np.ndarray:
    K = kernel_matrix(grid, grid, cfg)
    K.setflags(write=False)
    return K


def prior(grid: Sequence[float], cfg: KernelConfig) -> GPPosterior:
    grid = tuple(float(g) for g in grid)
    M = len(grid)
    return GPPosterior(
        grid=grid,
        mean=np.zeros(M),
        variance=np.full(M, cfg.signal_variance),
        info_gain=0.0,
        active_mask=np.zeros(M, dtype=bool),
    )


def _clamp_variance(var: np.ndarray) -> np.ndarray:
    lowest = float(var.min()) if var.size else 0.0
    if lowest < -1e-10:
        logger.debug("clamping posterior variance %.3e to zero", lowest)
    return np.maximum(var, 0.0)


def _fit_predict(K_train, noise, y, K_cross, prior_var):
    """Shared solve for ``K_train + diag(noise)``; returns mean, variance, info gain."""
    A = K_train + np.diag(noise)
    L = np.linalg.cholesky(A)
    alpha = solve_triangular(L, y, lower=True, check_finite=False)
    V = solve_triangular(L, K_cross, lower=True, check_finite=False)
    mean = V.T @ alpha
    var = _clamp_variance(prior_var - np.einsum("ij,ij->j", V, V))
    # 0.5 * logdet(I + D K D) with D = diag(noise)^(-1/2)
    d = 1.0 / np.sqrt(noise)
    B = np.eye(len(noise)) + d[:, None] * K_train * d[None, :]
    info_gain = float(np.sum(np.log(np.diag(np.linalg.cholesky(B)))))
    return mean, var, info_gain


def posterior(counters, cfg: KernelConfig) -> GPPosterior:
    """Posterior over the whole grid from margin-aggregated counters.

    ``counters`` needs ``grid``, ``sales`` and ``impressions`` (see
    :class:`copp.ingest.MarginCounters`).  Margins with zero impressions are
    left out of the training set and predicted as test points.
    """
    return posterior_from_arrays(counters.grid, counters.impressions, counters.sales, cfg)


def posterior_from_arrays(grid, impressions, sales, cfg: KernelConfig) -> GPPosterior:
    grid = tuple(float(g) for g in grid)
    n = np.asarray(impressions, dtype=float)
    v = np.asarray(sales, dtype=float)
    active = n > 0
    if not active.any():
        return prior(grid, cfg)
    K = _grid_kernel(grid, cfg)
    idx = np.flatnonzero(active)
    y = v[idx] / n[idx]
    noise = cfg.noise_variance_proxy / n[idx]
    mean, var, gamma = _fit_predict(K[np.ix_(idx, idx)], noise, y, K[idx, :], np.diag(K).copy())
    return GPPosterior(grid=grid, mean=mean, variance=var, info_gain=gamma, active_mask=active)


def per_round_posterior(grid, history: Iterable[tuple[float, int, int]], cfg: KernelConfig) -> GPPosterior:
    """Posterior with one training point per round, ``(margin, impressions, sales)``.

    This is the unaggregated formulation: the kernel matrix grows with the
    number of rounds.  Rounds with zero impressions carry no information and
    are skipped.
    """
    grid = tuple(float(g) for g in grid)
    rows = [(float(m), n, s) for m, n, s in history if n > 0]
    M = len(grid)
    if not rows:
        return prior(grid, cfg)
    xs = np.array([r[0] for r in rows])
    n = np.array([r[1] for r in rows], dtype=float)
    y = np.array([r[2] for r in rows], dtype=float) / n
    noise = cfg.noise_variance_proxy / n
    K_train = kernel_matrix(xs, xs, cfg)
    K_cross = kernel_matrix(xs, grid, cfg)
    prior_var = np.full(M, cfg.signal_variance)
    mean, var, gamma = _fit_predict(K_train, noise, y, K_cross, prior_var)
    active = np.array([any(math.isclose(g, x) for x in xs) for g in grid])
    return GPPosterior(grid=grid, mean=mean, variance=var, info_gain=gamma, active_mask=active)


def beta(t_info_gain: float, cfg_k: KernelConfig, cfg_gp: GPConfig) -> float:
    if t_info_gain < 0:
        raise ValueError(f"information gain must be nonnegative, got {t_info_gain}")
    return cfg_gp.rkhs_bound + math.sqrt(
        2.0 * cfg_k.noise_variance_proxy * (t_info_gain + 1.0 + math.log(1.0 / cfg_gp.confidence_delta))
    )


class InfoGainTracker:
    """Accumulates information gain one batch at a time.

    Uses the chain rule ``gamma_T = 1/2 sum_t log(1 + var_{t-1}(x_t) / s_t)``
    where ``s_t = sigma2 / n_t`` is the batch noise, so it never forms the
    full log-determinant.
    """

    def __init__(self, grid: Sequence[float], cfg: KernelConfig):
        self.grid = tuple(float(g) for g in grid)
        self.cfg = cfg
        self.impressions = np.zeros(len(self.grid))
        self.info_gain = 0.0

    def add(self, margin_index: int, impressions: int) -> float:
        if impressions <= 0:
            return self.info_gain
        # posterior variance does not depend on the observed demand values
        post = posterior_from_arrays(self.grid, self.impressions, np.zeros_like(self.impressions), self.cfg)
        s = self.cfg.noise_variance_proxy / impressions
        self.info_gain += 0.5 * math.log1p(post.variance[margin_index] / s)
        self.impressions[margin_index] += impressions
        return self.info_gain


def log_marginal_likelihood(counters, cfg: KernelConfig) -> float:
    n = np.asarray(counters.impressions, dtype=float)
    idx = np.flatnonzero(n > 0)
    if idx.size == 0:
        return 0.0
    grid = tuple(float(g) for g in counters.grid)
    K = _grid_kernel(grid, cfg)[np.ix_(idx, idx)]
    y = np.asarray(counters.sales, dtype=float)[idx] / n[idx]
    A = K + np.diag(cfg.noise_variance_proxy / n[idx])
    L = np.linalg.cholesky(A)
    alpha = solve_triangular(L, y, lower=True, check_finite=False)
    return float(-0.5 * alpha @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * idx.size * math.log(2 * math.pi))


def select_lengthscale(tables, candidates: Sequence[float], cfg: KernelConfig) -> KernelConfig:
    """Coarse grid search over ``candidates`` maximizing the summed marginal likelihood."""
    best, best_score = cfg, -math.inf
    for ell in candidates:
        trial = KernelConfig(ell, cfg.signal_variance, cfg.noise_variance_proxy)
        score = sum(log_marginal_likelihood(t, trial) for t in tables)
        if score > best_score:
            best, best_score = trial, score
    return best
