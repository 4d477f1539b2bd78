"""Optimistic demand and profit objectives for independent products and leader-follower sets."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np

from .kernel_gp import GPPosterior

FULL_GRID = "full_grid"
SHARED_FOLLOWER_MARGIN = "shared_follower_margin"
DEFAULT_FULL_GRID_CAP = 6


class SearchCapacityError(RuntimeError):
    pass


@dataclass(frozen=True)
class ProductEconomics:
    product: Hashable
    cost: float
    alpha: float = 0.0

    def __post_init__(self):
        if not self.cost > 0:
            raise ValueError(f"cost of {self.product!r} must be positive, got {self.cost}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")


@dataclass(frozen=True)
class SetQuote:
    leader_margin: float
    follower_margins: tuple[float, ...]
    objective_value: float


def optimistic_demand(post: GPPosterior, beta_t: float) -> np.ndarray:
    if beta_t < 0:
        raise ValueError("beta_t must be nonnegative")
    return post.mean + beta_t * np.sqrt(post.variance)


def clamp_demand(d: np.ndarray) -> np.ndarray:
    return np.clip(d, 0.0, 1.0)


def independent_objective(econ: ProductEconomics, d_opt, n_hat: float, grid: Sequence[float]) -> np.ndarray:
    if n_hat < 0:
        raise ValueError("impression rate must be nonnegative")
    m = np.asarray(grid, dtype=float)
    return (m + econ.alpha) * econ.cost * clamp_demand(np.asarray(d_opt, dtype=float)) * n_hat


def follower_optimistic_demand(p_hat, leader_mean_at_ml, d_with, d_without) -> np.ndarray:
    """Mix the in-context and base optimistic demands of a follower.

    Broadcasting is supported: pass a column of leader means (one per leader
    margin) and rows of follower demands to get the ``M x M`` table.
    """
    p = float(np.clip(p_hat, 0.0, 1.0))
    mu = np.clip(leader_mean_at_ml, 0.0, 1.0)
    d_with = clamp_demand(np.asarray(d_with, dtype=float))
    d_without = clamp_demand(np.asarray(d_without, dtype=float))
    return p * mu * d_with + ((1.0 - p) + p * (1.0 - mu)) * d_without


@dataclass(frozen=True)
class ProductModel:
    """Everything needed to price one product on its own."""

    econ: ProductEconomics
    grid: tuple[float, ...]
    posterior: GPPosterior
    beta: float
    n_hat: float

    @property
    def d_opt(self) -> np.ndarray:
        return optimistic_demand(self.posterior, self.beta)

    @property
    def mean(self) -> np.ndarray:
        return np.clip(self.posterior.mean, 0.0, 1.0)

    def objective(self) -> np.ndarray:
        return independent_objective(self.econ, self.d_opt, self.n_hat, self.grid)

    def best_margin_index(self) -> int:
        if self.n_hat <= 0:
            # nothing to scale by yet: explore the least known margin
            return int(np.argmax(self.posterior.variance))
        return int(np.argmax(self.objective()))


@dataclass(frozen=True)
class FollowerModel:
    """A follower priced relative to one leader."""

    econ: ProductEconomics
    grid: tuple[float, ...]
    p_hat: float
    with_posterior: GPPosterior
    with_beta: float
    without_posterior: GPPosterior
    without_beta: float
    n_hat: float
    complete: bool = True

    def demand_table(self, leader: ProductModel) -> np.ndarray:
        """Optimistic demand indexed ``[leader margin, follower margin]``."""
        d_with = optimistic_demand(self.with_posterior, self.with_beta)
        d_without = optimistic_demand(self.without_posterior, self.without_beta)
        return follower_optimistic_demand(self.p_hat, leader.mean[:, None], d_with[None, :], d_without[None, :])

    def objective_table(self, leader: ProductModel) -> np.ndarray:
        m = np.asarray(self.grid, dtype=float)
        return (m[None, :] + self.econ.alpha) * self.econ.cost * self.demand_table(leader) * self.n_hat


def set_objective(leader: ProductModel, followers: Sequence[FollowerModel], margins: Sequence[float]) -> float:
    from .ingest import margin_index

    idx = [margin_index(leader.grid, m) for m in margins]
    if len(idx) != len(followers) + 1:
        raise ValueError("need one margin for the leader and one per follower")
    total = float(leader.objective()[idx[0]])
    for f, j in zip(followers, idx[1:]):
        total += float(f.objective_table(leader)[idx[0], j])
    return total


def joint_argmax(
    leader: ProductModel,
    followers: Sequence[FollowerModel],
    mode: str = FULL_GRID,
    cap: int = DEFAULT_FULL_GRID_CAP,
) -> SetQuote:
    """Best margin vector for a leader-follower set by grid enumeration.

    Ties go to the lowest leader margin, then the lowest follower margins in
    order (first maximum in row-major enumeration order).
    """
    grid = leader.grid
    M = len(grid)
    F = len(followers)
    base = leader.objective()
    tables = [f.objective_table(leader) for f in followers]
    if F == 0:
        j = int(np.argmax(base))
        return SetQuote(grid[j], (), float(base[j]))
    if mode == FULL_GRID:
        if F + 1 > cap:
            raise SearchCapacityError(
                f"full-grid search over {F + 1} products exceeds the cap of {cap}; "
                f"use mode={SHARED_FOLLOWER_MARGIN!r}"
            )
        total = base.reshape((M,) + (1,) * F).copy()
        for i, tab in enumerate(tables):
            shape = [1] * (F + 1)
            shape[0], shape[i + 1] = M, M
            total = total + tab.reshape(shape)
        flat = int(np.argmax(total))
        idx = np.unravel_index(flat, total.shape)
        return SetQuote(grid[idx[0]], tuple(grid[k] for k in idx[1:]), float(total[idx]))
    if mode == SHARED_FOLLOWER_MARGIN:
        total = base[:, None] + sum(tables)
        a, b = np.unravel_index(int(np.argmax(total)), total.shape)
        return SetQuote(grid[a], (grid[b],) * F, float(total[a, b]))
    raise ValueError(f"unknown search mode {mode!r}")


def brute_force_argmax(leader: ProductModel, followers: Sequence[FollowerModel]) -> SetQuote:
    """Reference enumeration via :func:`set_objective`; slow, for checking."""
    best = None
    for combo in itertools.product(leader.grid, repeat=len(followers) + 1):
        val = set_objective(leader, followers, combo)
        if best is None or val > best.objective_value:
            best = SetQuote(combo[0], tuple(combo[1:]), val)
    return best
