"""Round-by-round pricing loop: IPP baseline and the two complementarity-aware variants.

* ``ipp``     -- every product priced on its own GP demand model;
* ``copp_kg`` -- leader/follower sets fixed by a known graph, priced jointly;
* ``copp_ug`` -- the graph is mined from data every ``remine_every`` rounds.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from .demand_models import (
    DEFAULT_FULL_GRID_CAP,
    FULL_GRID,
    SHARED_FOLLOWER_MARGIN,
    FollowerModel,
    ProductEconomics,
    ProductModel,
    SearchCapacityError,
    joint_argmax,
)
from .ingest import CONCURRENCE_PRIOR, CounterStore, TransactionRecord
from .kernel_gp import GPConfig, KernelConfig, beta, posterior, select_lengthscale
from .relation_miner import Partition, ValueMatrix, build_value_matrix, solve_partition, solve_split

logger = logging.getLogger(__name__)

IPP = "ipp"
COPP_KG = "copp_kg"
COPP_UG = "copp_ug"
VARIANTS = (IPP, COPP_KG, COPP_UG)


@dataclass(frozen=True)
class PolicyConfig:
    variant: str = IPP
    known_graph: Partition | None = None
    remine_every: int = 1
    joint_search_mode: str = FULL_GRID
    gp: GPConfig = field(default_factory=GPConfig)
    kernel: KernelConfig | None = None
    alpha: float = 0.0
    penalty_fraction: float = 0.01
    split_cap: int = 10
    full_grid_cap: int = DEFAULT_FULL_GRID_CAP
    initial_partition: Partition | None = None
    lengthscale_candidates: tuple[float, ...] = ()

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.variant == COPP_KG and self.known_graph is None:
            raise ValueError("copp_kg needs known_graph")
        if self.remine_every < 1:
            raise ValueError("remine_every must be at least 1")
        if self.joint_search_mode not in (FULL_GRID, SHARED_FOLLOWER_MARGIN):
            raise ValueError(f"unknown joint_search_mode {self.joint_search_mode!r}")
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must lie in [0, 1]")
        if self.penalty_fraction < 0:
            raise ValueError("penalty_fraction must be nonnegative")


@dataclass
class EngineState:
    t: int
    store: CounterStore
    partition: Partition


@dataclass(frozen=True)
class MiningEpoch:
    t: int
    partition: Partition
    mined_objective: float
    joint_objective: float
    kept_previous: bool
    flagged: frozenset


class PricingEngine:
    def __init__(self, products: Sequence[Hashable], costs: Mapping | Sequence[float], grid: Sequence[float],
                 cfg: PolicyConfig):
        self.products = tuple(products)
        self.grid = tuple(float(g) for g in grid)
        self.cfg = cfg
        if not isinstance(costs, Mapping):
            costs = dict(zip(self.products, costs))
        self.econ = {p: ProductEconomics(p, float(costs[p]), cfg.alpha) for p in self.products}
        self.kernel = cfg.kernel or KernelConfig.for_grid(self.grid)

        if cfg.variant == COPP_KG:
            partition = cfg.known_graph
        elif cfg.variant == COPP_UG and cfg.initial_partition is not None:
            partition = cfg.initial_partition
        else:
            partition = Partition.independent(self.products)
        if partition.products != self.products:
            raise ValueError("partition products do not match the engine's products")

        tracked = None if cfg.variant == COPP_UG else {(f, l) for l, f in partition.edges}
        self.state = EngineState(0, CounterStore(self.grid, self.products, tracked), partition)
        self.mining_log: list[MiningEpoch] = []
        self._cache: dict = {}
        self._capacity_warned: set = set()

    # -- models -------------------------------------------------------------

    @property
    def t(self) -> int:
        return self.state.t

    @property
    def partition(self) -> Partition:
        return self.state.partition

    def _posterior(self, key, counters):
        if key not in self._cache:
            self._cache[key] = posterior(counters, self.kernel)
        return self._cache[key]

    def _beta(self, post) -> float:
        return beta(post.info_gain, self.kernel, self.cfg.gp)

    def product_model(self, p) -> ProductModel:
        store = self.state.store
        post = self._posterior(("u", p), store.unconditional[p])
        return ProductModel(self.econ[p], self.grid, post, self._beta(post), store.impression_rate(p).n_hat)

    def follower_model(self, f, l) -> FollowerModel:
        store = self.state.store
        n_hat = store.impression_rate(f).n_hat
        if not store.has_pair(f, l):
            post = self._posterior(("u", f), store.unconditional[f])
            b = self._beta(post)
            return FollowerModel(self.econ[f], self.grid, CONCURRENCE_PRIOR, post, b, post, b, n_hat, complete=False)
        w = self._posterior(("w", f, l), store.with_counters(f, l))
        wo = self._posterior(("wo", f, l), store.not_with_counters(f, l))
        p_hat = store.concurrence(l, f).p_hat
        return FollowerModel(self.econ[f], self.grid, p_hat, w, self._beta(w), wo, self._beta(wo), n_hat)

    def tracked_pairs(self):
        """(follower, leader) pairs to break down by leader context; None means all."""
        tracked = self.state.store.tracked
        return None if tracked is None else sorted(tracked)

    # -- decisions ----------------------------------------------------------

    def _quote(self, leader, followers):
        lm = self.product_model(leader)
        fms = [self.follower_model(f, leader) for f in followers]
        try:
            return joint_argmax(lm, fms, self.cfg.joint_search_mode, self.cfg.full_grid_cap)
        except SearchCapacityError:
            if leader not in self._capacity_warned:
                self._capacity_warned.add(leader)
                logger.warning("set led by %r too large for full grid, using a shared follower margin", leader)
            return joint_argmax(lm, fms, SHARED_FOLLOWER_MARGIN)

    def select_margins(self) -> np.ndarray:
        """Margin per product, in ``self.products`` order."""
        pos = {p: i for i, p in enumerate(self.products)}
        out = np.empty(len(self.products))
        done = set()
        if self.cfg.variant != IPP:
            for leader, followers in self.partition.sets.items():
                members = (leader,) + followers
                if any(self.state.store.impression_rate(p).n_hat <= 0 for p in members):
                    continue
                quote = self._quote(leader, followers)
                out[pos[leader]] = quote.leader_margin
                for f, m in zip(followers, quote.follower_margins):
                    out[pos[f]] = m
                done.update(members)
        for p in self.products:
            if p not in done:
                out[pos[p]] = self.grid[self.product_model(p).best_margin_index()]
        return out

    def observe(self, records: Iterable[TransactionRecord]) -> EngineState:
        self.state.store.ingest_many(records)
        self.state.t += 1
        self._cache.clear()
        if self.state.t % self.cfg.remine_every == 0:
            if self.cfg.lengthscale_candidates:
                tables = list(self.state.store.unconditional.values())
                self.kernel = select_lengthscale(tables, self.cfg.lengthscale_candidates, self.kernel)
                self._cache.clear()
            if self.cfg.variant == COPP_UG:
                self.remine()
        return self.state

    # -- mining -------------------------------------------------------------

    def value_matrix(self) -> ValueMatrix:
        models = {p: self.product_model(p) for p in self.products}
        diag = [float(np.max(m.objective())) for m in models.values()]
        penalty = self.cfg.penalty_fraction * float(np.mean(diag))
        pairs = {(f, l): self.follower_model(f, l) for l in self.products for f in self.products if f != l}
        return build_value_matrix(models, pairs, penalty, FULL_GRID)

    def joint_objective(self, partition: Partition) -> float:
        """Optimistic objective of a partition with each set's margins chosen jointly."""
        total = 0.0
        for leader, followers in partition.sets.items():
            total += self._quote(leader, followers).objective_value
        for p in partition.independents:
            total += float(np.max(self.product_model(p).objective()))
        return total

    def remine(self) -> MiningEpoch:
        V = self.value_matrix()
        if len(self.products) > self.cfg.split_cap:
            new = solve_split(V, self.cfg.split_cap)
        else:
            new = solve_partition(V)
        old = self.partition
        kept = new != old and new.objective - old.value(V) < V.penalty
        chosen = old if kept else new
        self.state.partition = chosen
        epoch = MiningEpoch(self.t, chosen, chosen.value(V), self.joint_objective(chosen), kept, V.flagged)
        self.mining_log.append(epoch)
        return epoch
