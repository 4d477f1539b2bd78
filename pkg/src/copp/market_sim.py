"""Ground-truth market: monotone demand curves, Binomial sales, leader->follower boosts.

Each round ``n`` customers are shown every product.  Customer ``c`` buys a
non-follower ``l`` with probability ``d_l(m_l)``.  For a follower ``f`` of
``l``, a customer who bought ``l`` sees ``f`` in that context with probability
``p_bar`` and then buys with probability ``min(1, boost * d_f(m_f))``; every
other impression of ``f`` converts at the base ``d_f(m_f)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ingest import TransactionRecord

DEFAULT_GRID = (0.1, 0.3, 0.5, 0.7, 0.9)
INDEPENDENT = "independent"
COMPLEMENTARY = "complementary"


@dataclass(frozen=True)
class EnvSpec:
    grid: tuple[float, ...]
    demands: np.ndarray  # (P, M)
    costs: np.ndarray  # (P,)
    edges: tuple[tuple[int, int], ...] = ()  # (leader, follower)
    boost: float = 1.0
    concurrence: float = 1.0
    impressions_per_round: int = 100
    seed: int = 0

    def __post_init__(self):
        d = np.asarray(self.demands, dtype=float)
        c = np.asarray(self.costs, dtype=float)
        object.__setattr__(self, "demands", d)
        object.__setattr__(self, "costs", c)
        object.__setattr__(self, "grid", tuple(float(g) for g in self.grid))
        object.__setattr__(self, "edges", tuple((int(a), int(b)) for a, b in self.edges))
        P, M = d.shape
        if M != len(self.grid) or c.shape != (P,):
            raise ValueError("demand/cost shapes do not match the grid and product count")
        if np.any(d < 0) or np.any(d > 1):
            raise ValueError("demands must lie in [0, 1]")
        if np.any(np.diff(d, axis=1) > 1e-12):
            raise ValueError("demand curves must be nonincreasing in the margin")
        if np.any(c <= 0):
            raise ValueError("costs must be positive")
        if self.boost < 1:
            raise ValueError("boost must be at least 1")
        if not 0 <= self.concurrence <= 1:
            raise ValueError("concurrence must lie in [0, 1]")
        if self.impressions_per_round < 1:
            raise ValueError("impressions_per_round must be positive")
        leaders = {a for a, _ in self.edges}
        followers = [b for _, b in self.edges]
        if len(set(followers)) != len(followers):
            raise ValueError("a follower can have only one leader")
        if leaders & set(followers):
            raise ValueError("followers cannot lead")

    @property
    def n_products(self) -> int:
        return self.demands.shape[0]

    @property
    def products(self) -> tuple[int, ...]:
        return tuple(range(self.n_products))

    @property
    def leader_of(self) -> dict:
        return {f: l for l, f in self.edges}

    def sets(self) -> list[tuple[int, tuple[int, ...]]]:
        """Independent pricing units: (leader, followers) with products alone as (p, ())."""
        kids: dict = {}
        for l, f in self.edges:
            kids.setdefault(l, []).append(f)
        fol = set(self.leader_of)
        return [(p, tuple(sorted(kids.get(p, ())))) for p in self.products if p not in fol]


def generate_env(
    n_products: int,
    seed: int,
    regime: str = INDEPENDENT,
    boost: float = 1.0,
    n_edges: int | None = None,
    max_followers: int = 2,
    grid: Sequence[float] = DEFAULT_GRID,
    impressions_per_round: int = 100,
    demand_band: tuple[float, float] = (0.1, 0.9),
    cost_range: tuple[float, float] = (1.0, 10.0),
    concurrence: float = 1.0,
) -> EnvSpec:
    """Random environment: sorted uniform demand draws and, for the complementary
    regime, a leader/follower forest with ``n_edges`` edges (default ``P // 2``)."""
    if n_products < 1:
        raise ValueError("need at least one product")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xE17]))
    M = len(grid)
    lo, hi = demand_band
    demands = -np.sort(-rng.uniform(lo, hi, size=(n_products, M)), axis=1)
    costs = rng.uniform(*cost_range, size=n_products)
    edges: list = []
    if regime == COMPLEMENTARY:
        edges = _random_forest(rng, n_products, n_products // 2 if n_edges is None else n_edges, max_followers)
    elif regime != INDEPENDENT:
        raise ValueError(f"unknown regime {regime!r}")
    return EnvSpec(
        grid=tuple(grid),
        demands=demands,
        costs=costs,
        edges=tuple(edges),
        boost=boost if regime == COMPLEMENTARY else 1.0,
        concurrence=concurrence,
        impressions_per_round=impressions_per_round,
        seed=int(seed),
    )


def _random_forest(rng, P: int, n_edges: int, max_followers: int) -> list[tuple[int, int]]:
    if n_edges > P - 1:
        raise ValueError(f"cannot place {n_edges} edges among {P} products")
    order = list(rng.permutation(P))
    leaders: dict = {}
    edges = []
    while len(edges) < n_edges:
        open_leaders = [l for l, fs in leaders.items() if len(fs) < max_followers]
        spare = [p for p in order if p not in leaders and all(p != f for _, f in edges)]
        new_leader_possible = len(spare) >= 2
        if open_leaders and (not new_leader_possible or rng.random() < 0.5):
            l = open_leaders[int(rng.integers(len(open_leaders)))]
        elif new_leader_possible:
            l = spare.pop(0)
            leaders[l] = []
        else:
            raise ValueError("could not build the requested forest; raise max_followers")
        spare = [p for p in order if p not in leaders and all(p != f for _, f in edges)]
        f = spare[0]
        leaders[l].append(f)
        edges.append((int(l), int(f)))
    return sorted(edges)


# -- simulation ---------------------------------------------------------------


@dataclass
class RoundOutcome:
    round: int
    margins: np.ndarray
    impressions: np.ndarray
    sales: np.ndarray
    profit: np.ndarray
    records: list = field(default_factory=list)

    @property
    def total_profit(self) -> float:
        return float(self.profit.sum())


def round_rng(seed: int, trial: int, round_: int) -> np.random.Generator:
    """Counter-based stream for one (seed, trial, round) cell."""
    ss = np.random.SeedSequence([int(seed), int(trial), int(round_)])
    return np.random.Generator(np.random.Philox(ss))


def margin_indices(env: EnvSpec, margins: Sequence[float]) -> np.ndarray:
    g = np.asarray(env.grid)
    m = np.asarray(margins, dtype=float)
    idx = np.abs(m[:, None] - g[None, :]).argmin(axis=1)
    if not np.allclose(g[idx], m, rtol=0, atol=1e-12):
        raise ValueError(f"margins {tuple(m)} are not all on the grid")
    return idx


def simulate_round(
    env: EnvSpec,
    margins: Sequence[float],
    rng: np.random.Generator,
    round_: int = 0,
    tag_pairs=None,
) -> RoundOutcome:
    """One round of ``impressions_per_round`` customers.

    ``tag_pairs`` lists the ``(follower, leader)`` pairs whose impressions are
    broken down by leader context in the emitted records; a leader entry may be
    a tuple of products (a group, present if any member was bought), in which
    case the tuple is written as the record's leader.  ``None`` tags every
    ordered pair.  Tagging never changes the random draws.
    """
    P = env.n_products
    n = env.impressions_per_round
    idx = margin_indices(env, margins)
    m = np.asarray(env.grid)[idx]
    base = env.demands[np.arange(P), idx]

    u = rng.random((n, P))
    ctx_draw = rng.random((n, P, P)) if env.concurrence < 1 else None

    bought = np.zeros((n, P), dtype=bool)
    lead = env.leader_of
    for p in range(P):
        if p not in lead:
            bought[:, p] = u[:, p] < base[p]

    def context(f, l_cols):
        has_l = bought[:, l_cols].any(axis=1) if isinstance(l_cols, list) else bought[:, l_cols]
        if ctx_draw is None:
            return has_l, has_l
        first = l_cols[0] if isinstance(l_cols, list) else l_cols
        return has_l, has_l & (ctx_draw[:, f, first] < env.concurrence)

    for f, l in lead.items():
        _, seen = context(f, l)
        p_buy = np.where(seen, min(1.0, env.boost * base[f]), base[f])
        bought[:, f] = u[:, f] < p_buy

    sales = bought.sum(axis=0)
    imps = np.full(P, n)
    profit = m * env.costs * sales
    records = [TransactionRecord(round_, p, float(m[p]), n, int(sales[p])) for p in range(P)]

    if tag_pairs is None:
        tag_pairs = [(f, l) for f in range(P) for l in range(P) if f != l]
    for f, l in tag_pairs:
        cols = list(l) if isinstance(l, tuple) else int(l)
        has_l, seen = context(f, cols)
        w = int(seen.sum())
        wo = int(has_l.sum()) - w
        if w:
            records.append(TransactionRecord(round_, f, float(m[f]), w, int(bought[seen, f].sum()), "with", l))
        if wo:
            mask = has_l & ~seen
            records.append(TransactionRecord(round_, f, float(m[f]), wo, int(bought[mask, f].sum()), "without", l))
    return RoundOutcome(round_, m, imps, sales, profit, records)


# -- expectations and optima --------------------------------------------------


def expected_demand(env: EnvSpec, margins: Sequence[float]) -> np.ndarray:
    idx = margin_indices(env, margins)
    base = env.demands[np.arange(env.n_products), idx]
    d = base.copy()
    for f, l in env.leader_of.items():
        q = env.concurrence * base[l]
        d[f] = q * min(1.0, env.boost * base[f]) + (1 - q) * base[f]
    return d


def expected_profit(env: EnvSpec, margins: Sequence[float]) -> float:
    m = np.asarray(env.grid)[margin_indices(env, margins)]
    return float(np.sum(m * env.costs * env.impressions_per_round * expected_demand(env, margins)))


def _set_actions(env: EnvSpec, leader: int, followers: tuple):
    return list(itertools.product(range(len(env.grid)), repeat=len(followers) + 1))


def exact_optimum(env: EnvSpec) -> tuple[np.ndarray, float]:
    """Exhaustive expected-profit maximization, one pricing unit at a time."""
    g = np.asarray(env.grid)
    best_m = np.zeros(env.n_products)
    total = 0.0
    for leader, followers in env.sets():
        members = (leader,) + followers
        best = (-math.inf, None)
        for combo in _set_actions(env, leader, followers):
            margins = g[np.zeros(env.n_products, dtype=int)].copy()
            for p, j in zip(members, combo):
                margins[p] = g[j]
            val = _unit_expected_profit(env, leader, followers, margins)
            if val > best[0] + 1e-12:
                best = (val, margins[list(members)])
        best_m[list(members)] = best[1]
        total += best[0]
    return best_m, total


def _unit_expected_profit(env, leader, followers, margins) -> float:
    n = env.impressions_per_round
    d = expected_demand(env, margins)
    members = (leader,) + tuple(followers)
    return float(sum(margins[p] * env.costs[p] * n * d[p] for p in members))


def independent_optimum(env: EnvSpec) -> np.ndarray:
    """Margins a product-by-product learner settles on.

    Non-followers maximize their own profit; followers best-respond to the
    demand they see under their leader's independently chosen margin.
    """
    g = np.asarray(env.grid)
    m = np.full(env.n_products, g[0])
    lead = env.leader_of
    for p in env.products:
        if p not in lead:
            m[p] = g[int(np.argmax(g * env.demands[p]))]
    for f, l in lead.items():
        vals = []
        for j in range(len(g)):
            trial = m.copy()
            trial[f] = g[j]
            vals.append(g[j] * expected_demand(env, trial)[f])
        m[f] = g[int(np.argmax(vals))]
    return m


@dataclass(frozen=True)
class OptimumEstimate:
    margins: np.ndarray
    value: float
    std_error: float


def monte_carlo_optimum(env: EnvSpec, samples_per_action: int, seed: int = 0) -> OptimumEstimate:
    """Per-unit enumeration with simulated profit averaged over ``samples_per_action`` rounds.

    Sales are drawn from their exact round-level law: leader sales
    ``Binomial(n, d_l)``, in-context follower impressions
    ``Binomial(v_l, p_bar)``, then Binomial sales in each context.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(env.seed), 0x0B7])))
    g = np.asarray(env.grid)
    n = env.impressions_per_round
    S = samples_per_action
    best_m = np.zeros(env.n_products)
    value = 0.0
    var = 0.0
    for leader, followers in env.sets():
        best = (-math.inf, None, 0.0)
        for combo in _set_actions(env, leader, followers):
            jl = combo[0]
            v_l = rng.binomial(n, env.demands[leader, jl], size=S)
            prof = g[jl] * env.costs[leader] * v_l
            for f, jf in zip(followers, combo[1:]):
                d = env.demands[f, jf]
                w = rng.binomial(v_l, env.concurrence)
                v_f = rng.binomial(w, min(1.0, env.boost * d)) + rng.binomial(n - w, d)
                prof = prof + g[jf] * env.costs[f] * v_f
            mean = float(prof.mean())
            if mean > best[0]:
                best = (mean, combo, float(prof.var(ddof=1) / S) if S > 1 else 0.0)
        for p, j in zip((leader,) + followers, best[1]):
            best_m[p] = g[j]
        value += best[0]
        var += best[2]
    return OptimumEstimate(best_m, value, math.sqrt(var))
