"""Collapse substitutable products into meta-products sharing a single margin."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from .ingest import MarginCounters, TransactionRecord

logger = logging.getLogger(__name__)


class DeclarationError(ValueError):
    pass


@dataclass(frozen=True)
class SubstitutabilityDeclaration:
    groups: tuple[frozenset, ...] = ()

    def __post_init__(self):
        groups = tuple(frozenset(g) for g in self.groups)
        object.__setattr__(self, "groups", groups)
        seen: dict = {}
        clashes = set()
        for g in groups:
            if not g:
                raise DeclarationError("substitutable groups must be nonempty")
            for p in g:
                if p in seen:
                    clashes.add(p)
                seen[p] = g
        if clashes:
            raise DeclarationError(f"products declared in more than one group: {sorted(map(str, clashes))}")


@dataclass(frozen=True)
class MetaProduct:
    meta_id: Hashable
    members: Mapping[Hashable, float]
    pooled_cost: float

    def __post_init__(self):
        if not self.members:
            raise DeclarationError(f"meta-product {self.meta_id!r} has no members")
        if not self.pooled_cost > 0:
            raise DeclarationError(f"meta-product {self.meta_id!r} needs a positive cost")


def pooled_cost(costs: Mapping[Hashable, float], impressions: Mapping[Hashable, float] | None = None) -> float:
    """Impression-weighted mean of member costs, uniform when nothing was shown."""
    ids = list(costs)
    c = np.array([costs[i] for i in ids], dtype=float)
    w = np.array([0.0 if impressions is None else impressions.get(i, 0.0) for i in ids], dtype=float)
    if w.sum() <= 0:
        return float(c.mean())
    return float(np.average(c, weights=w))


def build_meta_products(catalog: Mapping[Hashable, float], decl: SubstitutabilityDeclaration) -> list[MetaProduct]:
    """One meta-product per declared group plus a singleton per undeclared product.

    ``catalog`` maps raw product ids to acquisition costs.  Grouped meta-products
    are named ``meta:<a>+<b>+...``; singletons keep their raw id.
    """
    unknown = {p for g in decl.groups for p in g} - set(catalog)
    if unknown:
        raise DeclarationError(f"declared products not in the catalog: {sorted(map(str, unknown))}")
    out = []
    grouped = set()
    for g in decl.groups:
        members = {p: catalog[p] for p in sorted(g, key=str)}
        grouped |= g
        meta_id = "meta:" + "+".join(map(str, members))
        out.append(MetaProduct(meta_id=meta_id, members=members, pooled_cost=pooled_cost(members)))
    for p, c in catalog.items():
        if p not in grouped:
            out.append(MetaProduct(meta_id=p, members={p: c}, pooled_cost=float(c)))
    return out


def raw_to_meta(metas: Iterable[MetaProduct]) -> dict:
    return {raw: m.meta_id for m in metas for raw in m.members}


def pool_counters(member_counters: Sequence[MarginCounters]) -> MarginCounters:
    if not member_counters:
        raise ValueError("need at least one member")
    grid = member_counters[0].grid
    out = MarginCounters(grid)
    for c in member_counters:
        if c.grid != grid:
            raise ValueError(f"grid mismatch: {c.grid} vs {grid}")
        out.sales += c.sales
        out.impressions += c.impressions
    return out


def aggregate_records(records: Iterable[TransactionRecord], mapping: Mapping) -> list[TransactionRecord]:
    """Re-key raw-product records onto meta-products, summing rows that collide.

    Conditional rows must already be tagged against meta-product leaders
    (the simulator can tag against leader groups); rows whose leader lies in
    the follower's own meta-product are dropped.
    """
    acc: dict = {}
    for r in records:
        prod = mapping[r.product]
        leader = None if r.leader is None else mapping.get(r.leader, r.leader)
        if leader is not None and leader == prod:
            continue
        key = (r.round, prod, r.margin, r.context, leader)
        n, v = acc.get(key, (0, 0))
        acc[key] = (n + r.impressions, v + r.sales)
    return [TransactionRecord(k[0], k[1], k[2], n, v, k[3], k[4]) for k, (n, v) in acc.items()]


def log_cost_discrepancy(meta: MetaProduct, margin: float, member_sales: Mapping[Hashable, int]) -> float:
    """Gap between pooled-cost profit and the true member-level profit."""
    pooled = margin * meta.pooled_cost * sum(member_sales.values())
    actual = sum(margin * meta.members[p] * v for p, v in member_sales.items())
    gap = pooled - actual
    if gap:
        logger.debug("meta-product %r: pooled-cost profit off by %.4g", meta.meta_id, gap)
    return gap
