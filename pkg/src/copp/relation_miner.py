"""Leader/follower structure mining as a small binary program.

``V[i, j]`` (``i != j``) is the extra optimistic profit of letting ``i`` lead
``j``; ``V[i, i]`` is the profit of ``i`` priced alone.  A partition picks
``x[i, j] = 1`` for "i leads j" (``x[i, i] = 1`` for leaders and
independents) and ``z[i] = 0`` for leaders, maximizing ``sum(V * x)``.

For a fixed leader set the program decouples by column: every non-leader
simply takes its best entry among the leaders and itself.  The exact solver
below branches on ``z`` and evaluates leaves that way.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Hashable, Mapping, Sequence

import numpy as np

from .demand_models import FULL_GRID, FollowerModel, ProductModel, joint_argmax

logger = logging.getLogger(__name__)

EXHAUSTIVE_CAP = 12


class CapacityError(RuntimeError):
    pass


class InfeasiblePartition(ValueError):
    pass


@dataclass(frozen=True)
class ValueMatrix:
    products: tuple
    values: np.ndarray
    penalty: float = 0.0
    flagged: frozenset = frozenset()

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        P = len(self.products)
        if v.shape != (P, P):
            raise ValueError(f"value matrix must be {P}x{P}, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("value matrix entries must be finite")
        if self.penalty < 0:
            raise ValueError("penalty must be nonnegative")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "products", tuple(self.products))

    @property
    def size(self) -> int:
        return len(self.products)

    def sub(self, indices: Sequence[int]) -> "ValueMatrix":
        idx = list(indices)
        prods = tuple(self.products[i] for i in idx)
        flagged = frozenset(p for p in self.flagged if p[0] in prods and p[1] in prods)
        return ValueMatrix(prods, self.values[np.ix_(idx, idx)], self.penalty, flagged)


@dataclass(frozen=True)
class Partition:
    products: tuple
    x: np.ndarray
    z: np.ndarray
    objective: float | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "products", tuple(self.products))
        object.__setattr__(self, "x", np.asarray(self.x, dtype=np.int8))
        object.__setattr__(self, "z", np.asarray(self.z, dtype=np.int8))

    def __eq__(self, other):
        if not isinstance(other, Partition):
            return NotImplemented
        return self.products == other.products and np.array_equal(self.x, other.x) and np.array_equal(self.z, other.z)

    __hash__ = None

    @classmethod
    def from_sets(cls, products: Sequence, sets: Mapping[Hashable, Sequence[Hashable]]) -> "Partition":
        products = tuple(products)
        pos = {p: i for i, p in enumerate(products)}
        P = len(products)
        x = np.zeros((P, P), dtype=np.int8)
        z = np.ones(P, dtype=np.int8)
        for leader, followers in sets.items():
            if not followers:
                continue
            i = pos[leader]
            z[i] = 0
            x[i, i] = 1
            for f in followers:
                x[i, pos[f]] = 1
        for j in range(P):
            if z[j] == 1 and x[:, j].sum() == 0:
                x[j, j] = 1
        part = cls(products, x, z)
        check_feasible(part)
        return part

    @classmethod
    def independent(cls, products: Sequence) -> "Partition":
        P = len(products)
        return cls(tuple(products), np.eye(P, dtype=np.int8), np.ones(P, dtype=np.int8))

    @property
    def sets(self) -> dict:
        """Leader -> tuple of followers, in product order."""
        out = {}
        for i, p in enumerate(self.products):
            if self.z[i] == 0:
                out[p] = tuple(self.products[j] for j in range(len(self.products)) if j != i and self.x[i, j])
        return out

    @property
    def leaders(self) -> tuple:
        return tuple(p for i, p in enumerate(self.products) if self.z[i] == 0)

    @property
    def followers(self) -> tuple:
        P = len(self.products)
        return tuple(
            p for i, p in enumerate(self.products) if self.z[i] == 1 and any(self.x[j, i] for j in range(P) if j != i)
        )

    @property
    def independents(self) -> tuple:
        return tuple(p for i, p in enumerate(self.products) if self.z[i] == 1 and self.x[i, i] == 1)

    @property
    def edges(self) -> frozenset:
        return frozenset((l, f) for l, fs in self.sets.items() for f in fs)

    def leader_of(self, product) -> Hashable | None:
        for l, fs in self.sets.items():
            if product in fs:
                return l
        return None

    def value(self, V: ValueMatrix) -> float:
        pos = {p: i for i, p in enumerate(V.products)}
        idx = [pos[p] for p in self.products]
        return float(np.sum(V.values[np.ix_(idx, idx)] * self.x))

    def report(self) -> str:
        lines = [f"{l}: {','.join(map(str, fs))}" for l, fs in self.sets.items()]
        lines.append("independent: " + ",".join(map(str, self.independents)))
        return "\n".join(lines) + "\n"


def parse_report(text: str, products: Sequence) -> Partition:
    lookup = {str(p): p for p in products}
    sets = {}
    for line in text.strip().splitlines():
        key, _, rest = line.partition(":")
        names = [s.strip() for s in rest.split(",") if s.strip()]
        if key.strip() == "independent":
            continue
        sets[lookup[key.strip()]] = [lookup[n] for n in names]
    return Partition.from_sets(products, sets)


def check_feasible(part: Partition) -> None:
    """Raise :class:`InfeasiblePartition` unless every leader/follower constraint holds."""
    x, z = part.x, part.z
    P = len(part.products)
    if x.shape != (P, P) or z.shape != (P,):
        raise InfeasiblePartition("shape mismatch")
    if not np.isin(x, (0, 1)).all() or not np.isin(z, (0, 1)).all():
        raise InfeasiblePartition("x and z must be binary")
    off = x * (1 - np.eye(P, dtype=np.int8))
    for i in range(P):
        out_deg = int(off[i].sum())
        in_deg = int(off[:, i].sum())
        name = part.products[i]
        if z[i] == 0:
            if out_deg < 1:
                raise InfeasiblePartition(f"leader {name!r} has no follower")
            if in_deg != 0:
                raise InfeasiblePartition(f"leader {name!r} also follows another product")
            if x[i, i] != 1:
                raise InfeasiblePartition(f"leader {name!r} must keep its own value")
        else:
            if int(x[:, i].sum()) != 1:
                raise InfeasiblePartition(f"product {name!r} must be assigned exactly once")
            if out_deg != 0:
                raise InfeasiblePartition(f"non-leader {name!r} leads another product")


def _leaf(v: np.ndarray, leaders: Sequence[int]):
    """Best assignment for a fixed leader set, or None when a leader ends up alone.

    Ties inside a column go to the highest row index (this gives the
    lexicographically smallest ``x``), except that a tied leader that would
    otherwise be left without followers takes the column.
    """
    P = v.shape[0]
    lead = set(leaders)
    x = np.zeros((P, P), dtype=np.int8)
    total = 0.0
    tied: dict = {}
    for j in range(P):
        if j in lead:
            x[j, j] = 1
            total += v[j, j]
            continue
        cands = sorted(lead | {j})
        best = max(v[i, j] for i in cands)
        winners = [i for i in cands if v[i, j] == best]
        x[winners[-1], j] = 1
        tied[j] = winners
        total += best
    for l in leaders:
        if x[l].sum() - 1 >= 1:
            continue
        for j, winners in tied.items():
            cur = int(np.flatnonzero(x[:, j])[0])
            donor_ok = cur == j or x[cur].sum() - 1 >= 2
            if l in winners and donor_ok:
                x[cur, j] = 0
                x[l, j] = 1
                break
        else:
            return None
    z = np.ones(P, dtype=np.int8)
    z[list(leaders)] = 0
    return total, x, z


def _better(val, z, best_val, best_z) -> bool:
    if best_val is None or val > best_val:
        return True
    return val == best_val and tuple(z) < tuple(best_z)


def solve_partition(V: ValueMatrix) -> Partition:
    """Exact branch-and-bound over leader indicators.

    Bound: every column takes its best entry among rows that may still lead
    (decided leaders, undecided products) plus the diagonal.
    """
    v = V.values
    P = V.size
    if P == 0:
        return Partition((), np.zeros((0, 0)), np.zeros(0))
    state = {"val": None, "x": None, "z": None}
    status = np.full(P, -1)  # -1 undecided, 0 leader, 1 not leader

    def bound() -> float:
        can_lead = status != 1
        total = 0.0
        for j in range(P):
            rows = can_lead.copy()
            rows[j] = True
            if status[j] == 0:
                total += v[j, j]
            else:
                total += v[rows, j].max()
        return total

    def visit(k: int) -> None:
        if state["val"] is not None and bound() < state["val"]:
            return
        if k == P:
            res = _leaf(v, [i for i in range(P) if status[i] == 0])
            if res is not None and _better(res[0], res[2], state["val"], state["z"]):
                state["val"], state["x"], state["z"] = res
            return
        for choice in (0, 1):
            status[k] = choice
            visit(k + 1)
        status[k] = -1

    visit(0)
    part = Partition(V.products, state["x"], state["z"], objective=float(state["val"]))
    check_feasible(part)
    return part


def exhaustive_oracle(V: ValueMatrix) -> Partition:
    P = V.size
    if P > EXHAUSTIVE_CAP:
        raise CapacityError(f"exhaustive enumeration is capped at {EXHAUSTIVE_CAP} products, got {P}")
    best_val = best_x = best_z = None
    for bits in itertools.product((0, 1), repeat=P):
        leaders = [i for i in range(P) if bits[i] == 0]
        res = _leaf(V.values, leaders)
        if res is None:
            continue
        if _better(res[0], res[2], best_val, best_z):
            best_val, best_x, best_z = res
    part = Partition(V.products, best_x, best_z, objective=float(best_val))
    check_feasible(part)
    return part


def split_products(signal: np.ndarray, cap: int) -> list[list[int]]:
    """Greedy grouping of product indices into subsets of at most ``cap``.

    Pairs are merged in order of decreasing ``max(|s_ij|, |s_ji|)`` whenever
    the merged group stays within the cap; zero-signal pairs never merge.
    """
    s = np.abs(np.asarray(signal, dtype=float))
    P = s.shape[0]
    if cap < 1:
        raise ValueError("cap must be at least 1")
    if P <= cap:
        return [list(range(P))]
    sym = np.maximum(s, s.T)
    parent = list(range(P))
    members = {i: [i] for i in range(P)}

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    pairs = sorted(((sym[i, j], i, j) for i in range(P) for j in range(i + 1, P) if sym[i, j] > 0),
                   key=lambda t: (-t[0], t[1], t[2]))
    for _, i, j in pairs:
        a, b = find(i), find(j)
        if a == b or len(members[a]) + len(members[b]) > cap:
            continue
        if a > b:
            a, b = b, a
        parent[b] = a
        members[a] = sorted(members[a] + members.pop(b))
    return sorted(members.values())


def interaction_signal(V: ValueMatrix) -> np.ndarray:
    """Gain of each pairing over pricing the follower alone (zero diagonal)."""
    v = V.values
    sig = v - np.diag(v)[None, :]
    np.fill_diagonal(sig, 0.0)
    return np.maximum(sig, 0.0)


def solve_split(V: ValueMatrix, cap: int) -> Partition:
    """Mine each subset of :func:`split_products` on its own and stitch the results."""
    groups = split_products(interaction_signal(V), cap)
    P = V.size
    x = np.zeros((P, P), dtype=np.int8)
    z = np.ones(P, dtype=np.int8)
    total = 0.0
    for g in groups:
        part = solve_partition(V.sub(g))
        x[np.ix_(g, g)] = part.x
        z[g] = part.z
        total += part.objective
    out = Partition(V.products, x, z, objective=total)
    check_feasible(out)
    return out


def build_value_matrix(
    models: Mapping[Hashable, ProductModel],
    pair_models: Mapping[tuple, FollowerModel],
    penalty: float,
    mode: str = FULL_GRID,
) -> ValueMatrix:
    """Optimistic value matrix from per-product and per-(follower, leader) models.

    ``pair_models[(f, l)]`` describes ``f`` following ``l``; pairs built from
    incomplete data (``complete=False``) are reported in ``flagged``.
    """
    products = tuple(models)
    P = len(products)
    v = np.zeros((P, P))
    flagged = set()
    for i, p in enumerate(products):
        v[i, i] = float(np.max(models[p].objective()))
    for i, l in enumerate(products):
        for j, f in enumerate(products):
            if i == j:
                continue
            fm = pair_models[(f, l)]
            if not fm.complete:
                flagged.add((l, f))
            quote = joint_argmax(models[l], [fm], mode)
            v[i, j] = quote.objective_value - v[i, i] - penalty
    return ValueMatrix(products, v, penalty, frozenset(flagged))
