"""Transaction records, margin-aggregated counters and the estimates built on them.

Record contexts
---------------
A record with ``context="none"`` is the full tally of a product's impressions
and sales at one margin in one round; these rows drive the unconditional
counters and the impression-rate estimate.

Rows with ``context="with"`` or ``"without"`` break a subset of those same
impressions down relative to one candidate leader ``l``:

* ``with``    -- ``l`` was in the customer's basket and the product was shown in
  that context (the cross-selling situation);
* ``without`` -- ``l`` was in the basket but the product was shown outside of
  that context.

Impressions where ``l`` was not bought at all are the remainder
``none = unconditional - with - without``.  The concurrence estimate is the
share of in-context impressions among those with the leader in the basket.
"""

from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Iterable, Sequence

import numpy as np

CONTEXTS = ("none", "with", "without")
LOG_HEADER = ("round", "product", "margin", "impressions", "sales", "context", "leader")
CONCURRENCE_PRIOR = 0.5


class OffGridMarginError(ValueError):
    pass


def margin_index(grid: Sequence[float], margin: float) -> int:
    for j, g in enumerate(grid):
        if math.isclose(g, margin, rel_tol=0.0, abs_tol=1e-12):
            return j
    raise OffGridMarginError(f"margin {margin!r} is not on the grid {tuple(grid)}")


@dataclass(frozen=True)
class TransactionRecord:
    round: int
    product: Hashable
    margin: float
    impressions: int
    sales: int
    context: str = "none"
    leader: Hashable | None = None

    def __post_init__(self):
        if self.round < 0:
            raise ValueError(f"round must be nonnegative, got {self.round}")
        if self.impressions < 0 or self.sales < 0:
            raise ValueError("impressions and sales must be nonnegative")
        if self.sales > self.impressions:
            raise ValueError(f"sales ({self.sales}) exceed impressions ({self.impressions}) for {self.product!r}")
        if self.context not in CONTEXTS:
            raise ValueError(f"unknown context {self.context!r}")
        if (self.context == "none") != (self.leader is None):
            raise ValueError("leader must be given exactly when context is 'with' or 'without'")


@dataclass
class MarginCounters:
    grid: tuple[float, ...]
    sales: np.ndarray = None
    impressions: np.ndarray = None

    def __post_init__(self):
        self.grid = tuple(float(g) for g in self.grid)
        M = len(self.grid)
        self.sales = np.zeros(M, dtype=np.int64) if self.sales is None else np.asarray(self.sales, dtype=np.int64)
        self.impressions = (
            np.zeros(M, dtype=np.int64) if self.impressions is None else np.asarray(self.impressions, dtype=np.int64)
        )
        if self.sales.shape != (M,) or self.impressions.shape != (M,):
            raise ValueError("counter arrays must match the grid length")
        if np.any(self.sales > self.impressions) or np.any(self.sales < 0):
            raise ValueError("counters must satisfy 0 <= sales <= impressions")

    @property
    def empirical_demand(self) -> np.ndarray:
        """Sales over impressions; NaN where nothing was shown."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.impressions > 0, self.sales / np.maximum(self.impressions, 1), np.nan)

    def copy(self) -> "MarginCounters":
        return MarginCounters(self.grid, self.sales.copy(), self.impressions.copy())

    def add(self, margin: float, impressions: int, sales: int) -> None:
        j = margin_index(self.grid, margin)
        self.impressions[j] += impressions
        self.sales[j] += sales

    def __sub__(self, other: "MarginCounters") -> "MarginCounters":
        if self.grid != other.grid:
            raise ValueError("grid mismatch")
        return MarginCounters(self.grid, self.sales - other.sales, self.impressions - other.impressions)

    def __eq__(self, other):
        if not isinstance(other, MarginCounters):
            return NotImplemented
        return (
            self.grid == other.grid
            and np.array_equal(self.sales, other.sales)
            and np.array_equal(self.impressions, other.impressions)
        )


def update_counters(state: MarginCounters, rec: TransactionRecord) -> MarginCounters:
    """Return a copy of ``state`` with ``rec`` added at its margin."""
    out = state.copy()
    out.add(rec.margin, rec.impressions, rec.sales)
    return out


@dataclass(frozen=True)
class ConcurrenceEstimate:
    leader: Hashable
    follower: Hashable
    p_hat: float
    support: int


@dataclass(frozen=True)
class ImpressionRate:
    product: Hashable
    n_hat: float


def _concurrence(leader, follower, with_imps: int, without_imps: int) -> ConcurrenceEstimate:
    support = with_imps + without_imps
    p = with_imps / support if support > 0 else CONCURRENCE_PRIOR
    return ConcurrenceEstimate(leader, follower, p, support)


def estimate_concurrence(history: Iterable[TransactionRecord], leader, follower) -> ConcurrenceEstimate:
    w = wo = 0
    for rec in history:
        if rec.product == follower and rec.leader == leader:
            if rec.context == "with":
                w += rec.impressions
            elif rec.context == "without":
                wo += rec.impressions
    return _concurrence(leader, follower, w, wo)


def estimate_impression_rate(history: Iterable[TransactionRecord], product) -> ImpressionRate:
    total = 0
    rounds = set()
    for rec in history:
        if rec.product == product and rec.context == "none":
            total += rec.impressions
            rounds.add(rec.round)
    return ImpressionRate(product, total / len(rounds) if rounds else 0.0)


@dataclass
class CounterStore:
    """Incremental counters for a set of products and tracked (follower, leader) pairs.

    Pairs outside ``tracked`` are ignored on ingestion; pass ``tracked=None``
    to keep every pair that shows up.
    """

    grid: tuple[float, ...]
    products: tuple
    tracked: set | None = field(default_factory=set)
    unconditional: dict = field(init=False)
    with_leader: dict = field(init=False)
    without_leader: dict = field(init=False)
    _impressions: dict = field(init=False)
    _rounds: dict = field(init=False)
    _pair_imps: dict = field(init=False)

    def __post_init__(self):
        self.grid = tuple(float(g) for g in self.grid)
        self.products = tuple(self.products)
        self.unconditional = {p: MarginCounters(self.grid) for p in self.products}
        self.with_leader = {}
        self.without_leader = {}
        self._impressions = defaultdict(int)
        self._rounds = defaultdict(set)
        self._pair_imps = defaultdict(lambda: [0, 0])

    def is_tracked(self, follower, leader) -> bool:
        return self.tracked is None or (follower, leader) in self.tracked

    def track(self, pairs: Iterable[tuple]) -> None:
        if self.tracked is not None:
            self.tracked.update(pairs)

    def ingest(self, rec: TransactionRecord) -> None:
        if rec.product not in self.unconditional:
            raise KeyError(f"unknown product {rec.product!r}")
        if rec.context == "none":
            self.unconditional[rec.product].add(rec.margin, rec.impressions, rec.sales)
            self._impressions[rec.product] += rec.impressions
            self._rounds[rec.product].add(rec.round)
            return
        if rec.leader not in self.unconditional:
            raise KeyError(f"unknown leader {rec.leader!r}")
        key = (rec.product, rec.leader)
        if not self.is_tracked(*key):
            return
        table = self.with_leader if rec.context == "with" else self.without_leader
        if key not in table:
            table[key] = MarginCounters(self.grid)
        table[key].add(rec.margin, rec.impressions, rec.sales)
        self._pair_imps[key][0 if rec.context == "with" else 1] += rec.impressions

    def ingest_many(self, records: Iterable[TransactionRecord]) -> None:
        for rec in records:
            self.ingest(rec)

    def has_pair(self, follower, leader) -> bool:
        return (follower, leader) in self.with_leader or (follower, leader) in self.without_leader

    def with_counters(self, follower, leader) -> MarginCounters:
        return self.with_leader.get((follower, leader)) or MarginCounters(self.grid)

    def not_with_counters(self, follower, leader) -> MarginCounters:
        """Everything except the in-context impressions: the base-demand sample."""
        return self.unconditional[follower] - self.with_counters(follower, leader)

    def none_counters(self, follower, leader) -> MarginCounters:
        without = self.without_leader.get((follower, leader)) or MarginCounters(self.grid)
        rest = self.unconditional[follower] - self.with_counters(follower, leader) - without
        if np.any(rest.impressions < 0) or np.any(rest.sales < 0):
            raise ValueError(f"conditional tallies for {(follower, leader)!r} exceed the unconditional counters")
        return rest

    def concurrence(self, leader, follower) -> ConcurrenceEstimate:
        w, wo = self._pair_imps.get((follower, leader), (0, 0))
        return _concurrence(leader, follower, w, wo)

    def impression_rate(self, product) -> ImpressionRate:
        rounds = self._rounds.get(product)
        return ImpressionRate(product, self._impressions[product] / len(rounds) if rounds else 0.0)


# -- transaction log ---------------------------------------------------------


def _format_id(x) -> str:
    return "" if x is None else str(x)


def _parse_id(s: str):
    s = s.strip()
    if s == "":
        return None
    try:
        return int(s)
    except ValueError:
        return s


def write_log(records: Iterable[TransactionRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(format_log(records))


def format_log(records: Iterable[TransactionRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_HEADER)
    for r in records:
        w.writerow([r.round, _format_id(r.product), repr(float(r.margin)), r.impressions, r.sales,
                    r.context, _format_id(r.leader)])
    return buf.getvalue()


def read_log(path, grid: Sequence[float] | None = None) -> list[TransactionRecord]:
    with open(path, newline="") as fh:
        return parse_log(fh.read(), grid)


def parse_log(text: str, grid: Sequence[float] | None = None) -> list[TransactionRecord]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != LOG_HEADER:
        raise ValueError(f"bad transaction log header {header!r}, expected {','.join(LOG_HEADER)}")
    out = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(LOG_HEADER):
            raise ValueError(f"line {lineno}: expected {len(LOG_HEADER)} fields, got {len(row)}")
        rnd, prod, margin, imps, sales, ctx, leader = row
        m = float(margin)
        if grid is not None:
            m = grid[margin_index(grid, m)]
        out.append(TransactionRecord(int(rnd), _parse_id(prod), m, int(imps), int(sales), ctx.strip(), _parse_id(leader)))
    return out


def load_counters(path: Path | str, grid: Sequence[float], products: Sequence) -> CounterStore:
    store = CounterStore(grid, tuple(products), tracked=None)
    store.ingest_many(read_log(path, grid))
    return store
