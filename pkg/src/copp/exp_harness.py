"""Multi-trial pricing experiments: wiring, result files and the ``run`` CLI.

Config files are flat ``key = value`` text (``#`` starts a comment); every key
is a field of :class:`ExperimentConfig`.  Lists are comma separated and
substitutable groups are written ``0+1+2;5+6``.
"""

from __future__ import annotations

import argparse
import concurrent.futures as cf
import csv
import dataclasses
import io
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import market_sim as ms
from .demand_models import FULL_GRID
from .kernel_gp import GPConfig, KernelConfig
from .meta_products import SubstitutabilityDeclaration, aggregate_records, build_meta_products, raw_to_meta
from .pricing_engine import COPP_KG, COPP_UG, IPP, VARIANTS, PolicyConfig, PricingEngine
from .relation_miner import Partition

logger = logging.getLogger(__name__)

REWARDS_HEADER = ("policy", "round", "mean_reward", "ci_low", "ci_high", "optimum")
RUNTIME_HEADER = ("policy", "horizon", "seconds_per_round_mean", "ci_low", "ci_high")
TRIALS_HEADER = ("policy", "trial", "round", "reward", "expected_reward", "optimum")
Z95 = 1.96
RANDOM, STRONG, MILD = "random", "strong", "mild"


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    products: int = 5
    horizon: int = 300
    trials: int = 30
    policies: tuple[str, ...] = VARIANTS
    regime: str = ms.INDEPENDENT
    boost: float = 1.0
    margins: tuple[float, ...] = ms.DEFAULT_GRID
    seed: int = 0
    remine_every: int = 1
    optimum_samples: int = 10_000
    out: str = "results"
    impressions: int = 100
    edges: int = -1
    max_followers: int = 2
    instance: str = RANDOM
    fixed_env: bool = False
    min_gap: float = 0.03
    concurrence: float = 1.0
    cost_low: float = 1.0
    cost_high: float = 10.0
    demand_low: float = 0.1
    demand_high: float = 0.9
    rkhs_bound: float = 1.0
    delta: float = 0.1
    lengthscale: float = 0.0
    penalty_fraction: float = 0.01
    joint_search_mode: str = FULL_GRID
    split_cap: int = 10
    substitutes: str = ""
    runtime_horizons: tuple[int, ...] = (20, 50, 100, 200, 300)
    workers: int = 1

    def validate(self) -> "ExperimentConfig":
        def bad(name, why):
            raise ConfigError(f"invalid config field {name!r}: {why}")

        if self.products < 1:
            bad("products", "must be at least 1")
        if self.horizon < 1:
            bad("horizon", "must be at least 1")
        if self.trials < 1:
            bad("trials", "must be at least 1")
        if not self.policies or any(p not in VARIANTS for p in self.policies):
            bad("policies", f"must be drawn from {VARIANTS}")
        if self.regime not in (ms.INDEPENDENT, ms.COMPLEMENTARY):
            bad("regime", "must be independent or complementary")
        if self.boost < 1:
            bad("boost", "must be at least 1")
        if not self.margins or list(self.margins) != sorted(set(self.margins)):
            bad("margins", "must be a nonempty ascending list")
        if self.remine_every < 1:
            bad("remine_every", "must be at least 1")
        if self.optimum_samples < 1:
            bad("optimum_samples", "must be positive")
        if self.impressions < 1:
            bad("impressions", "must be positive")
        if self.instance not in (RANDOM, STRONG, MILD):
            bad("instance", "must be random, strong or mild")
        if self.instance != RANDOM and self.regime != ms.COMPLEMENTARY:
            bad("instance", "strong/mild instances need the complementary regime")
        if not 0 < self.delta < 1:
            bad("delta", "must lie in (0, 1)")
        if self.rkhs_bound <= 0:
            bad("rkhs_bound", "must be positive")
        if self.lengthscale < 0:
            bad("lengthscale", "must be nonnegative (0 picks the default)")
        if self.workers < 1:
            bad("workers", "must be at least 1")
        if COPP_KG in self.policies and self.substitutes:
            bad("substitutes", "known-graph runs need raw products")
        self.declaration()
        return self

    def declaration(self) -> SubstitutabilityDeclaration:
        groups = []
        for chunk in filter(None, (c.strip() for c in self.substitutes.split(";"))):
            try:
                groups.append(frozenset(int(x) for x in chunk.split("+")))
            except ValueError as exc:
                raise ConfigError(f"invalid config field 'substitutes': {chunk!r}") from exc
        return SubstitutabilityDeclaration(tuple(groups))


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _coerce(name: str, raw: str):
    f = _FIELDS.get(name)
    if f is None:
        raise ConfigError(f"unknown config field {name!r}")
    default = f.default if f.default is not dataclasses.MISSING else None
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            if name == "policies":
                return tuple(s.replace("-", "_") for s in items)
            if name == "runtime_horizons":
                return tuple(int(s) for s in items)
            return tuple(float(s) for s in items)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"invalid config field {name!r}: {raw!r}") from exc


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key = value")
        values[key.strip()] = _coerce(key.strip(), val)
    return dataclasses.replace(base or ExperimentConfig(), **values)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def format_config(cfg: ExperimentConfig) -> str:
    lines = []
    for name in _FIELDS:
        val = getattr(cfg, name)
        if isinstance(val, tuple):
            val = ",".join(repr(v) if isinstance(v, float) else str(v) for v in val)
        elif isinstance(val, float):
            val = repr(val)
        lines.append(f"{name} = {val}")
    return "\n".join(lines) + "\n"


# -- environments -------------------------------------------------------------


def _make_env(cfg: ExperimentConfig, seed: int) -> ms.EnvSpec:
    return ms.generate_env(
        cfg.products,
        seed,
        regime=cfg.regime,
        boost=cfg.boost,
        n_edges=None if cfg.edges < 0 else cfg.edges,
        max_followers=cfg.max_followers,
        grid=cfg.margins,
        impressions_per_round=cfg.impressions,
        demand_band=(cfg.demand_low, cfg.demand_high),
        cost_range=(cfg.cost_low, cfg.cost_high),
        concurrence=cfg.concurrence,
    )


def interaction_gap(env: ms.EnvSpec) -> tuple[bool, float]:
    """Whether joint and product-by-product optima differ, and the relative profit gap."""
    joint_m, joint_v = ms.exact_optimum(env)
    indep_m = ms.independent_optimum(env)
    indep_v = ms.expected_profit(env, indep_m)
    return not np.allclose(joint_m, indep_m), (joint_v - indep_v) / joint_v


def find_instance(cfg: ExperimentConfig, start_seed: int, max_tries: int = 10_000) -> ms.EnvSpec:
    """Scan seeds for an environment matching ``cfg.instance``.

    ``strong``: joint optimum differs from the product-by-product optimum and
    beats it by at least ``min_gap``.  ``mild``: the two coincide.
    """
    for s in range(start_seed, start_seed + max_tries):
        env = _make_env(cfg, s)
        differs, gap = interaction_gap(env)
        if cfg.instance == STRONG and differs and gap >= cfg.min_gap:
            return env
        if cfg.instance == MILD and not differs:
            return env
    raise RuntimeError(f"no {cfg.instance} instance found in {max_tries} seeds from {start_seed}")


def trial_env(cfg: ExperimentConfig, trial: int) -> ms.EnvSpec:
    if cfg.instance != RANDOM:
        return find_instance(cfg, cfg.seed)
    return _make_env(cfg, cfg.seed if cfg.fixed_env else cfg.seed + trial)


def known_partition(env: ms.EnvSpec) -> Partition:
    kids: dict = {}
    for l, f in env.edges:
        kids.setdefault(l, []).append(f)
    return Partition.from_sets(env.products, kids)


# -- running ------------------------------------------------------------------


@dataclass
class TrialResult:
    policy: str
    trial: int
    rewards: np.ndarray
    expected: np.ndarray
    optimum: float
    seconds: np.ndarray
    partitions: list = field(default_factory=list)


@dataclass
class RunResult:
    cfg: ExperimentConfig
    trials: list[TrialResult]

    def policies(self) -> list[str]:
        return [p for p in self.cfg.policies if any(t.policy == p for t in self.trials)]

    def by_policy(self, policy: str) -> list[TrialResult]:
        return sorted((t for t in self.trials if t.policy == policy), key=lambda t: t.trial)


def policy_config(cfg: ExperimentConfig, policy: str, env: ms.EnvSpec) -> PolicyConfig:
    kernel = KernelConfig(cfg.lengthscale) if cfg.lengthscale > 0 else None
    return PolicyConfig(
        variant=policy,
        known_graph=known_partition(env) if policy == COPP_KG else None,
        remine_every=cfg.remine_every,
        joint_search_mode=cfg.joint_search_mode,
        gp=GPConfig(cfg.rkhs_bound, cfg.delta),
        kernel=kernel,
        penalty_fraction=cfg.penalty_fraction,
        split_cap=cfg.split_cap,
    )


class _MetaView:
    """Maps a raw-product simulator onto meta-products for the engine."""

    def __init__(self, env: ms.EnvSpec, decl: SubstitutabilityDeclaration):
        self.metas = build_meta_products(dict(zip(env.products, env.costs)), decl)
        self.mapping = raw_to_meta(self.metas)
        self.members = {m.meta_id: tuple(m.members) for m in self.metas}
        self.ids = tuple(m.meta_id for m in self.metas)
        self.costs = {m.meta_id: m.pooled_cost for m in self.metas}

    def raw_margins(self, env, meta_margins) -> np.ndarray:
        pos = {mid: i for i, mid in enumerate(self.ids)}
        return np.array([meta_margins[pos[self.mapping[p]]] for p in env.products])

    def raw_tags(self, pairs):
        if pairs is None:
            pairs = [(f, l) for f in self.ids for l in self.ids if f != l]
        out = []
        for fm, lm in pairs:
            group = self.members[lm]
            for f in self.members[fm]:
                out.append((f, group if len(group) > 1 else group[0]))
        return out

    def records(self, recs):
        mapping = dict(self.mapping)
        for mid, group in self.members.items():
            if len(group) > 1:
                mapping[group] = mid
        return aggregate_records(recs, mapping)


def run_trial(cfg: ExperimentConfig, trial: int, env: ms.EnvSpec | None = None,
              optimum: ms.OptimumEstimate | None = None) -> list[TrialResult]:
    env = env or trial_env(cfg, trial)
    optimum = optimum or ms.monte_carlo_optimum(env, cfg.optimum_samples, seed=cfg.seed + trial)
    decl = cfg.declaration()
    view = _MetaView(env, decl) if decl.groups else None
    out = []
    for policy in cfg.policies:
        pc = policy_config(cfg, policy, env)
        if view is None:
            engine = PricingEngine(env.products, env.costs, env.grid, pc)
        else:
            engine = PricingEngine(view.ids, view.costs, env.grid, pc)
        T = cfg.horizon
        rewards, expected, seconds = np.zeros(T), np.zeros(T), np.zeros(T)
        snaps = []
        for t in range(T):
            t0 = time.perf_counter()
            m = engine.select_margins()
            tags = engine.tracked_pairs()
            elapsed = time.perf_counter() - t0
            if view is not None:
                m, tags = view.raw_margins(env, m), view.raw_tags(tags)
            outcome = ms.simulate_round(env, m, ms.round_rng(cfg.seed, trial, t), round_=t, tag_pairs=tags)
            recs = outcome.records if view is None else view.records(outcome.records)
            n_epochs = len(engine.mining_log)
            t0 = time.perf_counter()
            engine.observe(recs)
            elapsed += time.perf_counter() - t0
            seconds[t] = elapsed
            rewards[t] = outcome.total_profit
            expected[t] = ms.expected_profit(env, m)
            if len(engine.mining_log) > n_epochs:
                snaps.append((engine.t, engine.partition.report()))
        out.append(TrialResult(policy, trial, rewards, expected, optimum.value, seconds, snaps))
    return out


def run_experiment(cfg: ExperimentConfig) -> RunResult:
    cfg.validate()
    shared_env = shared_opt = None
    if cfg.instance != RANDOM or cfg.fixed_env:
        shared_env = trial_env(cfg, 0)
        shared_opt = ms.monte_carlo_optimum(shared_env, cfg.optimum_samples, seed=cfg.seed)
    jobs = range(cfg.trials)
    if cfg.workers > 1:
        with cf.ProcessPoolExecutor(cfg.workers) as pool:
            parts = list(pool.map(run_trial, [cfg] * cfg.trials, jobs, [shared_env] * cfg.trials,
                                  [shared_opt] * cfg.trials))
    else:
        parts = [run_trial(cfg, k, shared_env, shared_opt) for k in jobs]
    trials = [r for part in parts for r in part]
    trials.sort(key=lambda r: (cfg.policies.index(r.policy), r.trial))
    return RunResult(cfg, trials)


# -- summaries and files ------------------------------------------------------


def mean_ci(samples: np.ndarray) -> tuple[float, float, float]:
    """Mean and normal-approximation 95% interval; degenerate for one sample."""
    x = np.asarray(samples, dtype=float)
    mean = float(x.mean())
    if x.size < 2:
        return mean, mean, mean
    half = Z95 * float(x.std(ddof=1)) / math.sqrt(x.size)
    return mean, mean - half, mean + half


def reward_rows(run: RunResult) -> list[tuple]:
    rows = []
    for policy in run.policies():
        ts = run.by_policy(policy)
        R = np.stack([t.rewards for t in ts])
        opt = float(np.mean([t.optimum for t in ts]))
        for k in range(R.shape[1]):
            mean, lo, hi = mean_ci(R[:, k])
            rows.append((policy, k + 1, mean, lo, hi, opt))
    return rows


def runtime_rows(run: RunResult) -> list[tuple]:
    rows = []
    T = run.cfg.horizon
    horizons = sorted({h for h in run.cfg.runtime_horizons if h <= T} | {T})
    for policy in run.policies():
        S = np.stack([t.seconds for t in run.by_policy(policy)])
        for h in horizons:
            mean, lo, hi = mean_ci(S[:, :h].sum(axis=1) / h)
            rows.append((policy, h, mean, lo, hi))
    return rows


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


def emit_results(run: RunResult, path) -> dict:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        files = {
            "rewards": out / "rewards.csv",
            "runtime": out / "runtime.csv",
            "trials": out / "trial_rewards.csv",
            "partition": out / "partition.txt",
            "info": out / "run_info.txt",
        }
        _write_csv(files["rewards"], REWARDS_HEADER, reward_rows(run))
        _write_csv(files["runtime"], RUNTIME_HEADER, runtime_rows(run))
        trial_rows = [(t.policy, t.trial, k + 1, t.rewards[k], t.expected[k], t.optimum)
                      for t in run.trials for k in range(len(t.rewards))]
        _write_csv(files["trials"], TRIALS_HEADER, trial_rows)
        with open(files["partition"], "w", encoding="ascii", newline="\n") as fh:
            for t in run.trials:
                for rnd, report in t.partitions:
                    fh.write(f"# policy={t.policy} trial={t.trial} round={rnd}\n{report}")
        with open(files["info"], "w", encoding="ascii", newline="\n") as fh:
            fh.write("ci_method = normal approximation, mean +/- 1.96 * sd / sqrt(trials)\n")
            fh.write(format_config(run.cfg))
    except OSError as exc:
        raise OSError(f"cannot write results to {out}: {exc}") from exc
    return files


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k, v in r.items():
            if k in ("policy",):
                continue
            r[k] = int(v) if k in ("round", "trial", "horizon") else float(v)
    return rows


# -- CLI ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="copp", description="Complementary-product pricing experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a multi-trial experiment")
    run.add_argument("--config", help="key = value config file")
    run.add_argument("--policy", action="append", choices=["ipp", "copp-kg", "copp-ug"],
                     help="policy to run (repeatable; default: config value)")
    run.add_argument("--products", type=int)
    run.add_argument("--horizon", type=int)
    run.add_argument("--trials", type=int)
    run.add_argument("--boost", type=float)
    run.add_argument("--seed", type=int)
    run.add_argument("--remine-every", type=int, dest="remine_every")
    run.add_argument("--out")
    run.add_argument("--workers", type=int)
    run.add_argument("-v", "--verbose", action="store_true")
    return ap


def config_from_args(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {k: getattr(args, k) for k in ("products", "horizon", "trials", "boost", "seed",
                                               "remine_every", "out", "workers") if getattr(args, k) is not None}
    if args.policy:
        overrides["policies"] = tuple(p.replace("-", "_") for p in args.policy)
    if args.boost is not None and args.boost > 1 and "regime" not in overrides and cfg.regime == ms.INDEPENDENT:
        overrides["regime"] = ms.COMPLEMENTARY
    return dataclasses.replace(cfg, **overrides).validate()


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    run = run_experiment(cfg)
    files = emit_results(run, cfg.out)
    for policy in run.policies():
        ts = run.by_policy(policy)
        tail = np.mean([t.rewards[-min(50, cfg.horizon):].mean() for t in ts])
        opt = np.mean([t.optimum for t in ts])
        print(f"{policy:8s} trailing mean reward {tail:10.2f}  optimum {opt:10.2f}  ratio {tail / opt:.4f}")
    print(f"results written to {files['rewards'].parent}")
    return 0
