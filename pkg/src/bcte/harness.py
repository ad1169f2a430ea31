"""Replicated policy runs, aggregation and reference lines.

Seeds: run ``r`` of policy ``p`` at risk ``delta`` draws from
``SeedSequence([master_seed, crc32(policy key), hi32(delta), lo32(delta), r])``,
where ``hi32/lo32`` split the IEEE-754 bits of ``delta``.  The entropy tuple is
injective in its inputs and SeedSequence hashes it into the generator state, so
each task has its own stream whatever order or process it runs in.  The stream
is split into an environment child (rewards) and a policy child (posterior
draws, coin flips).
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import os
import struct
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from . import characteristic as ch
from .models import Bernoulli, Exponential, Gaussian, Instance, ModelKind, make_model
from .policies import HistoryState, PolicyKind, policy_key
from .stopping import HeuristicLogLog, ThresholdKind

DEFAULT_HORIZON_CAP = 1_000_000


@dataclass(frozen=True)
class ExperimentConfig:
    instance: Instance
    policies: tuple
    deltas: tuple[float, ...]
    n_runs: int = 100
    master_seed: int = 0
    threshold: ThresholdKind = field(default_factory=HeuristicLogLog)
    horizon_cap: int = DEFAULT_HORIZON_CAP

    def __post_init__(self):
        object.__setattr__(self, "policies", tuple(self.policies))
        object.__setattr__(self, "deltas", tuple(float(d) for d in self.deltas))
        if self.n_runs < 1:
            raise ValueError("n_runs must be at least 1")
        if self.horizon_cap < 2 * self.instance.K:
            raise ValueError("horizon_cap must cover the 2K initial rounds")
        if len(set(self.deltas)) != len(self.deltas):
            raise ValueError("deltas must be distinct")
        if any(not 0 < d < 1 for d in self.deltas):
            raise ValueError("every delta must lie in (0, 1)")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class RunRecord:
    policy: str
    delta: float
    run_index: int
    tau: int
    recommended: int
    correct: bool
    te_rounds: int
    truncated: bool = False
    wall_ns_per_step: int = field(default=0, compare=False)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=False)

    @classmethod
    def from_json(cls, line: str) -> "RunRecord":
        return cls(**json.loads(line))


def run_seed(master_seed: int, policy: str, delta: float, run_index: int) -> np.random.SeedSequence:
    bits = struct.unpack(">Q", struct.pack(">d", float(delta)))[0]
    entropy = [int(master_seed), zlib.crc32(policy.encode()), bits >> 32, bits & 0xFFFFFFFF, int(run_index)]
    return np.random.SeedSequence(entropy)


def _streams(seq: np.random.SeedSequence):
    env, pol = seq.spawn(2)
    return np.random.Generator(np.random.PCG64(env)), np.random.Generator(np.random.PCG64(pol))


def run_once(instance: Instance, policy: PolicyKind, delta: float, run_index: int,
             master_seed: int = 0, threshold: ThresholdKind | None = None,
             horizon_cap: int = DEFAULT_HORIZON_CAP, timing: bool = False) -> RunRecord:
    """Play ``policy`` until Chernoff's rule fires or ``horizon_cap`` rounds elapse.

    The rule is checked after the 2K initial rounds, every round, before the next
    arm is chosen.
    """
    threshold = (threshold or HeuristicLogLog()).resolve(instance.K)
    key = policy_key(policy)
    env_rng, pol_rng = _streams(run_seed(master_seed, key, delta, run_index))
    model, means, K = instance.model, instance.means, instance.K
    kl, sample = model.kl, model.sample
    history = HistoryState.for_model(K, model)
    choose = policy.choose
    te_rounds = 0
    truncated = False
    start = time.perf_counter_ns() if timing else 0
    init_rounds = 2 * K
    while True:
        t = history.t
        if t >= init_rounds:
            leader, costs = history.challenger_costs(kl)
            if min(costs.values()) > threshold(t, delta):
                break
        if t >= horizon_cap:
            truncated = True
            leader = history.leader()
            break
        c = choose(history, model, pol_rng)
        te_rounds += c.te
        history.update(c.arm, sample(means[c.arm], env_rng))
    elapsed = (time.perf_counter_ns() - start) // max(history.t, 1) if timing else 0
    return RunRecord(
        policy=key,
        delta=float(delta),
        run_index=int(run_index),
        tau=history.t,
        recommended=leader,
        correct=(not truncated) and leader == instance.best,
        te_rounds=te_rounds,
        truncated=truncated,
        wall_ns_per_step=int(elapsed),
    )


def _run_chunk(args):
    config, p_idx, delta, indices, timing = args
    policy = config.policies[p_idx]
    out = []
    for r in indices:
        try:
            out.append(run_once(config.instance, policy, delta, r, config.master_seed,
                                config.threshold, config.horizon_cap, timing))
        except Exception as exc:  # re-raised with replay context
            raise RuntimeError(
                f"run failed: policy={policy_key(policy)} delta={delta} run_index={r} "
                f"master_seed={config.master_seed}: {exc!r}") from exc
    return out


def default_workers() -> int:
    env = os.environ.get("BCTE_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_experiment(config: ExperimentConfig, workers: int | None = None, timing: bool = False,
                   chunk_size: int = 50) -> list[RunRecord]:
    """Every (policy, delta, run) task, merged in (policy, delta, run_index) order."""
    workers = default_workers() if workers is None else max(1, int(workers))
    tasks = []
    for p_idx in range(len(config.policies)):
        for delta in config.deltas:
            for lo in range(0, config.n_runs, chunk_size):
                idx = range(lo, min(lo + chunk_size, config.n_runs))
                tasks.append((config, p_idx, delta, idx, timing))
    if workers == 1:
        chunks = [_run_chunk(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_chunk, tasks))
    order = {policy_key(p): i for i, p in enumerate(config.policies)}
    dorder = {d: i for i, d in enumerate(config.deltas)}
    records = [r for chunk in chunks for r in chunk]
    records.sort(key=lambda r: (order[r.policy], dorder[r.delta], r.run_index))
    return records


# ---------------------------------------------------------------------------
# aggregation


@dataclass
class Aggregate:
    policy: str
    delta: float
    n: int
    mean_tau: float
    std_tau: float
    stderr: float
    error_rate: float
    truncated: int
    welch_p_values: dict[str, float] = field(default_factory=dict)


def welch_one_sided(samples_a, samples_b, alpha: float = 0.05) -> tuple[float, bool]:
    """Welch's t-test of ``mean_a < mean_b``; returns ``(p_value, p < alpha)``."""
    a = np.asarray(samples_a, dtype=float)
    b = np.asarray(samples_b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise ValueError("each sample needs at least two values")
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    if va + vb == 0:
        raise ValueError("both samples have zero variance")
    t_stat = (a.mean() - b.mean()) / math.sqrt(va + vb)
    df = (va + vb) ** 2 / (va**2 / (a.size - 1) + vb**2 / (b.size - 1))
    p = float(stats.t.cdf(t_stat, df))
    return p, p < alpha


def aggregate(records: Sequence[RunRecord], alpha: float = 0.05) -> list[Aggregate]:
    cells: dict[tuple[str, float], list[RunRecord]] = {}
    for r in records:
        cells.setdefault((r.policy, r.delta), []).append(r)
    taus = {}
    out = []
    for (pol, delta), rs in cells.items():
        done = np.array([r.tau for r in rs if not r.truncated], dtype=float)
        taus[(pol, delta)] = done
        n_done = done.size
        std = float(done.std(ddof=1)) if n_done > 1 else math.nan
        errors = sum(1 for r in rs if not r.truncated and not r.correct)
        out.append(Aggregate(
            policy=pol, delta=delta, n=len(rs),
            mean_tau=float(done.mean()) if n_done else math.nan,
            std_tau=std,
            stderr=std / math.sqrt(n_done) if n_done > 1 else math.nan,
            error_rate=errors / n_done if n_done else math.nan,
            truncated=len(rs) - n_done,
        ))
    for agg in out:
        for (pol, delta), other in taus.items():
            if delta != agg.delta or pol == agg.policy:
                continue
            try:
                p, _ = welch_one_sided(taus[(agg.policy, agg.delta)], other, alpha)
            except ValueError:
                p = math.nan
            agg.welch_p_values[pol] = p
    return out


def write_records(records: Iterable[RunRecord], path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def read_records(path) -> list[RunRecord]:
    with open(path) as fh:
        return [RunRecord.from_json(line) for line in fh if line.strip()]


def aggregates_csv(aggs: Sequence[Aggregate], policies: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["policy", "delta", "n", "mean_tau", "std_tau", "stderr", "error_rate", "truncated"]
               + [f"welch_vs_{p}" for p in policies])
    for a in aggs:
        w.writerow([a.policy, repr(a.delta), a.n, repr(a.mean_tau), repr(a.std_tau), repr(a.stderr),
                    repr(a.error_rate), a.truncated]
                   + [repr(a.welch_p_values[p]) if p in a.welch_p_values else "" for p in policies])
    return buf.getvalue()


def binomial_upper(errors: int, n: int, confidence: float = 0.99) -> float:
    """One-sided Clopper-Pearson upper confidence bound for an error rate."""
    if errors >= n:
        return 1.0
    return float(stats.beta.ppf(confidence, errors + 1, n - errors))


# ---------------------------------------------------------------------------
# reference lines


def lower_bound(inst: Instance, delta: float, t_star: float | None = None) -> float:
    """``T* kl(delta, 1 - delta)``, the non-asymptotic form of the lower bound."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    t_star = ch.t_star(inst) if t_star is None else t_star
    return t_star * (1 - 2 * delta) * math.log((1 - delta) / delta)


def asymptotic_lower_bound(inst: Instance, delta: float, t_star: float | None = None) -> float:
    """``T* log(1/(2.4 delta))``."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    t_star = ch.t_star(inst) if t_star is None else t_star
    return t_star * math.log(1 / (2.4 * delta))


def practical_lower_bound(inst: Instance, delta: float, kind: ThresholdKind | None = None,
                          t_star: float | None = None) -> int:
    """First round ``t`` with ``t g(w*) >= threshold(t, delta)``."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    kind = (kind or HeuristicLogLog()).resolve(inst.K)
    g = 1.0 / (ch.t_star(inst) if t_star is None else t_star)

    def crossed(t):
        return t * g >= kind(t, delta)

    if crossed(1):
        return 1
    hi = 2
    while not crossed(hi):
        hi *= 2
        if hi > 2**62:
            raise ch.SolverError("threshold never crossed")
    # t g - threshold(t) is convex and negative at t = 1: once crossed it stays crossed
    lo = hi // 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if crossed(mid):
            hi = mid
        else:
            lo = mid
    return hi


# ---------------------------------------------------------------------------
# ratio sweeps


def family_means(family: str, K: int) -> list[float]:
    if family == "mu1":
        return [0.3, 0.21] + [0.21 - 0.001 * k for k in range(1, K - 1)]
    if family == "mu2":
        return [0.9, 0.7] + [0.7 - 0.001 * k for k in range(1, K - 1)]
    if family == "worst":
        return [0.3] + [0.21] * (K - 1)
    raise ValueError(f"unknown family {family!r}")


@dataclass
class SweepRow:
    model: str
    K: int
    ratio_lower: float
    ratio_half: float
    t_star: float
    t_lower: float
    t_half: float


def ratio_sweep(models: Sequence[ModelKind | str], family: str, K_range: Iterable[int],
                tol: float = ch.TOL) -> tuple[list[SweepRow], list[tuple[str, int, str]]]:
    """Ratios ``T_lower/T*`` and ``T^{1/2}/T*`` along a family; skipped cells listed separately."""
    rows, dropped = [], []
    for model in models:
        model = make_model(model) if isinstance(model, str) else model
        for K in K_range:
            try:
                inst = Instance(model, family_means(family, K))
            except ValueError as exc:
                dropped.append((model.name, K, str(exc)))
                continue
            ts = ch.t_star(inst, tol)
            tl, _ = ch.t_lower(inst, tol)
            th = ch.t_beta(inst, 0.5, tol)
            rows.append(SweepRow(model.name, K, tl / ts, th / ts, ts, tl, th))
    return rows, dropped


def sweep_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "K", "ratio_lower", "ratio_half"])
    for r in rows:
        w.writerow([r.model, r.K, repr(r.ratio_lower), repr(r.ratio_half)])
    return buf.getvalue()


BENCHMARKS = {
    "B5": lambda: Instance(Bernoulli(), [0.3, 0.21, 0.2, 0.19, 0.18]),
    "G4": lambda: Instance(Gaussian(1.0), [1.0, 0.85, 0.8, 0.7]),
    "E5": lambda: Instance(Exponential(), [0.5, 0.45, 0.43, 0.4, 0.3]),
    "P4": lambda: Instance(make_model("pareto", scale=1.0), [5.0, 3.0, 2.0, 1.5]),
}
