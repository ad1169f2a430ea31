"""Sampling rules for fixed-confidence best-arm identification.

Every rule starts with two round-robin passes so each arm holds two
observations (the Jeffreys posteriors are proper from then on).  Ties in any
argmax/argmin are broken deterministically: fewer plays first where the rule
says so, then the lower index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import characteristic as ch
from .models import Instance, ModelKind, Pareto


class HistoryState:
    """Per-arm counts and reward sums; the source of empirical means and weights."""

    def __init__(self, K: int, track_log: bool = False):
        if K < 2:
            raise ValueError("need at least two arms")
        self.counts = [0] * K
        self.sums = [0.0] * K
        self.sum_logs = [0.0] * K
        self.t = 0
        self.track_log = track_log
        self._cache_t = -1
        self._cache = None

    @classmethod
    def for_model(cls, K: int, model: ModelKind) -> "HistoryState":
        return cls(K, track_log=isinstance(model, Pareto))

    @property
    def K(self) -> int:
        return len(self.counts)

    def update(self, arm: int, x: float) -> None:
        self.counts[arm] += 1
        self.sums[arm] += x
        if self.track_log:
            self.sum_logs[arm] += math.log(x)
        self.t += 1

    def means(self) -> list[float]:
        return [s / n if n else math.nan for s, n in zip(self.sums, self.counts)]

    def weights(self) -> list[float]:
        return [n / self.t for n in self.counts]

    def leader(self) -> int:
        mu = self.means()
        return mu.index(max(mu))

    def challenger_costs(self, kl) -> tuple[int, dict[int, float]]:
        """Empirical best arm ``m`` and ``t f_{m,j}(w^t; mu_hat)`` for every ``j != m``.

        Cached per round; the stopping rule and the best-challenger rule read the
        same numbers.
        """
        if self._cache_t == self.t and self._cache[0] == kl:
            return self._cache[1]
        n, s = self.counts, self.sums
        mu = [s[i] / n[i] for i in range(len(n))]
        m = mu.index(max(mu))
        n_m, s_m, mu_m = n[m], s[m], mu[m]
        costs = {}
        for j in range(len(n)):
            if j == m:
                continue
            if mu[j] == mu_m:
                costs[j] = 0.0
                continue
            mid = (s_m + s[j]) / (n_m + n[j])
            costs[j] = n_m * kl(mu_m, mid) + n[j] * kl(mu[j], mid)
        out = (m, costs)
        self._cache_t, self._cache = self.t, (kl, out)
        return out

    def copy(self) -> "HistoryState":
        h = HistoryState(self.K, self.track_log)
        h.counts, h.sums, h.sum_logs, h.t = list(self.counts), list(self.sums), list(self.sum_logs), self.t
        return h


def _init_arm(history: HistoryState) -> int | None:
    n = history.counts
    low = min(n)
    if low >= 2:
        return None
    return n.index(low)


def _argmin_count(history: HistoryState, arms) -> int:
    return min(arms, key=lambda i: (history.counts[i], i))


def _posterior_means(history: HistoryState, model: ModelKind, rng) -> list[float]:
    post = model.posterior
    return [post(history.counts[i], history.sums[i], history.sum_logs[i], rng) for i in range(history.K)]


class Choice(NamedTuple):
    arm: int
    te: bool = False
    leader: int = -1
    sampled_leader: int = -1


@dataclass(frozen=True)
class BCTE:
    """Best challenger with Thompson exploration."""

    name = "BCTE"

    def choose(self, history: HistoryState, model: ModelKind, rng) -> Choice:
        arm = _init_arm(history)
        if arm is not None:
            return Choice(arm)
        sample = _posterior_means(history, model, rng)
        m_tilde = sample.index(max(sample))
        kl = model.kl
        m, costs = history.challenger_costs(kl)
        if m != m_tilde:
            return Choice(_argmin_count(history, (m, m_tilde)), True, m, m_tilde)
        fmin = min(costs.values())
        j = min(i for i, f in costs.items() if f == fmin)
        n, s = history.counts, history.sums
        mid = (s[m] + s[j]) / (n[m] + n[j])
        v_m = kl(s[m] / n[m], mid)
        v_j = kl(s[j] / n[j], mid)
        if v_m > v_j:
            arm = m
        elif v_j > v_m:
            arm = j
        elif v_m > 0:
            arm = _argmin_count(history, (m, j))
        else:
            # every entry of v is zero
            arm = _argmin_count(history, range(history.K))
        return Choice(arm, False, m, m_tilde)


@dataclass(frozen=True)
class RoundRobin:
    name = "RR"

    def choose(self, history, model, rng) -> Choice:
        arm = _init_arm(history)
        if arm is not None:
            return Choice(arm)
        return Choice(history.t % history.K)


def _clip_to_domain(model: ModelKind, mu: list[float]) -> list[float]:
    lo, hi = model.domain()
    eps = 1e-6
    out = []
    for x in mu:
        if math.isfinite(lo):
            x = max(x, lo + eps * max(1.0, abs(lo)))
        if math.isfinite(hi):
            x = min(x, hi - eps * max(1.0, abs(hi)))
        out.append(x)
    return out


def empirical_w_star(history: HistoryState, model: ModelKind) -> list[float]:
    """Plug-in optimal allocation; uniform when the empirical instance is degenerate."""
    K = history.K
    mu = _clip_to_domain(model, history.means())
    top = max(mu)
    if mu.count(top) > 1:
        return [1.0 / K] * K
    try:
        if isinstance(model, Pareto):
            # k is not the envelope of the KL terms here, so Newton steps are unreliable
            w, _ = ch._solve_w_star(model.kl, mu, mu.index(top), 1e-8)
        else:
            w = ch._solve_w_star_fast(model.kl, mu, mu.index(top))
    except (ch.SolverError, ValueError):
        return [1.0 / K] * K
    return w.tolist()


@dataclass(frozen=True)
class TaSD:
    """Track-and-Stop with D-tracking and the ``sqrt(t) - K/2`` exploration floor."""

    name = "TaSD"

    def choose(self, history, model, rng) -> Choice:
        arm = _init_arm(history)
        if arm is not None:
            return Choice(arm)
        t, K, n = history.t, history.K, history.counts
        floor = math.sqrt(t) - K / 2
        starved = [i for i in range(K) if n[i] < floor]
        if starved:
            return Choice(_argmin_count(history, starved))
        w = empirical_w_star(history, model)
        gaps = [t * w[i] - n[i] for i in range(K)]
        top = max(gaps)
        return Choice(gaps.index(top))


@dataclass(frozen=True)
class T3C:
    """Top-two transportation cost: Thompson leader, GLR-cheapest challenger."""

    beta: float = 0.5
    name = "T3C"

    def __post_init__(self):
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")

    def choose(self, history, model, rng) -> Choice:
        arm = _init_arm(history)
        if arm is not None:
            return Choice(arm)
        sample = _posterior_means(history, model, rng)
        leader = sample.index(max(sample))
        if rng.random() < self.beta:
            return Choice(leader, False, -1, leader)
        n, s, kl = history.counts, history.sums, model.kl
        mu_l = s[leader] / n[leader]
        best_j, best_c = -1, math.inf
        for j in range(history.K):
            if j == leader:
                continue
            mu_j = s[j] / n[j]
            if mu_j >= mu_l:
                c = 0.0
            else:
                mid = (s[leader] + s[j]) / (n[leader] + n[j])
                c = n[leader] * kl(mu_l, mid) + n[j] * kl(mu_j, mid)
            if c < best_c:
                best_j, best_c = j, c
        return Choice(best_j, False, -1, leader)


PolicyKind = BCTE | RoundRobin | TaSD | T3C

POLICIES = {"bcte": BCTE, "rr": RoundRobin, "roundrobin": RoundRobin, "tasd": TaSD, "t-d": TaSD, "t3c": T3C}


def parse_policy(spec: str) -> PolicyKind:
    """``"bcte"``, ``"rr"``, ``"tasd"``, ``"t3c"`` or ``"t3c:0.6"``."""
    key, _, arg = spec.strip().lower().partition(":")
    if key not in POLICIES:
        raise ValueError(f"unknown policy {spec!r}")
    cls = POLICIES[key]
    if cls is T3C and arg:
        return T3C(float(arg))
    if arg:
        raise ValueError(f"policy {key} takes no parameter")
    return cls()


def policy_key(policy: PolicyKind) -> str:
    if isinstance(policy, T3C):
        return f"T3C:{policy.beta!r}"
    return policy.name


def select_arm(policy: PolicyKind, history: HistoryState, model: ModelKind, rng: np.random.Generator) -> int:
    return policy.choose(history, model, rng).arm


class TraceStep(NamedTuple):
    arm: int
    reward: float
    leader: int
    sampled_leader: int
    te: bool


def bcte_trace(inst: Instance, horizon: int, seed) -> list[TraceStep]:
    """Run BC-TE without stopping and record every round."""
    if horizon < 2 * inst.K:
        raise ValueError("horizon must cover the initialisation (2K rounds)")
    env_rng, pol_rng = [np.random.Generator(np.random.PCG64(s))
                        for s in np.random.SeedSequence(seed).spawn(2)]
    model, means = inst.model, inst.means
    history = HistoryState.for_model(inst.K, model)
    policy = BCTE()
    steps = []
    for _ in range(horizon):
        c = policy.choose(history, model, pol_rng)
        x = model.sample(means[c.arm], env_rng)
        history.update(c.arm, x)
        steps.append(TraceStep(c.arm, x, c.leader, c.sampled_leader, c.te))
    return steps
