"""Chernoff's GLR stopping rule and its thresholds."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .models import ModelKind


@dataclass(frozen=True)
class HeuristicLogLog:
    """``log((log t + 1)/delta)``, the usual experimental threshold."""

    def __call__(self, t: int, delta: float) -> float:
        return math.log((math.log(t) + 1.0) / delta)

    def resolve(self, K: int) -> "HeuristicLogLog":
        return self

    def describe(self) -> str:
        return "heuristic"


@dataclass(frozen=True)
class Deviational:
    """``log(c t^alpha / delta)``.

    ``c=None`` stands for the number of arms and is filled in by :meth:`resolve`.
    """

    c: float | None = None
    alpha: float = 1.2

    def __post_init__(self):
        if self.c is not None and not self.c > 0:
            raise ValueError("c must be positive")
        if not 1.0 <= self.alpha <= math.e / 2:
            raise ValueError("alpha must lie in [1, e/2]")

    def resolve(self, K: int) -> "Deviational":
        return self if self.c is not None else Deviational(float(K), self.alpha)

    def __call__(self, t: int, delta: float) -> float:
        if self.c is None:
            raise ValueError("deviational threshold needs c; call resolve(K) first")
        return math.log(self.c / delta) + self.alpha * math.log(t)

    def describe(self) -> str:
        return f"deviational c={self.c!r} alpha={self.alpha!r}"


ThresholdKind = HeuristicLogLog | Deviational


def threshold(kind: ThresholdKind, t: int, delta: float) -> float:
    if t < 1:
        raise ValueError("t must be at least 1")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    return kind(t, delta)


@dataclass(frozen=True)
class StoppingDecision:
    stop: bool
    recommended: int
    statistic: float
    threshold: float


def _pair_stat(kl, n_a, s_a, n_b, s_b) -> float:
    """``t f_{a,b}(w^t; mu_hat)`` written with counts and sums."""
    mu_a, mu_b = s_a / n_a, s_b / n_b
    if mu_a == mu_b:
        return 0.0
    m = (s_a + s_b) / (n_a + n_b)
    return n_a * kl(mu_a, m) + n_b * kl(mu_b, m)


def glr_statistic(history, model: ModelKind) -> tuple[float, int]:
    """GLR statistic at the empirical best arm, together with that arm."""
    if history.t == 0 or min(history.counts) < 1:
        raise ValueError("every arm needs at least one observation")
    leader, costs = history.challenger_costs(model.kl)
    return min(costs.values()), leader


def glr_statistic_full(history, model: ModelKind) -> tuple[float, int]:
    """Full ``max_a min_{b != a}`` form with the signed pairwise statistic.

    For ``mu_a < mu_b`` the pair contributes ``-t f_{b,a}``, so the outer maximum
    always sits at an empirical best arm; exact ties contribute zero.
    """
    if history.t == 0 or min(history.counts) < 1:
        raise ValueError("every arm needs at least one observation")
    kl, n, s = model.kl, history.counts, history.sums
    K = len(n)
    best_val, best_arm = -math.inf, 0
    for a in range(K):
        inner = math.inf
        for b in range(K):
            if b == a:
                continue
            z = _pair_stat(kl, n[a], s[a], n[b], s[b])
            if s[a] / n[a] < s[b] / n[b]:
                z = -z
            inner = min(inner, z)
        if inner > best_val:
            best_val, best_arm = inner, a
    return best_val, best_arm


def should_stop(history, model: ModelKind, kind: ThresholdKind, delta: float) -> StoppingDecision:
    stat, arm = glr_statistic(history, model)
    thr = threshold(kind, history.t, delta)
    return StoppingDecision(stat > thr, arm, stat, thr)
