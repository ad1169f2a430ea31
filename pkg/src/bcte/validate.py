"""Property suites behind ``bcte validate``.

Each check returns a :class:`Check`; ``run_all`` executes them in order.  Random
instances come from a fixed seed so the report is reproducible.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import characteristic as ch
from .harness import BENCHMARKS, ExperimentConfig, run_experiment
from .models import Bernoulli, Exponential, Gaussian, Instance, ModelKind, Pareto, Poisson
from .policies import BCTE, RoundRobin, T3C, bcte_trace

# Models whose mean is the mean of the sufficient statistic; for these the
# weighted mean is the exact minimiser inside f_i, so g is concave and the
# envelope identities hold.
SMOOTH_MODELS = (Bernoulli(), Gaussian(1.0), Poisson(), Exponential())
ALL_MODELS = SMOOTH_MODELS + (Pareto(1.0),)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""
    seconds: float = 0.0


def random_means(model: ModelKind, K: int, rng: np.random.Generator, min_gap: float = 0.02) -> list[float]:
    """Means inside the model's domain with a unique best arm separated by ``min_gap`` (relative)."""
    while True:
        if isinstance(model, Bernoulli):
            mu = rng.uniform(0.05, 0.95, K)
        elif isinstance(model, Gaussian):
            mu = rng.normal(0.0, 1.0, K)
        elif isinstance(model, Poisson):
            mu = rng.uniform(0.5, 5.0, K)
        elif isinstance(model, Exponential):
            mu = rng.uniform(0.2, 3.0, K)
        elif isinstance(model, Pareto):
            mu = model.scale + rng.uniform(0.3, 5.0, K)
        else:
            raise TypeError(model)
        top = np.sort(mu)[::-1]
        if top[0] - top[1] >= min_gap * max(1.0, abs(top[0])):
            return mu.tolist()


def random_instance(model: ModelKind, K: int, rng: np.random.Generator) -> Instance:
    return Instance(model, random_means(model, K, rng))


def random_interior(K: int, rng: np.random.Generator) -> np.ndarray:
    w = rng.dirichlet(np.ones(K))
    w = np.maximum(w, 1e-6)
    return w / w.sum()


def check_subgradient(n_pairs: int = 1000, seed: int = 1) -> Check:
    rng = np.random.default_rng(seed)
    worst = -math.inf
    for k in range(n_pairs):
        model = SMOOTH_MODELS[k % len(SMOOTH_MODELS)]
        inst = random_instance(model, int(rng.integers(2, 7)), rng)
        w = random_interior(inst.K, rng)
        w2 = rng.dirichlet(np.ones(inst.K))
        v = ch.subgradient(w, inst)
        gap = ch.g_value(w2, inst) - ch.g_value(w, inst) - float(v @ (w2 - w))
        worst = max(worst, gap)
    return Check("subgradient inequality", bool(worst <= 1e-10), f"max violation {worst:.3g} over {n_pairs} pairs")


def check_k_l_roundtrip(n: int = 200, seed: int = 2, tol: float = ch.TOL) -> Check:
    rng = np.random.default_rng(seed)
    worst = 0.0
    monotone = True
    for k in range(n):
        inst = random_instance(ALL_MODELS[k % len(ALL_MODELS)], 3, rng)
        i = next(j for j in range(inst.K) if j != inst.best)
        cap = inst.model.kl(inst.means[inst.best], inst.means[i])
        ys = np.sort(rng.uniform(0, 0.999 * cap, 5))
        xs = [ch.l_inverse(i, y, inst, tol) for y in ys]
        monotone = monotone and all(a <= b for a, b in zip(xs, xs[1:]))
        for x, y in zip(xs, ys):
            worst = max(worst, abs(ch.k_value(i, x, inst) - y) / max(1.0, y))
    ok = bool(worst <= tol and monotone)
    return Check("k/l inverse round-trip", ok, f"max residual {worst:.3g}, monotone={monotone}")


def check_h_concavity(n: int = 200, seed: int = 3) -> Check:
    rng = np.random.default_rng(seed)
    zs = np.linspace(0, 1, 201)
    worst_conc, worst_bal, worst_ends = -math.inf, 0.0, 0.0
    for k in range(n):
        inst = random_instance(SMOOTH_MODELS[k % len(SMOOTH_MODELS)], 3, rng)
        i = next(j for j in range(inst.K) if j != inst.best)
        h = np.array([ch.h_value(i, z, inst) for z in zs])
        second_diff = h[:-2] - 2 * h[1:-1] + h[2:]
        worst_conc = max(worst_conc, float(second_diff.max()))
        worst_ends = max(worst_ends, abs(h[0]), abs(h[-1]))
        # z* where the two divergences balance is the maximiser of h
        kl, mu_b, mu_i = inst.model.kl, inst.means[inst.best], inst.means[i]

        def balance(z):
            m = (1 - z) * mu_b + z * mu_i
            return kl(mu_b, m) - kl(mu_i, m)

        z_star = ch.bisect(balance, 0.0, 1.0, 1e-14)
        worst_bal = max(worst_bal, max(0.0, float(h.max()) - ch.h_value(i, z_star, inst)))
    ok = bool(worst_conc <= 1e-12 and worst_ends <= 1e-15 and worst_bal <= 1e-12)
    return Check("h concavity and z* balance", ok,
                 f"max 2nd diff {worst_conc:.3g}, endpoints {worst_ends:.3g}, grid-over-z* {worst_bal:.3g}")


def check_F_bound(n: int = 100, seed: int = 4) -> Check:
    rng = np.random.default_rng(seed)
    lo, hi = math.inf, -math.inf
    ok = True
    for k in range(n):
        inst = random_instance(ALL_MODELS[k % len(ALL_MODELS)], int(rng.integers(2, 8)), rng)
        _, _, y_low = ch.lower_allocation(inst)
        F = ch.F_mu(y_low, inst)
        ratio_lo, ratio_hi = F - 1, F - (inst.K - 1)
        ok = ok and ratio_lo >= -1e-8 and ratio_hi <= 1e-8
        lo, hi = min(lo, F), max(hi, F / (inst.K - 1))
    return Check("F(y_lower) in [1, K-1]", ok, f"min F {lo:.6g}, max F/(K-1) {hi:.6g}")


def check_trace_monotonicity(n_traces: int = 100, horizon: int = 2000, seed: int = 5) -> Check:
    """``t f_i(w^t; mu)`` at the true means never decreases along BC-TE traces."""
    insts = [BENCHMARKS["B5"](), BENCHMARKS["G4"]()]
    worst = -math.inf
    for r in range(n_traces):
        inst = insts[r % 2]
        kl, mu, b = inst.model.kl, inst.means, inst.best
        trace = bcte_trace(inst, horizon, [seed, r])
        n = [0] * inst.K
        prev = [0.0] * inst.K
        for step in trace:
            n[step.arm] += 1
            for i in range(inst.K):
                if i == b:
                    continue
                cur = ch._pair_cost(kl, mu[b], mu[i], n[b], n[i])
                worst = max(worst, prev[i] - cur - 1e-12 * max(1.0, cur))
                prev[i] = cur
    return Check("t f_i non-decreasing along traces", worst <= 0.0,
                 f"max drop beyond slack {worst:.3g} over {n_traces} traces")


def check_gradient(n: int = 200, seed: int = 6, step: float = 1e-6) -> Check:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(n):
        inst = random_instance(SMOOTH_MODELS[k % len(SMOOTH_MODELS)], 3, rng)
        kl, mu, b = inst.model.kl, inst.means, inst.best
        i = next(j for j in range(inst.K) if j != b)
        wb, wi = rng.uniform(0.1, 0.9, 2)
        m = (wb * mu[b] + wi * mu[i]) / (wb + wi)
        f = lambda x, y: ch._pair_cost(kl, mu[b], mu[i], x, y)  # noqa: E731
        d_b = (f(wb + step, wi) - f(wb - step, wi)) / (2 * step)
        d_i = (f(wb, wi + step) - f(wb, wi - step)) / (2 * step)
        for fd, exact in ((d_b, kl(mu[b], m)), (d_i, kl(mu[i], m))):
            worst = max(worst, abs(fd - exact) / max(abs(exact), 1e-12))
    return Check("finite-difference gradient of f_i", bool(worst <= 1e-4), f"max rel error {worst:.3g}")


def check_grid_oracle(n: int = 10, seed: int = 7, resolution: int = 400) -> Check:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        inst = random_instance(Bernoulli(), 3, rng)
        exact = ch.t_star(inst)
        grid = ch.brute_force_t_star(inst, resolution)
        worst = max(worst, abs(exact - grid) / exact)
    return Check("grid oracle for T* (K=3)", bool(worst <= 0.02), f"max rel gap {worst:.3g}")


def check_replay(seed: int = 8) -> Check:
    cfg = ExperimentConfig(BENCHMARKS["B5"](), (BCTE(), RoundRobin(), T3C()), (0.2, 0.1),
                           n_runs=6, master_seed=seed)
    ref = run_experiment(cfg, workers=1, chunk_size=2)
    again = run_experiment(cfg, workers=2, chunk_size=3)
    lines_a = [r.to_json() for r in ref]
    lines_b = [r.to_json() for r in again]
    return Check("replay determinism across worker counts", lines_a == lines_b, f"{len(ref)} records")


CHECKS: list[Callable[[], Check]] = [
    check_subgradient,
    check_k_l_roundtrip,
    check_h_concavity,
    check_F_bound,
    check_trace_monotonicity,
    check_gradient,
    check_grid_oracle,
    check_replay,
]


def run_all(checks=None) -> list[Check]:
    out = []
    for fn in checks or CHECKS:
        start = time.perf_counter()
        try:
            c = fn()
        except Exception as exc:  # a crash is a failed property, not an abort
            c = Check(fn.__name__, False, f"raised {exc!r}")
        c.seconds = time.perf_counter() - start
        out.append(c)
    return out
