"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line.

Tolerances are pinned below and are not to be loosened.  Run alone with
``pytest tests/test_acceptance.py -v``; the summary lines appear at the end
of the session.
"""

import math
import time

import numpy as np
import pytest

from bcte import characteristic as ch
from bcte import harness as hz
from bcte.models import Bernoulli, Exponential, Gaussian, Instance, Pareto, Poisson
from bcte.policies import BCTE
from bcte.stopping import HeuristicLogLog
from bcte.validate import random_instance, run_all

from conftest import ACCEPTANCE_LINES

# criterion 1
W_STAR_REF = {
    "B5": (0.43, 0.25, 0.18, 0.13, 0.10),
    "G4": (0.41, 0.38, 0.15, 0.06),
    "E5": (0.41, 0.40, 0.13, 0.05, 0.01),
    "P4": (0.34, 0.60, 0.04, 0.01),
}
W_STAR_TOL = 0.01
SOLVE_SECONDS = 1.0
# criterion 2
DELTAS = (0.2, 0.1, 0.01, 0.001)
REF_LB = {"B5": (272, 574, 1471, 2252), "G4": (374, 791, 2026, 3101)}
REF_PLB = {"B5": (1208, 1442, 2211, 2974), "G4": (1683, 2004, 3062, 4112)}
ROUND_TOL = 1
# criterion 3
N_RUNS = 1000
REF_TAU = {("B5", 0.1): 1288, ("B5", 0.01): 2064, ("G4", 0.1): 1759}
TAU_REL = 0.10
# criterion 4
PAC_DELTAS = (0.1, 0.2)
PAC_CONFIDENCE = 0.99
# criteria 5 and 6
REL_TOL = 1e-6
N_TWO_ARM = 100
N_GAUSS = 50
G4_T_LOWER = 450.52
G4_T_LOWER_ABS = 0.01
# criterion 7
RATIO_K = (10, 20, 50)
# criterion 8
VALIDATE_SECONDS = 120.0


def report(label, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


@pytest.mark.parametrize("key", list(W_STAR_REF))
def test_c1_optimal_weights(key):
    inst = hz.BENCHMARKS[key]()
    start = time.perf_counter()
    w, _ = ch.solve_w_star(inst)
    elapsed = time.perf_counter() - start
    err = float(np.max(np.abs(np.array(w.tolist()) - W_STAR_REF[key])))
    got = "(" + ", ".join(f"{x:.3f}" for x in w) + ")"
    ok = report(f"C1 w*({key})", err <= W_STAR_TOL and elapsed < SOLVE_SECONDS,
                f"{got} vs {W_STAR_REF[key]}, max err {err:.4f} (tol {W_STAR_TOL}), {elapsed:.3f}s")
    assert ok


@pytest.mark.parametrize("key", ["B5", "G4"])
def test_c2_lower_bound_columns(key):
    inst = hz.BENCHMARKS[key]()
    start = time.perf_counter()
    ts = ch.t_star(inst)
    lb = [hz.lower_bound(inst, d, ts) for d in DELTAS]
    plb = [hz.practical_lower_bound(inst, d, HeuristicLogLog(), ts) for d in DELTAS]
    elapsed = time.perf_counter() - start
    lb_err = max(abs(a - b) for a, b in zip(lb, REF_LB[key]))
    plb_err = max(abs(a - b) for a, b in zip(plb, REF_PLB[key]))
    ok = report(f"C2 LB/PLB({key})", lb_err <= ROUND_TOL and plb_err <= ROUND_TOL and elapsed < 1.0,
                f"LB {[round(x) for x in lb]} PLB {plb}; max dev {lb_err:.2f}/{plb_err} rounds, {elapsed:.3f}s")
    assert ok


@pytest.fixture(scope="module")
def bcte_runs():
    """1000 heuristic-threshold BC-TE runs per cell; shared by criteria 3 and 4."""
    out = {}
    for key, deltas in (("B5", (0.2, 0.1, 0.01)), ("G4", (0.2, 0.1))):
        cfg = hz.ExperimentConfig(hz.BENCHMARKS[key](), (BCTE(),), deltas, n_runs=N_RUNS,
                                  master_seed=20240101, threshold=HeuristicLogLog())
        for rec in hz.run_experiment(cfg):
            out.setdefault((key, rec.delta), []).append(rec)
    return out


@pytest.mark.parametrize("cell", list(REF_TAU), ids=lambda c: f"{c[0]}-{c[1]}")
def test_c3_sample_complexity(bcte_runs, cell):
    recs = bcte_runs[cell]
    taus = np.array([r.tau for r in recs if not r.truncated], dtype=float)
    mean = taus.mean()
    target = REF_TAU[cell]
    rel = abs(mean - target) / target
    ok = report(f"C3 mean tau {cell[0]} delta={cell[1]}",
                rel <= TAU_REL and len(taus) == N_RUNS,
                f"{mean:.1f} +/- {taus.std(ddof=1) / math.sqrt(len(taus)):.1f} vs {target} "
                f"(rel {rel:.3f}, tol {TAU_REL}), {N_RUNS - len(taus)} truncated")
    assert ok


@pytest.mark.parametrize("key", ["B5", "G4"])
@pytest.mark.parametrize("delta", PAC_DELTAS)
def test_c4_delta_pac(bcte_runs, key, delta):
    recs = bcte_runs[(key, delta)]
    errors = sum(not r.correct for r in recs)
    upper = hz.binomial_upper(errors, len(recs), PAC_CONFIDENCE)
    ok = report(f"C4 error rate {key} delta={delta}", upper <= delta,
                f"{errors}/{len(recs)} errors, 99% upper bound {upper:.4f} <= {delta}")
    assert ok


def test_c5_two_arm_optimality():
    rng = np.random.default_rng(5)
    models = [Bernoulli(), Gaussian(1.0), Poisson(), Exponential(), Pareto(1.0)]
    worst = 0.0
    for k in range(N_TWO_ARM):
        inst = random_instance(models[k % 5], 2, rng)
        ts = ch.t_star(inst)
        worst = max(worst, abs(ch.t_lower(inst)[0] - ts) / ts)
    ok = report("C5 two-arm T_lower = T*", worst <= REL_TOL,
                f"max rel gap {worst:.2e} over {N_TWO_ARM} instances (tol {REL_TOL})")
    assert ok


def test_c6_gaussian_closed_form():
    rng = np.random.default_rng(6)
    worst, bounds_ok = 0.0, True
    for _ in range(N_GAUSS):
        inst = random_instance(Gaussian(float(rng.uniform(0.25, 4.0))), int(rng.integers(2, 9)), rng)
        tl, ts = ch.t_lower(inst)[0], ch.t_star(inst)
        closed = ch.gaussian_t_lower_closed(inst)
        worst = max(worst, abs(tl - closed) / closed)
        bounds_ok = bounds_ok and ts * (1 - 1e-9) <= tl <= 2 * ts * (1 + 1e-9)
    g4 = ch.t_lower(hz.BENCHMARKS["G4"]())[0]
    ok = report("C6 Gaussian closed form",
                worst <= REL_TOL and bounds_ok and abs(g4 - G4_T_LOWER) <= G4_T_LOWER_ABS,
                f"max rel gap {worst:.2e} (tol {REL_TOL}), T* <= T_lower <= 2T* on all: {bounds_ok}, "
                f"T_lower(G4) = {g4:.3f}")
    assert ok


def test_c7_ratio_direction():
    rows, dropped = hz.ratio_sweep(["bernoulli", "gaussian"], "mu1", RATIO_K)
    bad = [(r.model, r.K) for r in rows if not 1 <= r.ratio_lower < r.ratio_half]
    detail = ", ".join(f"{r.model[0]}K{r.K}: {r.ratio_lower:.4f}<{r.ratio_half:.4f}" for r in rows)
    ok = report("C7 ratio direction mu1", not bad and not dropped and len(rows) == 6, detail)
    assert ok


def test_c8_property_suites():
    start = time.perf_counter()
    checks = run_all()
    elapsed = time.perf_counter() - start
    failed = [c.name for c in checks if not c.passed]
    ok = report("C8 property suites", not failed and elapsed < VALIDATE_SECONDS,
                f"{len(checks) - len(failed)}/{len(checks)} pass in {elapsed:.1f}s"
                + (f"; failed: {failed}" if failed else ""))
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
