import csv
import io
import json
import math
from dataclasses import dataclass

import mpmath
import numpy as np
import pytest

from bcte import characteristic as ch
from bcte import harness as hz
from bcte.models import Gaussian, Instance, Pareto
from bcte.policies import BCTE, T3C, RoundRobin, TaSD
from bcte.stopping import HeuristicLogLog

B5 = hz.BENCHMARKS["B5"]
G4 = hz.BENCHMARKS["G4"]


def student_t_sf(t, df):
    """Upper tail of Student's t by quadrature of the density."""
    mpmath.mp.dps = 30
    df = mpmath.mpf(df)
    c = mpmath.gamma((df + 1) / 2) / (mpmath.sqrt(df * mpmath.pi) * mpmath.gamma(df / 2))
    return float(mpmath.quad(lambda x: c * (1 + x * x / df) ** (-(df + 1) / 2), [t, mpmath.inf]))


class TestRunOnce:
    def test_easy_instance(self):
        inst = Instance(Gaussian(1.0), [10.0, 0.0])
        rec = hz.run_once(inst, RoundRobin(), 0.2, 0)
        assert rec.correct and not rec.truncated and rec.tau <= 30

    def test_deterministic(self):
        a = hz.run_once(B5(), BCTE(), 0.1, 5, master_seed=3)
        b = hz.run_once(B5(), BCTE(), 0.1, 5, master_seed=3)
        assert a == b and a.to_json() == b.to_json()
        assert a != hz.run_once(B5(), BCTE(), 0.1, 6, master_seed=3)

    def test_truncation(self):
        inst = B5()
        rec = hz.run_once(inst, BCTE(), 0.01, 0, horizon_cap=2 * inst.K)
        assert rec.truncated and not rec.correct and rec.tau == 2 * inst.K

    def test_record_invariants(self):
        inst = G4()
        for r in range(5):
            rec = hz.run_once(inst, TaSD(), 0.2, r, horizon_cap=50_000)
            assert rec.tau <= 50_000
            assert rec.correct == (rec.recommended == inst.best and not rec.truncated)

    def test_timing_only_when_requested(self):
        assert hz.run_once(B5(), RoundRobin(), 0.2, 0).wall_ns_per_step == 0
        assert hz.run_once(B5(), RoundRobin(), 0.2, 0, timing=True).wall_ns_per_step > 0

    def test_pareto_runs(self):
        inst = hz.BENCHMARKS["P4"]()
        for policy in (BCTE(), T3C(), TaSD()):
            rec = hz.run_once(inst, policy, 0.1, 0)
            assert rec.tau > 2 * inst.K and not rec.truncated


class TestSeeds:
    def test_distinct_streams(self):
        keys = {tuple(hz.run_seed(0, p, d, r).generate_state(4))
                for p in ("BCTE", "RR") for d in (0.1, 0.01) for r in range(50)}
        assert len(keys) == 200

    def test_delta_bits_distinguish_close_values(self):
        a = hz.run_seed(0, "BCTE", 0.1, 0).generate_state(2)
        b = hz.run_seed(0, "BCTE", np.nextafter(0.1, 1), 0).generate_state(2)
        assert not np.array_equal(a, b)


class TestRunExperiment:
    def config(self, n=4):
        return hz.ExperimentConfig(B5(), (BCTE(), RoundRobin()), (0.2, 0.1), n_runs=n, master_seed=1)

    def test_singleton_equals_run_once(self):
        cfg = hz.ExperimentConfig(B5(), (BCTE(),), (0.1,), n_runs=1, master_seed=9)
        assert hz.run_experiment(cfg, workers=1) == [hz.run_once(B5(), BCTE(), 0.1, 0, 9)]

    def test_worker_permutation(self):
        cfg = self.config()
        ref = [r.to_json() for r in hz.run_experiment(cfg, workers=1, chunk_size=4)]
        assert ref == [r.to_json() for r in hz.run_experiment(cfg, workers=3, chunk_size=1)]
        assert len(ref) == 4 * 2 * 2

    def test_order(self):
        recs = hz.run_experiment(self.config(3), workers=1)
        assert [(r.policy, r.delta, r.run_index) for r in recs] == [
            (p, d, i) for p in ("BCTE", "RR") for d in (0.2, 0.1) for i in range(3)]

    def test_failure_has_replay_context(self):
        @dataclass(frozen=True)
        class Broken:
            name = "Broken"

            def choose(self, history, model, rng):
                raise ZeroDivisionError("boom")

        cfg = hz.ExperimentConfig(B5(), (Broken(),), (0.1,), n_runs=2, master_seed=4)
        with pytest.raises(RuntimeError, match=r"policy=Broken delta=0.1 run_index=0 master_seed=4"):
            hz.run_experiment(cfg, workers=1)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            hz.ExperimentConfig(B5(), (BCTE(),), (0.1,), n_runs=0)
        with pytest.raises(ValueError):
            hz.ExperimentConfig(B5(), (BCTE(),), (0.1, 0.1))
        with pytest.raises(ValueError):
            hz.ExperimentConfig(B5(), (BCTE(),), (1.5,))
        with pytest.raises(ValueError):
            hz.ExperimentConfig(B5(), (BCTE(),), (0.1,), horizon_cap=9)
        with pytest.raises(ValueError):
            hz.ExperimentConfig(B5(), (BCTE(),), (0.1,), master_seed=2**64)

    def test_workers_env(self, monkeypatch):
        monkeypatch.setenv("BCTE_WORKERS", "3")
        assert hz.default_workers() == 3


class TestAggregate:
    def test_fields(self):
        recs = hz.run_experiment(hz.ExperimentConfig(G4(), (BCTE(), RoundRobin()), (0.2, 0.01), n_runs=12,
                                                     master_seed=2), workers=1)
        aggs = hz.aggregate(recs)
        assert len(aggs) == 4
        for a in aggs:
            assert a.n == 12 and 0 <= a.error_rate <= 1 and a.truncated == 0
            assert set(a.welch_p_values) == {"BCTE", "RR"} - {a.policy}
        by = {(a.policy, a.delta): a for a in aggs}
        for p in ("BCTE", "RR"):
            assert by[(p, 0.01)].mean_tau > by[(p, 0.2)].mean_tau
        text = hz.aggregates_csv(aggs, ["BCTE", "RR"])
        rows = list(csv.DictReader(io.StringIO(text)))
        assert list(rows[0]) == ["policy", "delta", "n", "mean_tau", "std_tau", "stderr", "error_rate",
                                 "truncated", "welch_vs_BCTE", "welch_vs_RR"]
        assert float(rows[0]["mean_tau"]) == aggs[0].mean_tau

    def test_truncated_excluded(self):
        recs = [hz.RunRecord("X", 0.1, i, 100 + i, 0, True, 0) for i in range(3)]
        recs.append(hz.RunRecord("X", 0.1, 3, 10**6, 1, False, 0, truncated=True))
        (a,) = hz.aggregate(recs)
        assert a.n == 4 and a.truncated == 1 and a.mean_tau == 101 and a.error_rate == 0

    def test_record_io(self, tmp_path):
        recs = hz.run_experiment(hz.ExperimentConfig(B5(), (BCTE(),), (0.2,), n_runs=3), workers=1)
        path = tmp_path / "runs.jsonl"
        hz.write_records(recs, path)
        assert hz.read_records(path) == recs
        line = json.loads(path.read_text().splitlines()[0])
        assert list(line) == ["policy", "delta", "run_index", "tau", "recommended", "correct",
                              "te_rounds", "truncated", "wall_ns_per_step"]


class TestWelch:
    def test_identical(self):
        x = [1.0, 2.0, 3.0, 4.0]
        assert hz.welch_one_sided(x, x) == (0.5, False)

    def test_separated(self):
        rng = np.random.default_rng(0)
        b = rng.normal(0, 1, 1000)
        p, sig = hz.welch_one_sided(b - 10, b)
        assert p < 1e-6 and sig

    def test_reference_value(self):
        assert student_t_sf(2.0, 10) == pytest.approx(0.0367, abs=5e-5)

    def test_against_quadrature(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            a, b = rng.normal(0, 1, 8), rng.normal(0.5, 2, 13)
            va, vb = a.var(ddof=1) / 8, b.var(ddof=1) / 13
            t = (a.mean() - b.mean()) / math.sqrt(va + vb)
            df = (va + vb) ** 2 / (va**2 / 7 + vb**2 / 12)
            p, _ = hz.welch_one_sided(a, b)
            assert p == pytest.approx(student_t_sf(-t, df), rel=1e-8)

    def test_degenerate(self):
        with pytest.raises(ValueError):
            hz.welch_one_sided([1.0, 1.0], [2.0, 2.0])
        with pytest.raises(ValueError):
            hz.welch_one_sided([1.0], [2.0, 3.0])


class TestBinomialUpper:
    @pytest.mark.parametrize("errors,n", [(0, 100), (3, 1000), (50, 1000), (9, 10)])
    def test_against_tail_inversion(self, errors, n):
        u = hz.binomial_upper(errors, n, 0.99)
        cdf = sum(math.comb(n, k) * u**k * (1 - u) ** (n - k) for k in range(errors + 1))
        assert cdf == pytest.approx(0.01, rel=1e-6)

    def test_all_errors(self):
        assert hz.binomial_upper(5, 5) == 1.0


class TestLowerBounds:
    def test_lb_values(self):
        inst = B5()
        assert hz.lower_bound(inst, 0.1) == pytest.approx(574, abs=1)
        assert hz.lower_bound(inst, 0.1) == pytest.approx(
            ch.t_star(inst) * (0.1 * math.log(0.1 / 0.9) + 0.9 * math.log(0.9 / 0.1)), rel=1e-12)
        assert hz.asymptotic_lower_bound(inst, 0.1) == pytest.approx(ch.t_star(inst) * math.log(1 / 0.24))

    def scan(self, inst, delta):
        g = 1.0 / ch.t_star(inst)
        t = 1
        while t * g < math.log((math.log(t) + 1) / delta):
            t += 1
        return t

    @pytest.mark.parametrize("key,delta,ref", [("B5", 0.1, 1442), ("G4", 0.01, 3062)])
    def test_plb(self, key, delta, ref):
        inst = hz.BENCHMARKS[key]()
        plb = hz.practical_lower_bound(inst, delta, HeuristicLogLog())
        assert plb == self.scan(inst, delta)
        assert abs(plb - ref) <= 1

    def test_validation(self):
        with pytest.raises(ValueError):
            hz.lower_bound(B5(), 0.0)
        with pytest.raises(ValueError):
            hz.practical_lower_bound(B5(), 1.0)


class TestSweep:
    def test_two_arm_rows(self):
        rows, dropped = hz.ratio_sweep(["bernoulli", "gaussian", "poisson", "exponential"], "mu1", [2])
        assert not dropped
        for r in rows:
            assert r.ratio_lower == pytest.approx(1.0, abs=1e-6)

    def test_mu1_direction(self):
        (row,), _ = hz.ratio_sweep(["bernoulli"], "mu1", [10])
        assert 1 <= row.ratio_lower < row.ratio_half

    def test_worst_family_bounded(self):
        rows, _ = hz.ratio_sweep([Gaussian(1.0)], "worst", [3, 10, 30])
        for r in rows:
            assert 1 <= r.ratio_lower <= 2 + 1e-9
        assert rows[-1].ratio_lower > rows[0].ratio_lower

    def test_domain_exits_recorded(self):
        rows, dropped = hz.ratio_sweep([Pareto(1.0), "bernoulli"], "mu1", [3, 4])
        assert [(m, k) for m, k, _ in dropped] == [("pareto", 3), ("pareto", 4)]
        assert len(rows) == 2

    def test_csv(self):
        rows, _ = hz.ratio_sweep(["gaussian"], "mu2", [2, 3])
        text = hz.sweep_csv(rows)
        assert text.splitlines()[0] == "model,K,ratio_lower,ratio_half"
        assert float(text.splitlines()[2].split(",")[2]) == rows[1].ratio_lower

    def test_family_validation(self):
        with pytest.raises(ValueError):
            hz.family_means("mu3", 5)
        assert hz.family_means("mu1", 4) == [0.3, 0.21, 0.209, 0.208]
        assert hz.family_means("worst", 3) == [0.3, 0.21, 0.21]
