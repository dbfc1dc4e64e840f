import io
import json
import math

import numpy as np
import pytest

from monodens import BoundsAB, Linear, PiecewiseConstant, run_experiment, sample_path
from monodens.sim import MODEL_PRESETS, ExperimentResult, ScenarioConfig, replication_rng


def make_scenario(model, n=60, reps=3, seed=5, algorithms=None, a=0.25, b=4.0):
    return ScenarioConfig.from_dict(
        {
            "model": model,
            "n": n,
            "replications": reps,
            "seed": seed,
            "algorithms": algorithms
            or [
                {"algo": "og", "a": a, "b": b},
                {
                    "algo": "ea",
                    "a": a,
                    "b": b,
                    "expert_source": {"type": "factory", "bin_counts": [1, 2, 4], "levels": 5},
                },
            ],
            "bounds": {"a": a, "b": b},
        }
    )


class TestSamplePath:
    def test_uniform_model_returns_raw_variates(self):
        sc = make_scenario("uniform", n=40)
        xs = sample_path(sc, 0)
        raw = replication_rng(sc.seed, 0).random(sc.n)
        assert np.array_equal(xs, raw)

    def test_changepoint_seed_replay(self):
        sc = make_scenario("changepoint", n=300)
        tau = sc.model["tau"]
        xs = sample_path(sc, 2)
        u = replication_rng(sc.seed, 2).random(sc.n)
        pre = Linear(0.5, 1.5)
        post = Linear(0.75, 1.25)
        assert np.array_equal(xs[:tau], pre.ppf(u[:tau]))
        assert np.array_equal(xs[tau:], post.ppf(u[tau:]))

    def test_piecewise_bin_frequencies(self):
        q = PiecewiseConstant(MODEL_PRESETS["piecewise"]["heights"])
        rng = np.random.default_rng(3)
        n = 100_000
        xs = q.ppf(rng.random(n))
        expected = np.array([5.0 / 16, 13.0 / 48, 11.0 / 48, 3.0 / 16])
        counts = np.histogram(xs, bins=np.linspace(0, 1, 5))[0] / n
        stderr = np.sqrt(expected * (1 - expected) / n)
        assert np.all(np.abs(counts - expected) <= 3 * stderr)

    def test_tau_must_be_inside_horizon(self):
        with pytest.raises(ValueError):
            make_scenario("changepoint", n=150)


class TestRunExperiment:
    def test_uniform_truth_degenerate_bounds_all_zero(self):
        sc = ScenarioConfig.from_dict(
            {
                "model": "uniform",
                "n": 25,
                "replications": 2,
                "seed": 1,
                "algorithms": [
                    {"algo": "og", "a": 1.0, "b": 1.0},
                    {
                        "algo": "ea",
                        "a": 1.0,
                        "b": 1.0,
                        "expert_source": {"type": "factory", "bin_counts": [1], "levels": 1},
                    },
                ],
                "bounds": {"a": 1.0, "b": 1.0},
            }
        )
        res = run_experiment(sc)
        for name in ("og", "ea", "offline", "truth"):
            assert np.allclose(res.curves[name], 0.0, atol=1e-9)

    def test_offline_dominates_everything_at_n(self):
        sc = make_scenario("linear", n=80, reps=4)
        res = run_experiment(sc)
        offline_final = res.curves["offline"][:, -1]
        for name in ("og", "ea", "truth"):
            assert np.all(offline_final >= res.curves[name][:, -1] - 1e-8)

    def test_changepoint_has_no_truth_curve(self):
        sc = make_scenario("changepoint", n=250, reps=2)
        res = run_experiment(sc)
        assert "truth" not in res.curves
        summary = res.summary()
        assert "ea_beats_og_fraction" in summary

    def test_deterministic_runs(self):
        sc = make_scenario("linear", n=30, reps=2)
        r1 = run_experiment(sc)
        r2 = run_experiment(sc)
        for k in r1.curves:
            assert np.array_equal(r1.curves[k], r2.curves[k])

    def test_parallel_matches_serial(self):
        sc = make_scenario("linear", n=30, reps=4)
        serial = run_experiment(sc, workers=1)
        parallel = run_experiment(sc, workers=2)
        for k in serial.curves:
            assert np.array_equal(serial.curves[k], parallel.curves[k])

    def test_summary_fields(self):
        sc = make_scenario("linear", n=30, reps=2)
        summary = run_experiment(sc).summary()
        assert set(summary["final_mean"]) == {"og", "ea", "offline", "truth"}
        assert summary["offline_dominates_online_paths"]["og"] == 1.0


class TestWriters:
    def test_trajectories_schema(self):
        sc = make_scenario("linear", n=10, reps=2)
        res = run_experiment(sc)
        buf = io.StringIO()
        res.write_trajectories_csv(buf)
        lines = buf.getvalue().strip().splitlines()
        assert lines[0] == "algorithm,replication,t,cum_loglik"
        # one row per (curve, replication, t)
        assert len(lines) == 1 + len(res.curves) * 2 * 10

    def test_plotdata_schema(self):
        sc = make_scenario("linear", n=10, reps=2)
        res = run_experiment(sc)
        buf = io.StringIO()
        res.write_plotdata_csv(buf)
        lines = buf.getvalue().strip().splitlines()
        assert lines[0].split(",")[0] == "t"
        assert len(lines) == 11

    def test_config_round_trip(self):
        sc = make_scenario("linear", n=10, reps=2)
        again = ScenarioConfig.from_dict(json.loads(json.dumps(sc.to_dict())))
        assert again == sc
