"""Scenario definitions, seeded path sampling, replication aggregation and
the experiment outputs (trajectory CSV, plot data, summary JSON).

Determinism contract: replication r draws its generator from
SeedSequence(seed, spawn_key=(r,)), so identical configs produce
bit-identical records regardless of worker scheduling.
"""

from __future__ import annotations

import csv
import functools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .densities import (
    BoundsAB,
    Density,
    Linear,
    MonotoneHistogram,
    PiecewiseConstant,
    Quadratic,
    Uniform,
    density_from_dict,
    density_to_dict,
    log_pdf_at_sample,
)
from .evaluation import static_log_loss
from .grenander import WeightedCells, fit_constrained
from .online import EAState, OnlineConfig, ea_stream, og_stream, resolve_expert_source

MODEL_PRESETS = {
    "uniform": {"type": "uniform"},
    "linear": {"type": "linear", "delta0": 0.75, "delta1": 1.25},
    "quadratic": {"type": "quadratic"},
    "piecewise": {"type": "piecewise", "heights": [5.0 / 4, 13.0 / 12, 11.0 / 12, 3.0 / 4]},
    "changepoint": {
        "type": "changepoint",
        "pre": {"type": "linear", "delta0": 0.5, "delta1": 1.5},
        "post": {"type": "linear", "delta0": 0.75, "delta1": 1.25},
        "tau": 200,
    },
}

DEFAULT_SIM_BOUNDS = BoundsAB(0.05, 20.0)


@dataclass(frozen=True)
class ScenarioConfig:
    """One experiment: a data model, a horizon, replications and algorithms."""

    model: dict
    n: int
    replications: int
    seed: int
    algorithms: tuple
    bounds: BoundsAB

    def __post_init__(self):
        if self.n < 1 or self.replications < 1:
            raise ValueError("need n >= 1 and replications >= 1")
        if self.is_changepoint and not (0 < self.model["tau"] < self.n):
            raise ValueError("change point tau must satisfy 0 < tau < n")

    @property
    def is_changepoint(self) -> bool:
        return self.model.get("type") == "changepoint"

    def segments(self) -> list[tuple[Density, int]]:
        """(density, start index) pieces of the data-generating process."""
        if self.is_changepoint:
            return [
                (density_from_dict(self.model["pre"]), 0),
                (density_from_dict(self.model["post"]), self.model["tau"]),
            ]
        return [(density_from_dict(self.model), 0)]

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        model = d["model"]
        if isinstance(model, str):
            model = MODEL_PRESETS[model]
        bounds = d.get("bounds", {})
        return cls(
            model=model,
            n=int(d["n"]),
            replications=int(d.get("replications", d.get("B", 1))),
            seed=int(d.get("seed", 0)),
            algorithms=tuple(d.get("algorithms", ())),
            bounds=BoundsAB(
                float(bounds.get("a", DEFAULT_SIM_BOUNDS.a)),
                float(bounds.get("b", DEFAULT_SIM_BOUNDS.b)),
            ),
        )

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "n": self.n,
            "replications": self.replications,
            "seed": self.seed,
            "algorithms": list(self.algorithms),
            "bounds": {"a": self.bounds.a, "b": self.bounds.b},
        }


def replication_rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(rep,)))


def sample_path(scenario: ScenarioConfig, rep: int) -> np.ndarray:
    """Draw one stream; change-point scenarios switch density mid-stream."""
    rng = replication_rng(scenario.seed, rep)
    u = rng.random(scenario.n)
    segs = scenario.segments()
    xs = np.empty(scenario.n)
    starts = [s for _, s in segs] + [scenario.n]
    for (q, lo), hi in zip(segs, starts[1:]):
        xs[lo:hi] = q.ppf(u[lo:hi])
    return xs


def _algo_id(cfg: dict, index: int) -> str:
    return cfg.get("id", cfg.get("algo", f"alg{index}"))


@functools.lru_cache(maxsize=32)
def _cached_experts(source_json: str, a: float, b: float, horizon: int):
    return resolve_expert_source(json.loads(source_json), BoundsAB(a, b), horizon)


def _run_replication(scenario: ScenarioConfig, rep: int) -> dict[str, np.ndarray]:
    xs = sample_path(scenario, rep)
    curves: dict[str, np.ndarray] = {}
    for i, acfg in enumerate(scenario.algorithms):
        cfg = OnlineConfig.from_dict(acfg)
        if cfg.algo == "og":
            losses, _, _ = og_stream(xs, cfg.bounds)
        else:
            experts = _cached_experts(
                json.dumps(cfg.expert_source or {"type": "default"}, sort_keys=True),
                cfg.a,
                cfg.b,
                cfg.horizon or scenario.n,
            )
            losses, _, _ = ea_stream(EAState(experts, horizon=cfg.horizon), xs)
        curves[_algo_id(acfg, i)] = -np.cumsum(losses)
    offline = fit_constrained(WeightedCells.from_sample(xs), scenario.bounds)
    curves["offline"] = np.cumsum(log_pdf_at_sample(offline, xs))
    if not scenario.is_changepoint:
        q = scenario.segments()[0][0]
        curves["truth"] = np.cumsum(q.logpdf(xs))
    return curves


def _run_replication_packed(args) -> dict[str, np.ndarray]:
    config_dict, rep = args
    return _run_replication(ScenarioConfig.from_dict(config_dict), rep)


@dataclass
class ExperimentResult:
    scenario: ScenarioConfig
    curves: dict = field(default_factory=dict)  # name -> (B, n) array

    @property
    def curve_names(self) -> list[str]:
        return sorted(self.curves)

    def mean_curve(self, name: str) -> np.ndarray:
        return np.mean(self.curves[name], axis=0)

    def stderr_final(self, name: str) -> float:
        finals = self.curves[name][:, -1]
        if finals.size < 2:
            return 0.0
        return float(np.std(finals, ddof=1) / math.sqrt(finals.size))

    def summary(self) -> dict:
        online_names = [
            _algo_id(cfg, i) for i, cfg in enumerate(self.scenario.algorithms)
        ]
        out = {
            "n": self.scenario.n,
            "replications": self.scenario.replications,
            "seed": self.scenario.seed,
            "model": self.scenario.model,
            "bounds": {"a": self.scenario.bounds.a, "b": self.scenario.bounds.b},
            "final_mean": {k: float(np.mean(v[:, -1])) for k, v in self.curves.items()},
            "final_stderr": {k: self.stderr_final(k) for k in self.curves},
        }
        offline_final = self.curves["offline"][:, -1]
        out["offline_dominates_online_paths"] = {
            k: float(np.mean(offline_final >= self.curves[k][:, -1] - 1e-8))
            for k in online_names
        }
        if "truth" in self.curves:
            out["offline_dominates_truth_paths"] = float(
                np.mean(offline_final >= self.curves["truth"][:, -1] - 1e-8)
            )
        regrets = {k: offline_final - self.curves[k][:, -1] for k in online_names}
        out["mean_final_regret"] = {k: float(np.mean(v)) for k, v in regrets.items()}
        if "ea" in regrets and "og" in regrets:
            out["ea_beats_og_fraction"] = float(np.mean(regrets["ea"] < regrets["og"]))
        return out

    def write_trajectories_csv(self, fh):
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["algorithm", "replication", "t", "cum_loglik"])
        for name in self.curve_names:
            arr = self.curves[name]
            for rep in range(arr.shape[0]):
                for t in range(arr.shape[1]):
                    writer.writerow([name, rep, t + 1, repr(float(arr[rep, t]))])

    def write_plotdata_csv(self, fh):
        names = self.curve_names
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t"] + names)
        means = {k: self.mean_curve(k) for k in names}
        for t in range(self.scenario.n):
            writer.writerow([t + 1] + [repr(float(means[k][t])) for k in names])


def run_experiment(scenario: ScenarioConfig, workers: int = 1) -> ExperimentResult:
    """All replications of a scenario; aggregation is order-independent."""
    reps = range(scenario.replications)
    if workers > 1:
        packed = [(scenario.to_dict(), r) for r in reps]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_rep = list(pool.map(_run_replication_packed, packed))
    else:
        per_rep = [_run_replication(scenario, r) for r in reps]
    names = per_rep[0].keys()
    curves = {k: np.vstack([d[k] for d in per_rep]) for k in names}
    return ExperimentResult(scenario=scenario, curves=curves)


def write_outputs(result: ExperimentResult, out_dir) -> list[str]:
    import os

    os.makedirs(out_dir, exist_ok=True)
    paths = []
    traj = os.path.join(out_dir, "trajectories.csv")
    with open(traj, "w", newline="") as fh:
        result.write_trajectories_csv(fh)
    paths.append(traj)
    plot = os.path.join(out_dir, "plotdata.csv")
    with open(plot, "w", newline="") as fh:
        result.write_plotdata_csv(fh)
    paths.append(plot)
    summ = os.path.join(out_dir, "summary.json")
    with open(summ, "w") as fh:
        json.dump(result.summary(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths.append(summ)
    return paths
