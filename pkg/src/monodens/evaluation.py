"""Loss ledgers, regret against the offline benchmark, good-set checks and
Monte Carlo excess-KL-risk curves."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .densities import Density, MonotoneHistogram, log_pdf_at_sample
from .grenander import WeightedCells, fit_constrained


class LossLedger:
    """Per-step log-losses with +inf as an absorbing sentinel.

    A +inf entry marks a predictor that assigned zero density to an
    observed point; cumulative sums keep it absorbing.
    """

    __slots__ = ("_losses",)

    def __init__(self, losses=None):
        self._losses = [float(v) for v in losses] if losses is not None else []

    def record(self, loss: float):
        self._losses.append(float(loss))

    def __len__(self) -> int:
        return len(self._losses)

    @property
    def per_step(self) -> np.ndarray:
        return np.asarray(self._losses, dtype=float)

    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.per_step)

    def total(self) -> float:
        return float(np.sum(self.per_step)) if self._losses else 0.0

    @property
    def has_infinite(self) -> bool:
        return any(math.isinf(v) for v in self._losses)


def static_log_loss(d: Density, xs, at_sample: bool = True) -> float:
    """Cumulative loss -sum log f(x_t) of a fixed density.

    With at_sample=True histogram samples pay the cell they close, the
    convention of the offline MLE objective; parametric densities are always
    evaluated directly.
    """
    xs = np.asarray(xs, dtype=float)
    if xs.size == 0:
        return 0.0
    if at_sample:
        lp = log_pdf_at_sample(d, xs)
    else:
        lp = d.logpdf(xs)
    lp = np.asarray(lp, dtype=float)
    if np.any(np.isneginf(lp)):
        return math.inf
    return float(-np.sum(lp))


def _total_loss(online) -> float:
    if isinstance(online, LossLedger):
        return online.total()
    if np.isscalar(online):
        return float(online)
    return float(np.sum(np.asarray(online, dtype=float)))


def regret_vs_offline(stream, online, bounds) -> float:
    """L(online, n) - L(constrained offline fit, n) on the realized stream."""
    stream = np.asarray(stream, dtype=float)
    online_total = _total_loss(online)
    if math.isinf(online_total):
        return math.inf
    bench = fit_constrained(WeightedCells.from_sample(stream), bounds)
    return online_total - static_log_loss(bench, stream, at_sample=True)


@dataclass(frozen=True)
class GoodSetParams:
    beta: float
    gamma: float

    def __post_init__(self):
        if self.beta <= 0 or self.gamma <= 0:
            raise ValueError("beta and gamma must be positive")
        if not self.gamma < self.beta - 0.5:
            warnings.warn(
                f"gamma={self.gamma} is not below beta - 1/2 = {self.beta - 0.5}; "
                "the regret guarantee does not cover this configuration",
                stacklevel=2,
            )


@dataclass(frozen=True)
class GoodSetReport:
    min_gap: float
    max_value: float
    gap_threshold: float
    boundary_threshold: float

    @property
    def is_member(self) -> bool:
        return self.min_gap >= self.gap_threshold and self.max_value <= self.boundary_threshold


def good_set_check(stream, n: int, params: GoodSetParams) -> GoodSetReport:
    """Minimum pairwise spacing and boundary margin report for a sequence."""
    xs = np.sort(np.asarray(stream, dtype=float))
    min_gap = float(np.min(np.diff(xs))) if xs.size >= 2 else math.inf
    max_value = float(xs[-1]) if xs.size else 0.0
    return GoodSetReport(
        min_gap=min_gap,
        max_value=max_value,
        gap_threshold=float(n) ** (-params.beta),
        boundary_threshold=1.0 - float(n) ** (-params.gamma),
    )


@dataclass(frozen=True)
class RiskCurve:
    """Monte Carlo excess-KL-risk estimates.

    cumulative_mean[t-1] is the estimated Risk(t); stderr is over the
    per-replication cumulative values. +inf KL contributions propagate into
    the means and are counted per step.
    """

    per_step_mean: np.ndarray
    per_step_stderr: np.ndarray
    cumulative_mean: np.ndarray
    cumulative_stderr: np.ndarray
    inf_counts: np.ndarray
    replications: int

    @property
    def t(self) -> np.ndarray:
        return np.arange(1, self.per_step_mean.size + 1)

    def write_csv(self, fh):
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "mean", "stderr", "replications"])
        for i in range(self.per_step_mean.size):
            writer.writerow(
                [
                    i + 1,
                    repr(float(self.cumulative_mean[i])),
                    repr(float(self.cumulative_stderr[i])),
                    self.replications,
                ]
            )


def excess_kl_risk_mc(config, q: Density, n: int, replications: int, seed: int) -> RiskCurve:
    """Average KL(q || predictor_t) over independent runs of an algorithm.

    Per-replication seeds come from SeedSequence(seed, spawn_key=(rep,)), so
    results do not depend on scheduling. The KL terms are computed exactly
    on histogram cells, never by resampling.
    """
    from .online import EAState, OnlineConfig, ea_stream, og_stream, resolve_expert_source

    cfg = config if isinstance(config, OnlineConfig) else OnlineConfig.from_dict(config)
    kls = np.empty((replications, n))
    experts = None
    if cfg.algo == "ea":
        experts = resolve_expert_source(cfg.expert_source, cfg.bounds, cfg.horizon or n)
    for rep in range(replications):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(rep,)))
        xs = q.ppf(rng.random(n))
        if cfg.algo == "og":
            _, rep_kls, _ = og_stream(xs, cfg.bounds, q=q)
        else:
            _, rep_kls, _ = ea_stream(EAState(experts), xs, q=q)
        kls[rep] = rep_kls
    cum = np.cumsum(kls, axis=1)
    with np.errstate(invalid="ignore"):
        per_step_stderr = np.std(kls, axis=0, ddof=1) / math.sqrt(replications)
        cum_stderr = np.std(cum, axis=0, ddof=1) / math.sqrt(replications)
    return RiskCurve(
        per_step_mean=np.mean(kls, axis=0),
        per_step_stderr=per_step_stderr,
        cumulative_mean=np.mean(cum, axis=0),
        cumulative_stderr=cum_stderr,
        inf_counts=np.sum(np.isinf(kls), axis=0),
        replications=replications,
    )
