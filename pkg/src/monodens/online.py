"""Online estimators behind a single predict/update protocol.

OG refits the constrained monotone MLE on all past observations at every
step (the predictor at step t depends only on observations 1..t-1 and the
first predictor is uniform). EA keeps exponential weights over a fixed
finite expert class, entirely in log-space.
"""

from __future__ import annotations

import bisect
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from . import _kernels
from .densities import (
    BoundsAB,
    Density,
    DomainError,
    MonotoneHistogram,
    Linear,
    PiecewiseConstant,
    Quadratic,
    Uniform,
    as_histogram,
    expected_log_density,
)
from .evaluation import LossLedger
from .experts import (
    ExpertClass,
    ExpertGridParams,
    default_factory_class,
    enumerate_expert_class,
    factory_equal_mass_histograms,
)
from .grenander import (
    FitError,
    WeightedCells,
    fit_constrained,
    fit_unconstrained,
    fit_unconstrained_floored,
)


class ConfigError(ValueError):
    """Unsupported or malformed algorithm configuration."""


def _check_point(x: float):
    if not (0.0 <= x <= 1.0):
        raise DomainError(f"observation {x} outside [0,1]")


def _og_mode(bounds: BoundsAB) -> str:
    if math.isfinite(bounds.b):
        if bounds.a <= 0:
            raise ConfigError("OG with a = 0 and finite b has no solver contract; use a > 0 or b = inf")
        return "constrained"
    return "floored" if bounds.a > 0 else "unconstrained"


class OGState:
    """Online Grenander state: accumulated sample plus the current fit."""

    def __init__(self, bounds: BoundsAB, ledger: LossLedger | None = None):
        self.bounds = bounds
        self.mode = _og_mode(bounds)
        self.ledger = ledger if ledger is not None else LossLedger()
        self._values: list[float] = []
        self._counts: list[float] = []
        self._predictor = MonotoneHistogram.uniform()
        self.t = 1

    def predict(self) -> MonotoneHistogram:
        return self._predictor

    def cells(self) -> WeightedCells | None:
        if not self._values:
            return None
        return WeightedCells(np.array(self._values), np.array(self._counts))

    def _refit(self) -> MonotoneHistogram:
        cells = self.cells()
        if self.mode == "constrained":
            return fit_constrained(cells, self.bounds)
        if self.mode == "floored":
            return fit_unconstrained_floored(cells, self.bounds.a)
        return fit_unconstrained(cells)

    def update(self, x: float) -> "OGState":
        _check_point(x)
        fx = self._predictor.pdf(x)
        self.ledger.record(-math.log(fx) if fx > 0 else math.inf)
        i = bisect.bisect_left(self._values, x)
        if i < len(self._values) and self._values[i] == x:
            self._counts[i] += 1.0
        elif x == 0.0:
            # 0 carries no cell of its own; fold it into the smallest cell
            self._values.insert(i, np.nextafter(0.0, 1.0))
            self._counts.insert(i, 1.0)
        else:
            self._values.insert(i, x)
            self._counts.insert(i, 1.0)
        self._predictor = self._refit()
        self.t += 1
        return self


class EAState:
    """Exponential-weights aggregation over a fixed expert class.

    Log-weights hold the unnormalized log-prior plus accumulated
    log-likelihoods; weights are only materialized with a max-shift.
    Experts assigning zero density to an observation drop to -inf weight
    and are permanently eliminated.
    """

    def __init__(
        self,
        experts: ExpertClass | Sequence[MonotoneHistogram],
        prior: Sequence[float] | None = None,
        horizon: int | None = None,
        ledger: LossLedger | None = None,
    ):
        expert_list = list(experts)
        if not expert_list:
            raise ConfigError("EA requires at least one expert")
        self.experts = experts if isinstance(experts, ExpertClass) else ExpertClass(tuple(expert_list))
        bps = np.array([0.0, 1.0])
        for e in expert_list:
            bps = np.union1d(bps, e.breakpoints)
        mids = 0.5 * (bps[:-1] + bps[1:])
        H = np.vstack([e.pdf(mids) for e in expert_list])
        self._breaks = bps
        self._H = H
        if prior is None:
            lp = np.full(len(expert_list), -math.log(len(expert_list)))
        else:
            p = np.asarray(prior, dtype=float)
            if p.shape != (len(expert_list),) or np.any(p <= 0):
                raise ConfigError("prior must be a positive vector, one entry per expert")
            lp = np.log(p / p.sum())
        self.log_prior = lp
        self.log_weights = lp.copy()
        self.horizon = horizon
        self.ledger = ledger if ledger is not None else LossLedger()
        self.t = 1
        self._warned = False

    def weights(self) -> np.ndarray:
        shift = np.max(self.log_weights)
        if not np.isfinite(shift):
            raise ConfigError("all experts have been eliminated")
        w = np.exp(self.log_weights - shift)
        return w / w.sum()

    def predict(self) -> MonotoneHistogram:
        mix = self.weights() @ self._H
        return MonotoneHistogram(self._breaks, mix, renormalize=True)

    def _cell(self, x: float) -> int:
        i = int(np.searchsorted(self._breaks, x, side="right")) - 1
        return min(max(i, 0), self._H.shape[1] - 1)

    def update(self, x: float) -> "EAState":
        _check_point(x)
        col = self._H[:, self._cell(x)]
        fx = float(self.weights() @ col)
        self.ledger.record(-math.log(fx) if fx > 0 else math.inf)
        with np.errstate(divide="ignore"):
            self.log_weights = self.log_weights + np.log(col)
        if self.horizon is not None and self.t >= self.horizon and not self._warned:
            warnings.warn(
                f"stream exceeds the configured horizon {self.horizon}; "
                "continuing with the same expert class",
                stacklevel=2,
            )
            self._warned = True
        self.t += 1
        return self


def predict(state) -> MonotoneHistogram:
    return state.predict()


def update(state, x: float):
    return state.update(x)


# ---------------------------------------------------------------------------
# bulk runners


def q_to_kernel(q: Density):
    """(code, params, int q log q) for in-kernel exact KL computation."""
    if isinstance(q, Uniform):
        return _kernels.Q_UNIFORM, np.empty(0), 0.0
    if isinstance(q, Linear):
        return _kernels.Q_LINEAR, np.array([q.delta0, q.delta1]), expected_log_density(q)
    if isinstance(q, Quadratic):
        return _kernels.Q_QUADRATIC, np.empty(0), expected_log_density(q)
    h = as_histogram(q)
    if h is None:
        raise ConfigError(f"unsupported true-density type for risk evaluation: {q!r}")
    params = np.concatenate((h.breakpoints, h.heights))
    return _kernels.Q_HISTOGRAM, params, expected_log_density(q)


def og_stream(xs, bounds: BoundsAB, q: Density | None = None):
    """Run OG over a full stream via the compiled kernel.

    Returns (losses, kls, final_predictor); kls is all-nan unless q is given.
    """
    xs = np.ascontiguousarray(xs, dtype=float)
    if xs.size and (xs.min() < 0 or xs.max() > 1):
        raise DomainError("stream values must lie in [0,1]")
    mode = _og_mode(bounds)
    if q is not None:
        code, params, qlogq = q_to_kernel(q)
    else:
        code, params, qlogq = _kernels.Q_UNIFORM, np.empty(0), 0.0
    xs_eff = np.where(xs == 0.0, np.nextafter(0.0, 1.0), xs)
    losses, kls, fb, fh = _kernels.run_og_stream(
        xs_eff,
        float(bounds.a),
        float(bounds.b) if mode == "constrained" else float(bounds.a),
        mode == "constrained",
        code,
        np.ascontiguousarray(params, dtype=float),
        float(qlogq),
        q is not None,
    )
    final = MonotoneHistogram(fb, fh, renormalize=True) if xs.size else MonotoneHistogram.uniform()
    return losses, kls, final


def ea_stream(state_or_experts, xs, prior=None, q: Density | None = None):
    """Run EA over a full stream with vectorized weight updates.

    Returns (losses, kls, final EAState). Losses are computed from the
    mixture evaluated at each point, not from the telescoping identity, so
    the identity stays a meaningful test.
    """
    state = (
        state_or_experts
        if isinstance(state_or_experts, EAState)
        else EAState(state_or_experts, prior=prior)
    )
    xs = np.ascontiguousarray(xs, dtype=float)
    if xs.size and (xs.min() < 0 or xs.max() > 1):
        raise DomainError("stream values must lie in [0,1]")
    idx = np.clip(np.searchsorted(state._breaks, xs, side="right") - 1, 0, state._H.shape[1] - 1)
    H = state._H
    logH = np.where(H > 0, np.log(np.where(H > 0, H, 1.0)), -math.inf)
    cum = state.log_weights.copy()
    n = xs.size
    losses = np.empty(n)
    kls = np.full(n, np.nan)
    want_kl = q is not None
    if want_kl:
        qmass = np.diff(np.asarray(q.cdf(state._breaks), dtype=float))
        qlogq = expected_log_density(q)
    for t in range(n):
        lw = cum - logsumexp(cum)
        w = np.exp(lw)
        if want_kl:
            mix = w @ H
            with np.errstate(divide="ignore"):
                logmix = np.log(mix)
            contrib = np.where(qmass > 0, -qmass * logmix, 0.0)
            kls[t] = qlogq + float(np.sum(contrib))
        fx = float(w @ H[:, idx[t]])
        losses[t] = -math.log(fx) if fx > 0 else math.inf
        cum = cum + logH[:, idx[t]]
    state.log_weights = cum
    state.t += n
    if state.horizon is not None and state.t - 1 > state.horizon and not state._warned:
        warnings.warn(
            f"stream exceeds the configured horizon {state.horizon}; "
            "continuing with the same expert class",
            stacklevel=2,
        )
        state._warned = True
    for loss in losses:
        state.ledger.record(float(loss))
    return losses, kls, state


# ---------------------------------------------------------------------------
# config plumbing


@dataclass(frozen=True)
class OnlineConfig:
    algo: str
    a: float
    b: float
    expert_source: dict | None = None
    horizon: int | None = None

    def __post_init__(self):
        if self.algo not in ("og", "ea"):
            raise ConfigError(f"unknown algorithm {self.algo!r}")

    @property
    def bounds(self) -> BoundsAB:
        return BoundsAB(self.a, self.b)

    @classmethod
    def from_dict(cls, d: dict) -> "OnlineConfig":
        b = d.get("b", math.inf)
        if isinstance(b, str):
            b = math.inf if b.lower() in ("inf", "infinity") else float(b)
        return cls(
            algo=d["algo"],
            a=float(d.get("a", 0.0)),
            b=float(b),
            expert_source=d.get("expert_source"),
            horizon=d.get("horizon"),
        )


def theoretical_bin_count(n: int) -> int:
    """The horizon-tuned bin budget floor(sqrt(n / log n))."""
    if n < 2:
        raise ConfigError("the theoretical bin count needs a horizon n >= 2")
    return max(1, int(math.floor(math.sqrt(n / math.log(n)))))


def resolve_expert_source(source: dict | None, bounds: BoundsAB, horizon: int | None) -> ExpertClass:
    source = source or {"type": "default"}
    kind = source.get("type", "default")
    if kind == "default":
        return default_factory_class(bounds)
    if kind == "factory":
        return factory_equal_mass_histograms(
            source["bin_counts"], bounds, levels=source.get("levels", 9)
        )
    if kind == "grid":
        if horizon is None and "k" not in source:
            raise ConfigError("grid expert source needs an explicit k or a horizon")
        k = source.get("k") or theoretical_bin_count(horizon)
        n = source.get("n") or horizon
        if n is None:
            raise ConfigError("grid expert source needs n or a horizon")
        params = ExpertGridParams(n=n, k=k, beta=source["beta"], bounds=bounds)
        return enumerate_expert_class(params)
    if kind == "explicit":
        return ExpertClass(
            tuple(MonotoneHistogram(e["breakpoints"], e["heights"]) for e in source["experts"])
        )
    raise ConfigError(f"unknown expert source type {kind!r}")


def make_state(config: OnlineConfig | dict, horizon: int | None = None):
    cfg = config if isinstance(config, OnlineConfig) else OnlineConfig.from_dict(config)
    horizon = horizon if horizon is not None else cfg.horizon
    if cfg.algo == "og":
        return OGState(cfg.bounds)
    experts = resolve_expert_source(cfg.expert_source, cfg.bounds, horizon)
    return EAState(experts, horizon=horizon)


def run_online(config: OnlineConfig | dict, stream) -> tuple[LossLedger, object]:
    """Deterministic fold of predict/update over a stream."""
    cfg = config if isinstance(config, OnlineConfig) else OnlineConfig.from_dict(config)
    xs = np.asarray(stream, dtype=float)
    if cfg.algo == "og":
        if xs.size == 0:
            return LossLedger(), OGState(cfg.bounds)
        losses, _, final = og_stream(xs, cfg.bounds)
        state = OGState(cfg.bounds)
        vals, cnts = np.unique(np.where(xs == 0.0, np.nextafter(0.0, 1.0), xs), return_counts=True)
        state._values = vals.tolist()
        state._counts = cnts.astype(float).tolist()
        state._predictor = final
        state.t = xs.size + 1
        ledger = LossLedger(losses.tolist())
        state.ledger = ledger
        return ledger, state
    state = make_state(cfg, horizon=cfg.horizon if cfg.horizon is not None else (xs.size or None))
    if xs.size:
        _, _, state = ea_stream(state, xs)
    return state.ledger, state
