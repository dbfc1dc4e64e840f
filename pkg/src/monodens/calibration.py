"""p-to-e calibration: admissible calibrators, e-processes and anytime-valid
sequential tests built from online monotone density estimators.

A calibrator emits a non-increasing density h_t fixed before the t-th
p-value arrives; e_t = h_t(p_t) and the wealth M_t = prod_s e_s is a
nonnegative supermartingale under the null, so thresholding at 1/alpha is a
valid sequential test at level alpha. Wealth is kept in log-space
throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .densities import (
    BoundsAB,
    Density,
    DomainError,
    MonotoneHistogram,
    as_histogram,
    density_from_dict,
    validate,
)
from .online import EAState, OGState, OnlineConfig, ea_stream, make_state, og_stream

# a > 0 keeps e-values away from zero; b stays finite so EA grid classes
# have finite log-range. OG also supports b = inf via the floored fallback.
DEFAULT_CALIBRATION_BOUNDS = BoundsAB(0.01, 100.0)


class CalibratorError(ValueError):
    """Invalid calibrator configuration."""


def _check_admissible(d: Density):
    h = as_histogram(d)
    if h is not None:
        report = validate(h, BoundsAB(0.0, math.inf))
        if not report.is_valid:
            raise CalibratorError(f"calibrator density is not admissible: {report}")


class StaticCalibrator:
    """A fixed admissible calibrator."""

    kind = "static"

    def __init__(self, density: Density):
        _check_admissible(density)
        self.density = density

    def current(self) -> Density:
        return self.density

    def update(self, p: float):
        pass


class OracleCalibrator(StaticCalibrator):
    """The log-optimal calibrator h = q for a known iid alternative q."""

    kind = "oracle"


class OnlineCalibrator:
    """Calibrator driven by an online monotone density estimator."""

    kind = "online"

    def __init__(self, state: OGState | EAState):
        self.state = state

    def current(self) -> Density:
        return self.state.predict()

    def update(self, p: float):
        self.state.update(p)


@dataclass(frozen=True)
class EProcess:
    """Wealth process state; M_0 = 1 and rejection at 1/alpha is absorbing."""

    alpha: float
    log_wealth: float = 0.0
    t: int = 0
    rejected_at: int | None = None

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise CalibratorError("alpha must lie in (0,1]")

    @property
    def log_threshold(self) -> float:
        return math.log(1.0 / self.alpha)

    @property
    def rejected(self) -> bool:
        return self.rejected_at is not None


def step(cal, ep: EProcess, p: float):
    """One calibrate-then-update step; returns (e_value, new EProcess).

    The e-value uses the calibrator state fixed before seeing p; only after
    the wealth update does the calibrator ingest p.
    """
    if not (0.0 <= p <= 1.0):
        raise DomainError(f"p-value {p} outside [0,1]")
    e = float(cal.current().pdf(p))
    log_e = math.log(e) if e > 0 else -math.inf
    t = ep.t + 1
    lw = ep.log_wealth + log_e
    rejected_at = ep.rejected_at
    if rejected_at is None and lw >= ep.log_threshold:
        rejected_at = t
    cal.update(p)
    return e, replace(ep, log_wealth=lw, t=t, rejected_at=rejected_at)


@dataclass(frozen=True)
class SequentialTestResult:
    alpha: float
    log_wealth: np.ndarray
    e_values: np.ndarray
    tau: int | None

    @property
    def rejected(self) -> bool:
        return self.tau is not None

    @property
    def final_log_wealth(self) -> float:
        return float(self.log_wealth[-1]) if self.log_wealth.size else 0.0


def _first_crossing(log_wealth: np.ndarray, alpha: float) -> int | None:
    hits = np.nonzero(log_wealth >= math.log(1.0 / alpha))[0]
    return int(hits[0]) + 1 if hits.size else None


def make_calibrator(config: dict) -> StaticCalibrator | OracleCalibrator | OnlineCalibrator:
    kind = config.get("kind", config.get("algo"))
    if kind == "static":
        return StaticCalibrator(density_from_dict(config["density"]))
    if kind == "oracle":
        return OracleCalibrator(density_from_dict(config["density"]))
    if kind in ("og", "ea"):
        cfg = OnlineConfig(
            algo=kind,
            a=float(config.get("a", DEFAULT_CALIBRATION_BOUNDS.a)),
            b=float(config.get("b", DEFAULT_CALIBRATION_BOUNDS.b)),
            expert_source=config.get("expert_source"),
            horizon=config.get("horizon"),
        )
        return OnlineCalibrator(make_state(cfg))
    raise CalibratorError(f"unknown calibrator kind {kind!r}")


def run_sequential_test(cal, p_stream, alpha: float) -> SequentialTestResult:
    """Full wealth trajectory and the first crossing of 1/alpha.

    The calibrator is advanced through the whole stream even after a
    rejection; the decision state is just the first-crossing time. Fresh
    online calibrators run through the bulk stream runners.
    """
    if isinstance(cal, dict):
        cal = make_calibrator(cal)
    ps = np.asarray(p_stream, dtype=float)
    if ps.size and (ps.min() < 0 or ps.max() > 1):
        raise DomainError("p-values must lie in [0,1]")
    if isinstance(cal, OnlineCalibrator) and getattr(cal.state, "t", None) == 1 and ps.size:
        if isinstance(cal.state, OGState):
            losses, _, final = og_stream(ps, cal.state.bounds)
            vals, cnts = np.unique(np.where(ps == 0.0, np.nextafter(0.0, 1.0), ps), return_counts=True)
            cal.state._values = vals.tolist()
            cal.state._counts = cnts.astype(float).tolist()
            cal.state._predictor = final
            cal.state.t = ps.size + 1
            for v in losses:
                cal.state.ledger.record(float(v))
        else:
            losses, _, _ = ea_stream(cal.state, ps)
        log_wealth = -np.cumsum(losses)
        e_values = np.exp(-losses)
    else:
        ep = EProcess(alpha=alpha)
        e_values = np.empty(ps.size)
        log_wealth = np.empty(ps.size)
        for i, p in enumerate(ps):
            e, ep = step(cal, ep, float(p))
            e_values[i] = e
            log_wealth[i] = ep.log_wealth
    return SequentialTestResult(
        alpha=alpha,
        log_wealth=log_wealth,
        e_values=e_values,
        tau=_first_crossing(log_wealth, alpha),
    )


def log_wealth_rate_gap(cal, q: Density, p_stream) -> np.ndarray:
    """Per-n normalized log-wealth gap to the oracle calibrator h = q.

    Returns the sequence (1/n)(log M_n(cal) - log M_n(q)) for n = 1..len;
    under an iid alternative with density q this converges to zero for the
    online calibrators.
    """
    ps = np.asarray(p_stream, dtype=float)
    result = run_sequential_test(cal, ps, alpha=1.0)
    oracle_lw = np.cumsum(q.logpdf(ps))
    steps = np.arange(1, ps.size + 1)
    return (result.log_wealth - oracle_lw) / steps
