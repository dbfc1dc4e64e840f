"""Monotone densities on [0,1]: representation, sampling, divergences.

Everything here is immutable after construction and safe to share across
workers. Histogram cells follow the half-open convention [t_{j-1}, t_j)
with the final cell closed, so evaluation at u = 1 returns the last height.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np
from scipy.integrate import quad

NORMALIZATION_TOL = 1e-9
QUAD_TOL = 1e-10


class DensityError(ValueError):
    """Invalid density construction or use."""


class DomainError(DensityError):
    """Evaluation point outside [0,1]."""


@dataclass(frozen=True)
class BoundsAB:
    """Box constraint a <= f <= b defining the class of bounded monotone densities.

    b may be math.inf. V = log(b/a) is only defined for 0 < a <= b < inf;
    any V-dependent routine rejects other configurations.
    """

    a: float
    b: float

    def __post_init__(self):
        if not (0.0 <= self.a <= self.b):
            raise DensityError(f"invalid bounds: need 0 <= a <= b, got a={self.a}, b={self.b}")

    @property
    def is_finite(self) -> bool:
        return self.a > 0.0 and math.isfinite(self.b)

    @property
    def V(self) -> float:
        if not self.is_finite:
            raise DensityError(
                f"V = log(b/a) requires 0 < a <= b < inf, got a={self.a}, b={self.b}"
            )
        return math.log(self.b / self.a)

    def contains(self, heights, tol: float = 1e-12) -> bool:
        h = np.asarray(heights, dtype=float)
        return bool(np.all(h >= self.a - tol) and np.all(h <= self.b + tol))


def _readonly(x) -> np.ndarray:
    arr = np.array(x, dtype=float)
    arr.setflags(write=False)
    return arr


class MonotoneHistogram:
    """Piecewise-constant non-increasing density on [0,1].

    Parameters
    ----------
    breakpoints : array-like, shape (m+1,)
        Strictly increasing, first element 0 and last element 1.
    heights : array-like, shape (m,)
        Nonnegative, non-increasing cell heights.
    renormalize : bool
        If True, rescale heights so the histogram integrates to exactly 1.
        Otherwise the mass must already be within NORMALIZATION_TOL of 1.
    """

    __slots__ = ("breakpoints", "heights", "_cum")

    def __init__(self, breakpoints, heights, renormalize: bool = False):
        bp = np.asarray(breakpoints, dtype=float)
        h = np.asarray(heights, dtype=float)
        if bp.ndim != 1 or h.ndim != 1 or bp.size != h.size + 1:
            raise DensityError("need m+1 breakpoints for m heights")
        if bp[0] != 0.0 or bp[-1] != 1.0:
            raise DensityError("breakpoints must start at 0 and end at 1")
        if np.any(np.diff(bp) <= 0):
            raise DensityError("breakpoints must be strictly increasing")
        if np.any(h < 0):
            raise DensityError("heights must be nonnegative")
        if np.any(np.diff(h) > 1e-10):
            raise DensityError("heights must be non-increasing")
        widths = np.diff(bp)
        mass = float(widths @ h)
        if renormalize:
            if mass <= 0:
                raise DensityError("cannot renormalize a zero-mass histogram")
            h = h / mass
        elif abs(mass - 1.0) > NORMALIZATION_TOL:
            raise DensityError(f"histogram mass {mass!r} deviates from 1 beyond tolerance")
        object.__setattr__(self, "breakpoints", _readonly(bp))
        object.__setattr__(self, "heights", _readonly(h))
        cum = np.concatenate(([0.0], np.cumsum(np.diff(bp) * h)))
        object.__setattr__(self, "_cum", _readonly(cum))

    def __setattr__(self, name, value):
        raise AttributeError("MonotoneHistogram is immutable")

    def __repr__(self):
        return f"MonotoneHistogram(breakpoints={self.breakpoints.tolist()}, heights={self.heights.tolist()})"

    @property
    def num_cells(self) -> int:
        return self.heights.size

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    def total_mass(self) -> float:
        return float(self._cum[-1])

    def pdf(self, u):
        """Density value(s) under the half-open cell convention."""
        u_arr = np.asarray(u, dtype=float)
        _check_domain(u_arr)
        idx = np.searchsorted(self.breakpoints, u_arr, side="right") - 1
        idx = np.clip(idx, 0, self.num_cells - 1)
        out = self.heights[idx]
        return float(out) if np.isscalar(u) or u_arr.ndim == 0 else out

    def left_pdf(self, u):
        """Left-limit value(s): a point pays the cell it closes, (t_{j-1}, t_j].

        This is the convention of the constrained-MLE objective, where the
        mass on the cell ending at an observation accounts for it.
        """
        u_arr = np.asarray(u, dtype=float)
        _check_domain(u_arr)
        idx = np.searchsorted(self.breakpoints, u_arr, side="left") - 1
        idx = np.clip(idx, 0, self.num_cells - 1)
        out = self.heights[idx]
        return float(out) if np.isscalar(u) or u_arr.ndim == 0 else out

    def logpdf(self, u):
        with np.errstate(divide="ignore"):
            return np.log(self.pdf(u))

    def cdf(self, u):
        u_arr = np.asarray(u, dtype=float)
        _check_domain(u_arr)
        out = np.interp(u_arr, self.breakpoints, self._cum)
        return float(out) if np.isscalar(u) or u_arr.ndim == 0 else out

    def ppf(self, q):
        """Inverse CDF; monotone in q, left-most point on flat stretches."""
        q_arr = np.atleast_1d(np.asarray(q, dtype=float))
        if np.any((q_arr < 0) | (q_arr > 1)):
            raise DomainError("quantile levels must lie in [0,1]")
        idx = np.searchsorted(self._cum, q_arr, side="right") - 1
        idx = np.clip(idx, 0, self.num_cells - 1)
        h = self.heights[idx]
        out = self.breakpoints[idx] + np.where(h > 0, (q_arr - self._cum[idx]) / np.where(h > 0, h, 1.0), 0.0)
        out = np.minimum(out, 1.0)
        return float(out[0]) if np.isscalar(q) or np.asarray(q).ndim == 0 else out

    def simplified(self, tol: float = 1e-12) -> "MonotoneHistogram":
        """Canonical form: drop zero-width cells, merge equal-height neighbours."""
        bp = self.breakpoints
        h = self.heights
        keep_cells = np.diff(bp) > 0
        h = h[keep_cells]
        bp = np.concatenate(([0.0], bp[1:][keep_cells]))
        merged_bp = [0.0]
        merged_h = []
        for j in range(h.size):
            if merged_h and abs(merged_h[-1] - h[j]) <= tol:
                merged_bp[-1] = bp[j + 1]
            else:
                merged_h.append(float(h[j]))
                merged_bp.append(float(bp[j + 1]))
        return MonotoneHistogram(merged_bp, merged_h, renormalize=False)

    def function_key(self, decimals: int = 12):
        """Hashable key identifying the histogram as a function."""
        s = self.simplified()
        return (
            tuple(np.round(s.breakpoints, decimals).tolist()),
            tuple(np.round(s.heights, decimals).tolist()),
        )

    def to_dict(self) -> dict:
        return {"breakpoints": self.breakpoints.tolist(), "heights": self.heights.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "MonotoneHistogram":
        return cls(d["breakpoints"], d["heights"])

    @classmethod
    def uniform(cls) -> "MonotoneHistogram":
        return cls([0.0, 1.0], [1.0])


class Uniform:
    """The uniform density on [0,1]."""

    __slots__ = ()

    def pdf(self, u):
        u_arr = np.asarray(u, dtype=float)
        _check_domain(u_arr)
        out = np.ones_like(u_arr)
        return float(out) if np.isscalar(u) or u_arr.ndim == 0 else out

    def logpdf(self, u):
        u_arr = np.asarray(u, dtype=float)
        _check_domain(u_arr)
        out = np.zeros_like(u_arr)
        return float(out) if np.isscalar(u) or u_arr.ndim == 0 else out

    def cdf(self, u):
        u_arr = np.asarray(u, dtype=float)
        _check_domain(u_arr)
        return float(u_arr) if np.isscalar(u) or u_arr.ndim == 0 else u_arr.copy()

    def ppf(self, q):
        q_arr = np.asarray(q, dtype=float)
        if np.any((q_arr < 0) | (q_arr > 1)):
            raise DomainError("quantile levels must lie in [0,1]")
        return float(q_arr) if np.isscalar(q) or q_arr.ndim == 0 else q_arr.copy()

    def as_histogram(self) -> MonotoneHistogram:
        return MonotoneHistogram.uniform()

    def __repr__(self):
        return "Uniform()"

    def __eq__(self, other):
        return isinstance(other, Uniform)

    def __hash__(self):
        return hash("Uniform")


@dataclass(frozen=True)
class Linear:
    """Linear monotone density q(u) = delta1 - (delta1 - delta0) * u.

    Requires delta1 >= delta0 >= 0 and (delta0 + delta1)/2 = 1 so the density
    is non-increasing and integrates to 1.
    """

    delta0: float
    delta1: float

    def __post_init__(self):
        if not (self.delta1 >= self.delta0 >= 0):
            raise DensityError("need delta1 >= delta0 >= 0 for a monotone density")
        if abs((self.delta0 + self.delta1) / 2.0 - 1.0) > NORMALIZATION_TOL:
            raise DensityError("linear density requires (delta0 + delta1)/2 = 1")

    @property
    def slope(self) -> float:
        return self.delta1 - self.delta0

    def pdf(self, u):
        u_arr = np.asarray(u, dtype=float)
        _check_domain(u_arr)
        out = self.delta1 - self.slope * u_arr
        return float(out) if np.isscalar(u) or u_arr.ndim == 0 else out

    def logpdf(self, u):
        with np.errstate(divide="ignore"):
            return np.log(self.pdf(u))

    def cdf(self, u):
        u_arr = np.asarray(u, dtype=float)
        _check_domain(u_arr)
        out = self.delta1 * u_arr - 0.5 * self.slope * u_arr**2
        return float(out) if np.isscalar(u) or u_arr.ndim == 0 else out

    def ppf(self, q):
        q_arr = np.asarray(q, dtype=float)
        if np.any((q_arr < 0) | (q_arr > 1)):
            raise DomainError("quantile levels must lie in [0,1]")
        # stable root of (s/2) x^2 - delta1 x + q = 0 on [0,1]
        disc = np.sqrt(np.maximum(self.delta1**2 - 2.0 * self.slope * q_arr, 0.0))
        out = 2.0 * q_arr / (self.delta1 + disc)
        return float(out) if np.isscalar(q) or q_arr.ndim == 0 else out


class Quadratic:
    """The quadratic monotone density q(u) = 3 (1-u)^2."""

    __slots__ = ()

    def pdf(self, u):
        u_arr = np.asarray(u, dtype=float)
        _check_domain(u_arr)
        out = 3.0 * (1.0 - u_arr) ** 2
        return float(out) if np.isscalar(u) or u_arr.ndim == 0 else out

    def logpdf(self, u):
        with np.errstate(divide="ignore"):
            return np.log(self.pdf(u))

    def cdf(self, u):
        u_arr = np.asarray(u, dtype=float)
        _check_domain(u_arr)
        out = 1.0 - (1.0 - u_arr) ** 3
        return float(out) if np.isscalar(u) or u_arr.ndim == 0 else out

    def ppf(self, q):
        q_arr = np.asarray(q, dtype=float)
        if np.any((q_arr < 0) | (q_arr > 1)):
            raise DomainError("quantile levels must lie in [0,1]")
        out = 1.0 - np.cbrt(1.0 - q_arr)
        return float(out) if np.isscalar(q) or q_arr.ndim == 0 else out

    def __repr__(self):
        return "Quadratic()"

    def __eq__(self, other):
        return isinstance(other, Quadratic)

    def __hash__(self):
        return hash("Quadratic")


class PiecewiseConstant:
    """Monotone density with equal-width bins and given heights."""

    __slots__ = ("_hist", "bin_heights")

    def __init__(self, heights: Sequence[float]):
        h = np.asarray(heights, dtype=float)
        m = h.size
        hist = MonotoneHistogram(np.linspace(0.0, 1.0, m + 1), h)
        object.__setattr__(self, "_hist", hist)
        object.__setattr__(self, "bin_heights", _readonly(h))

    def __setattr__(self, name, value):
        raise AttributeError("PiecewiseConstant is immutable")

    def pdf(self, u):
        return self._hist.pdf(u)

    def logpdf(self, u):
        return self._hist.logpdf(u)

    def cdf(self, u):
        return self._hist.cdf(u)

    def ppf(self, q):
        return self._hist.ppf(q)

    def as_histogram(self) -> MonotoneHistogram:
        return self._hist

    def __repr__(self):
        return f"PiecewiseConstant({self.bin_heights.tolist()})"


Density = Union[MonotoneHistogram, Uniform, Linear, Quadratic, PiecewiseConstant]


def _check_domain(u: np.ndarray):
    if np.any((u < 0) | (u > 1)):
        raise DomainError("evaluation points must lie in [0,1]")


def as_histogram(d: Density) -> MonotoneHistogram | None:
    """Exact histogram form of d, or None if d is not piecewise constant."""
    if isinstance(d, MonotoneHistogram):
        return d
    if hasattr(d, "as_histogram"):
        return d.as_histogram()
    return None


def evaluate(d: Density, u) -> float:
    """Density value at u; histograms use the half-open cell convention."""
    return d.pdf(u)


def log_pdf_at_sample(d: Density, u):
    """log density crediting a sample with the cell it closes.

    For histograms this is the left-limit value, matching the likelihood
    objective of the constrained MLE; parametric densities are evaluated
    directly.
    """
    if isinstance(d, MonotoneHistogram):
        with np.errstate(divide="ignore"):
            return np.log(d.left_pdf(u))
    return d.logpdf(u)


def inverse_cdf_sample(d: Density, u01) -> float:
    """Map uniform variates through the inverse CDF of d."""
    u_arr = np.asarray(u01, dtype=float)
    if np.any((u_arr < 0) | (u_arr >= 1.0 + 1e-15)):
        raise DomainError("uniform variates must lie in [0,1)")
    return d.ppf(u01)


def _refined_cells(f: MonotoneHistogram, g: MonotoneHistogram):
    bp = np.union1d(f.breakpoints, g.breakpoints)
    mids = 0.5 * (bp[:-1] + bp[1:])
    return np.diff(bp), f.pdf(mids), g.pdf(mids)


def _metric_key(metric: str) -> str:
    key = metric.lower().replace("^2", "").replace("²", "").replace("2", "").strip()
    aliases = {"kl": "kl", "hellinger": "hellinger", "h": "hellinger", "l": "l2"}
    if key not in aliases:
        raise ValueError(f"unknown divergence metric: {metric!r}")
    return aliases[key]


def divergence(f: Density, g: Density, metric: str = "kl") -> float:
    """Divergence between densities on [0,1].

    metric is one of "kl" (KL(f||g)), "hellinger2" (squared Hellinger,
    (1/2) int (sqrt f - sqrt g)^2) or "l22" (squared L2 distance). Histogram
    pairs are computed in closed form on the common refinement; otherwise
    adaptive quadrature with absolute tolerance 1e-10 is used. KL returns
    +inf when g vanishes on a cell where f does not.
    """
    key = _metric_key(metric)
    fh, gh = as_histogram(f), as_histogram(g)
    if fh is not None and gh is not None:
        w, fv, gv = _refined_cells(fh, gh)
        if key == "kl":
            if np.any((fv > 0) & (gv == 0)):
                return math.inf
            mask = fv > 0
            return float(np.sum(w[mask] * fv[mask] * np.log(fv[mask] / gv[mask])))
        if key == "hellinger":
            return float(0.5 * np.sum(w * (np.sqrt(fv) - np.sqrt(gv)) ** 2))
        return float(np.sum(w * (fv - gv) ** 2))

    kinks = {0.0, 1.0}
    for d in (f, g):
        dh = as_histogram(d)
        if dh is not None:
            kinks.update(dh.breakpoints.tolist())
    pts = sorted(kinks)

    if key == "kl":

        def integrand(x):
            fv = f.pdf(x)
            if fv <= 0.0:
                return 0.0
            gv = g.pdf(x)
            if gv <= 0.0:
                return math.inf
            return fv * math.log(fv / gv)

    elif key == "hellinger":

        def integrand(x):
            return 0.5 * (math.sqrt(f.pdf(x)) - math.sqrt(g.pdf(x))) ** 2

    else:

        def integrand(x):
            return (f.pdf(x) - g.pdf(x)) ** 2

    total = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        val, _ = quad(integrand, lo, hi, epsabs=QUAD_TOL, epsrel=1e-11, limit=200)
        total += val
    return total


def expected_log_density(q: Density) -> float:
    """int q log q, the per-step log-wealth rate of the oracle calibrator."""
    return divergence(q, Uniform(), "kl")


@dataclass(frozen=True)
class MembershipReport:
    """Report-style output of validate(); never raises."""

    monotone: bool
    monotonicity_violations: tuple
    normalization_residual: float
    normalized: bool
    lower_violations: tuple
    upper_violations: tuple

    @property
    def in_bounds(self) -> bool:
        return not self.lower_violations and not self.upper_violations

    @property
    def is_valid(self) -> bool:
        return self.monotone and self.normalized and self.in_bounds


def validate(d, bounds: BoundsAB, tol: float = 1e-12) -> MembershipReport:
    """Check monotonicity, normalization and box constraints of a histogram.

    Accepts a histogram-form density or a raw (breakpoints, heights) pair,
    so ill-formed height vectors can still be reported on.
    """
    if isinstance(d, tuple):
        bp = np.asarray(d[0], dtype=float)
        h = np.asarray(d[1], dtype=float)
        residual = float(np.diff(bp) @ h) - 1.0
    else:
        hist = as_histogram(d)
        if hist is None:
            raise TypeError("validate() expects a histogram-form density")
        h = hist.heights
        residual = hist.total_mass() - 1.0
    mono_viol = tuple(int(j) for j in np.nonzero(np.diff(h) > tol)[0] + 1)
    lower = tuple(int(j) for j in np.nonzero(h < bounds.a - tol)[0])
    upper = () if math.isinf(bounds.b) else tuple(int(j) for j in np.nonzero(h > bounds.b + tol)[0])
    return MembershipReport(
        monotone=not mono_viol,
        monotonicity_violations=mono_viol,
        normalization_residual=float(residual),
        normalized=abs(residual) <= NORMALIZATION_TOL,
        lower_violations=lower,
        upper_violations=upper,
    )


_DENSITY_TAGS = {"uniform", "linear", "quadratic", "piecewise", "histogram"}


def density_to_dict(d: Density) -> dict:
    if isinstance(d, Uniform):
        return {"type": "uniform"}
    if isinstance(d, Linear):
        return {"type": "linear", "delta0": d.delta0, "delta1": d.delta1}
    if isinstance(d, Quadratic):
        return {"type": "quadratic"}
    if isinstance(d, PiecewiseConstant):
        return {"type": "piecewise", "heights": d.bin_heights.tolist()}
    if isinstance(d, MonotoneHistogram):
        return {"type": "histogram", **d.to_dict()}
    raise TypeError(f"not a known density: {d!r}")


def density_from_dict(spec: dict) -> Density:
    tag = spec.get("type")
    if tag not in _DENSITY_TAGS:
        raise DensityError(f"unknown density tag: {tag!r}")
    if tag == "uniform":
        return Uniform()
    if tag == "linear":
        return Linear(spec["delta0"], spec["delta1"])
    if tag == "quadratic":
        return Quadratic()
    if tag == "piecewise":
        return PiecewiseConstant(spec["heights"])
    return MonotoneHistogram(spec["breakpoints"], spec["heights"])
