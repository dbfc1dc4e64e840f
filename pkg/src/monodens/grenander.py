"""Offline monotone-MLE fits and histogram surgery.

The constrained fit reduces to the finite convex program

    max sum_j n_j log(theta_j)   s.t.  theta non-increasing,
                                       a <= theta <= b,
                                       sum_j theta_j * width_j = 1,

over cells whose right endpoints are the distinct order statistics (plus an
empty trailing cell up to 1). For a fixed multiplier lambda on the
normalization constraint, the inner problem is solved by weighted antitonic
regression with pool values clipped to [a,b]; the pooling structure does not
depend on lambda, so one PAVA pass plus bisection over lambda is exact.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from math import comb

import numpy as np

from . import _kernels
from .densities import BoundsAB, DensityError, MonotoneHistogram, log_pdf_at_sample, validate


class FitError(ValueError):
    """Precondition failure in a fit or surgery routine."""


class InfeasibleError(FitError):
    """Empty feasible set (a > 1 or b < 1)."""


@dataclass(frozen=True)
class WeightedCells:
    """Distinct sorted sample values in (0,1] with multiplicity counts."""

    values: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        c = np.asarray(self.counts, dtype=float)
        if v.size == 0:
            raise FitError("empty sample")
        if v.ndim != 1 or c.shape != v.shape:
            raise FitError("values and counts must be 1-d and aligned")
        if np.any(v <= 0) or np.any(v > 1):
            raise FitError("sample values must lie in (0,1]")
        if np.any(np.diff(v) <= 0):
            raise FitError("values must be strictly increasing")
        if np.any(c < 1):
            raise FitError("counts must be >= 1")
        v.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "counts", c)

    @classmethod
    def from_sample(cls, xs) -> "WeightedCells":
        xs = np.asarray(xs, dtype=float)
        vals, cnts = np.unique(xs, return_counts=True)
        return cls(vals, cnts.astype(float))

    @property
    def n(self) -> int:
        return int(round(float(self.counts.sum())))

    @property
    def r(self) -> int:
        return self.values.size

    def cell_arrays(self):
        """(counts, widths, breakpoints) including the trailing empty cell."""
        if self.values[-1] < 1.0:
            breaks = np.concatenate(([0.0], self.values, [1.0]))
            counts = np.concatenate((self.counts, [0.0]))
        else:
            breaks = np.concatenate(([0.0], self.values))
            counts = self.counts.copy()
        return counts, np.diff(breaks), breaks


def fit_log_likelihood(hist: MonotoneHistogram, cells: WeightedCells) -> float:
    """Sample log-likelihood sum_j n_j log f(x_(j)) with samples paying the
    cell they close (the MLE objective's convention)."""
    return float(np.sum(cells.counts * log_pdf_at_sample(hist, cells.values)))


def fit_unconstrained(cells: WeightedCells) -> MonotoneHistogram:
    """Grenander estimator: left derivative of the LCM of the empirical CDF.

    Computed as the weighted antitonic regression of the empirical cell
    slopes; the height after the largest observation is zero.
    """
    counts, widths, breaks = cells.cell_arrays()
    v = _kernels.pava_decreasing(counts / widths, widths)
    return MonotoneHistogram(breaks, v / cells.n, renormalize=True)


def fit_constrained(cells: WeightedCells, bounds: BoundsAB) -> MonotoneHistogram:
    """Constrained monotone MLE over densities box-bounded in [a,b].

    Requires 0 < a <= 1 <= b < inf; a > 1 or b < 1 leaves the feasible set
    empty and unbounded b is a precondition error.
    """
    if not math.isfinite(bounds.b):
        raise FitError("fit_constrained requires a finite upper bound b")
    if bounds.a <= 0:
        raise FitError("fit_constrained requires a strictly positive lower bound a")
    if bounds.a > 1.0 or bounds.b < 1.0:
        raise InfeasibleError(f"D_[a,b] is empty for a={bounds.a}, b={bounds.b}")
    counts, widths, breaks = cells.cell_arrays()
    h, _ = _kernels.constrained_heights(counts, widths, bounds.a, bounds.b, float(cells.n))
    return MonotoneHistogram(breaks, h)


def fit_unconstrained_floored(cells: WeightedCells, floor: float) -> MonotoneHistogram:
    """Unconstrained Grenander clipped below at `floor`, renormalized.

    The b = inf fallback used by online calibrators that must never emit a
    zero density.
    """
    if floor < 0:
        raise FitError("floor must be nonnegative")
    counts, widths, breaks = cells.cell_arrays()
    h = _kernels.floored_unconstrained_heights(counts, widths, float(cells.n), floor)
    return MonotoneHistogram(breaks, h, renormalize=True)


_ORACLE_CANDIDATE_CAP = 3_000_000


def brute_force_mle_oracle(
    cells: WeightedCells, bounds: BoundsAB, grid_resolution: int
) -> MonotoneHistogram:
    """Exhaustive grid search over non-increasing height vectors in [a,b].

    Each candidate is renormalized to integrate to 1 and rejected if the
    renormalized heights leave [a,b], so the search stays inside the
    constrained class. Test-only oracle; instances whose candidate count
    exceeds the cap are rejected up front.
    """
    if cells.r > 6:
        raise FitError("oracle restricted to r_n <= 6 distinct points")
    if grid_resolution > 200 or grid_resolution < 1:
        raise FitError("grid_resolution must be in [1, 200]")
    if not math.isfinite(bounds.b):
        raise FitError("oracle requires finite bounds")
    counts, widths, breaks = cells.cell_arrays()
    m = widths.size
    n_levels = grid_resolution + 1
    n_cand = comb(n_levels + m - 1, m)
    if n_cand > _ORACLE_CANDIDATE_CAP:
        raise FitError(
            f"instance too large for exhaustive search ({n_cand} candidates); "
            "reduce grid_resolution or the number of distinct points"
        )
    levels = np.linspace(bounds.b, bounds.a, n_levels)  # descending
    obs = counts > 0
    best_ll = -math.inf
    best = None
    chunk = 200_000
    combos = itertools.combinations_with_replacement(range(n_levels), m)
    while True:
        idx = np.fromiter(
            itertools.chain.from_iterable(itertools.islice(combos, chunk)),
            dtype=np.int64,
            count=-1,
        )
        if idx.size == 0:
            break
        idx = idx.reshape(-1, m)
        heights = levels[idx]  # non-increasing rows
        mass = heights @ widths
        theta = heights / mass[:, None]
        ok = np.all(theta >= bounds.a - 1e-12, axis=1) & np.all(theta <= bounds.b + 1e-12, axis=1)
        if not np.any(ok):
            continue
        theta_ok = theta[ok]
        ll = np.log(theta_ok[:, obs]) @ counts[obs]
        j = int(np.argmax(ll))
        if ll[j] > best_ll:
            best_ll = float(ll[j])
            best = theta_ok[j]
    if best is None:
        raise FitError("no feasible candidate on the search grid")
    return MonotoneHistogram(breaks, np.minimum(np.maximum(best, bounds.a), bounds.b), renormalize=True)


def compress(f: MonotoneHistogram, k: int, bounds: BoundsAB) -> MonotoneHistogram:
    """Compress f into at most k bins by the greedy block recursion.

    Blocks absorb log-height drops of at most V/k measured from the block's
    left end; each block keeps its left-end height and the result is
    renormalized by a single factor alpha. Guarantees: at most k bins,
    adjacent log-height drops >= V/k, the penultimate knot never moves
    right, and sup |log f - log h| <= 2V/k.
    """
    if k < 1:
        raise FitError("k must be >= 1")
    V = bounds.V  # raises on unbounded / zero-a bounds
    report = validate(f, bounds, tol=1e-9)
    if not report.is_valid:
        raise FitError(f"compress requires f in D_[a,b]; report: {report}")
    w = f.heights
    t = f.breakpoints
    m = w.size
    logw = np.log(w)
    budget = V / k
    starts = []
    ends = []
    i = 0
    while i < m:
        starts.append(i)
        j = i
        while j + 1 < m and logw[i] - logw[j + 1] <= budget:
            j += 1
        ends.append(j)
        i = j + 1
    block_breaks = np.concatenate(([0.0], t[np.asarray(ends) + 1]))
    block_heights = w[np.asarray(starts)]
    return MonotoneHistogram(block_breaks, block_heights, renormalize=True)


def discretize_to_net(f: MonotoneHistogram, params, gamma: float) -> MonotoneHistogram:
    """Round a well-separated histogram onto the expert grid.

    Left-rounds interior breakpoints onto the breakpoint grid, down-rounds
    the non-final log-heights onto the log-height grid and sets the final
    height by normalization. Preconditions are checked explicitly and named
    on failure; the output passes expert-membership validation.
    """
    from .experts import validate_expert_membership

    n, k = params.n, params.k
    a, b = params.bounds.a, params.bounds.b
    V = params.bounds.V
    delta_b = params.delta_b
    r = f.num_cells
    if r > k:
        raise FitError(f"precondition failed: bin count r={r} exceeds k={k}")
    boundary = 1.0 - n ** (-gamma)
    if r >= 2 and f.breakpoints[-2] > boundary + 1e-12:
        raise FitError(
            f"precondition failed: penultimate knot {f.breakpoints[-2]} exceeds 1 - n^-gamma = {boundary}"
        )
    if r >= 2:
        drop = math.log(f.heights[-2]) - math.log(f.heights[-1])
        if drop < V / k - 1e-12:
            raise FitError(
                f"precondition failed: final log-height drop {drop} below V/k = {V / k}"
            )
    if not (V / k < 1.0):
        raise FitError(f"feasibility condition failed: V/k = {V / k} not < 1")
    if not (V * delta_b < 1.0):
        raise FitError(f"feasibility condition failed: V*Delta_b = {V * delta_b} not < 1")
    rhs = b * delta_b * V + b * (delta_b * V + 2 * k * delta_b) * n**gamma
    if a * V / k < rhs:
        raise FitError(
            f"feasibility condition failed: a*V/k = {a * V / k} below {rhs}"
        )
    if np.any(f.heights < a - 1e-12) or np.any(f.heights > b + 1e-12):
        raise FitError("precondition failed: f is not in D_[a,b] for the grid bounds")

    num_grid = params.num_grid
    # left-round interior breakpoints, down-round non-final log-heights
    new_breaks = [0.0]
    new_heads = []
    eta = V * delta_b
    for j in range(r - 1):
        tj = f.breakpoints[j + 1]
        gi = min(int(math.floor(tj / delta_b + 1e-12)), num_grid)
        tjp = gi * delta_b
        li = int(math.floor((math.log(f.heights[j]) - math.log(a)) / eta + 1e-12))
        li = min(max(li, 0), num_grid)
        hj = a * math.exp(eta * li)
        if tjp <= new_breaks[-1] + 1e-15:
            # cell collapsed onto the previous grid point; drop it
            continue
        new_breaks.append(tjp)
        new_heads.append(hj)
    head_mass = sum(h * (new_breaks[i + 1] - new_breaks[i]) for i, h in enumerate(new_heads))
    theta_last = (1.0 - head_mass) / (1.0 - new_breaks[-1])
    g = MonotoneHistogram(new_breaks + [1.0], new_heads + [theta_last])
    report = validate_expert_membership(g, params)
    if not report.ok:
        raise FitError(f"discretized histogram failed expert membership: {report.failures}")
    return g
