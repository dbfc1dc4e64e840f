"""Finite monotone-histogram expert classes: the theoretical grid class and
practical equal-width factories for tractable aggregation runs."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .densities import BoundsAB, DensityError, MonotoneHistogram


class ExpertClassError(ValueError):
    """Invalid expert-class construction."""


class ClassSizeError(ExpertClassError):
    """Raw candidate space exceeds the enumeration cap."""


ENUMERATION_CAP = 10_000_000


@dataclass(frozen=True)
class ExpertGridParams:
    """Parameters of the gridded expert class.

    The breakpoint grid has spacing Delta_b = n^-(beta+1) with
    floor(n^(beta+1)) + 1 points, and log-heights live on
    log(a) + log(b/a) * grid.
    """

    n: int
    k: int
    beta: float
    bounds: BoundsAB

    def __post_init__(self):
        if self.n < 1 or self.k < 1:
            raise ExpertClassError("need n >= 1 and k >= 1")
        if self.beta < 0:
            raise ExpertClassError("beta must be nonnegative")
        if not self.bounds.is_finite:
            raise ExpertClassError("expert grids require 0 < a <= b < inf")

    @property
    def delta_b(self) -> float:
        return float(self.n) ** (-(self.beta + 1.0))

    @property
    def num_grid(self) -> int:
        return int(math.floor(float(self.n) ** (self.beta + 1.0) + 1e-9))

    def grid_values(self) -> np.ndarray:
        return np.arange(self.num_grid + 1) * self.delta_b

    def interior_grid_values(self) -> np.ndarray:
        g = self.grid_values()
        return g[(g > 0.0) & (g < 1.0)]

    def log_height_values(self) -> np.ndarray:
        return math.log(self.bounds.a) + self.bounds.V * self.grid_values()

    def to_dict(self) -> dict:
        return {"n": self.n, "k": self.k, "beta": self.beta, "a": self.bounds.a, "b": self.bounds.b}


@dataclass(frozen=True)
class ExpertClass:
    """Ordered, deduplicated collection of monotone histogram experts."""

    experts: tuple
    provenance: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.experts)

    def __iter__(self) -> Iterator[MonotoneHistogram]:
        return iter(self.experts)

    def __getitem__(self, i) -> MonotoneHistogram:
        return self.experts[i]

    def to_json_obj(self) -> dict:
        return {
            "provenance": self.provenance,
            "experts": [e.to_dict() for e in self.experts],
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "ExpertClass":
        return cls(
            tuple(MonotoneHistogram(e["breakpoints"], e["heights"]) for e in obj["experts"]),
            provenance=obj.get("provenance", {}),
        )


def _dedup_sorted(cands: list[MonotoneHistogram]) -> tuple:
    seen = {}
    for h in cands:
        key = h.function_key()
        if key not in seen:
            seen[key] = h.simplified()
    ordered = sorted(
        seen.values(),
        key=lambda h: (h.num_cells, tuple(h.breakpoints.tolist()), tuple(h.heights.tolist())),
    )
    return tuple(ordered)


def class_size_bound(params: ExpertGridParams) -> int:
    """Upper bound (floor(n^(beta+1)) + 2)^(2(k-1)) on the class size."""
    return (params.num_grid + 2) ** (2 * (params.k - 1))


def enumerate_expert_class(params: ExpertGridParams, cap: int = ENUMERATION_CAP) -> ExpertClass:
    """Enumerate the gridded expert class exactly. Desk-scale only.

    Members have r <= k bins, interior breakpoints on the breakpoint grid,
    non-increasing non-final heights on the log-height grid, and a final
    height fixed by normalization that must stay in [a,b] and below its
    neighbour. Feasibility of the final height is enforced with plain
    comparisons on the computed value, no tolerance slack.
    """
    raw = (params.num_grid + 1) ** (2 * (params.k - 1))
    if raw > cap:
        raise ClassSizeError(
            f"raw candidate space {raw} exceeds cap {cap}; use a factory class instead"
        )
    a, b = params.bounds.a, params.bounds.b
    interior = params.interior_grid_values()
    log_heights = params.log_height_values()
    heights_grid = np.exp(log_heights)
    cands: list[MonotoneHistogram] = []
    if a <= 1.0 <= b:
        cands.append(MonotoneHistogram.uniform())
    for r in range(2, params.k + 1):
        for bps in itertools.combinations(interior, r - 1):
            widths = np.diff(np.concatenate(([0.0], bps)))
            tail_width = 1.0 - bps[-1]
            for idx in itertools.combinations_with_replacement(range(len(heights_grid)), r - 1):
                heads = heights_grid[list(idx)][::-1]  # non-increasing
                theta_r = (1.0 - float(heads @ widths)) / tail_width
                if not (a <= theta_r <= b):
                    continue
                if heads[-1] < theta_r:
                    continue
                cands.append(
                    MonotoneHistogram(
                        np.concatenate(([0.0], bps, [1.0])),
                        np.concatenate((heads, [theta_r])),
                    )
                )
    experts = _dedup_sorted(cands)
    return ExpertClass(experts, provenance={"kind": "grid", "params": params.to_dict()})


@dataclass(frozen=True)
class ExpertMembershipReport:
    ok: bool
    failures: tuple


def validate_expert_membership(
    hist: MonotoneHistogram, params: ExpertGridParams, tol: float = 1e-9
) -> ExpertMembershipReport:
    """Check items (i)-(iv) of the grid-class definition for one histogram."""
    failures = []
    h = hist.simplified()
    r = h.num_cells
    if r > params.k:
        failures.append(f"(i) bin count {r} exceeds k={params.k}")
    interior = h.breakpoints[1:-1]
    if interior.size:
        grid_idx = np.round(interior / params.delta_b)
        snapped = grid_idx * params.delta_b
        if np.any(np.abs(interior - snapped) > 1e-12) or np.any(grid_idx > params.num_grid):
            failures.append("(ii) interior breakpoints off the breakpoint grid")
        if np.any(interior <= 0.0) or np.any(interior >= 1.0):
            failures.append("(ii) interior breakpoints must lie strictly inside (0,1)")
    heads = h.heights[:-1]
    if heads.size:
        step = params.bounds.V * params.delta_b
        li = np.round((np.log(heads) - math.log(params.bounds.a)) / step)
        snapped = math.log(params.bounds.a) + li * step
        if np.any(np.abs(np.log(heads) - snapped) > 1e-12) or np.any(li < 0) or np.any(
            li > params.num_grid
        ):
            failures.append("(iii) non-final log-heights off the log-height grid")
        if np.any(np.diff(heads) > 0):
            failures.append("(iii) non-final heights must be non-increasing")
    widths = h.widths
    theta_r = h.heights[-1]
    if r >= 2:
        expected = (1.0 - float(heads @ widths[:-1])) / widths[-1]
        if abs(theta_r - expected) > 1e-12:
            failures.append("(iv) final height is not the normalizing value")
        if heads[-1] < theta_r - 1e-12:
            failures.append("(iv) final height exceeds its neighbour")
    if not (params.bounds.a - 1e-12 <= theta_r <= params.bounds.b + 1e-12):
        failures.append(f"(iv) final height {theta_r} outside [a,b]")
    return ExpertMembershipReport(ok=not failures, failures=tuple(failures))


def geometric_ladder(bounds: BoundsAB, levels: int) -> np.ndarray:
    if levels < 1:
        raise ExpertClassError("need at least one ladder level")
    if not bounds.is_finite:
        raise ExpertClassError("ladder requires finite bounds")
    if levels == 1:
        return np.array([bounds.a])
    return np.geomspace(bounds.a, bounds.b, levels)


def factory_equal_mass_histograms(
    bin_counts: Sequence[int], bounds: BoundsAB, levels: int = 9
) -> ExpertClass:
    """Equal-width-bin expert factory.

    For each bin count m, all non-increasing m-tuples from a geometric
    height ladder in [a,b] are renormalized and kept when they remain in
    D_[a,b]; duplicates as functions are merged.
    """
    ladder = geometric_ladder(bounds, levels)
    a, b = bounds.a, bounds.b
    cands: list[MonotoneHistogram] = []
    for m in bin_counts:
        if m < 1:
            raise ExpertClassError("bin counts must be >= 1")
        grid = np.linspace(0.0, 1.0, m + 1)
        idx_list = list(itertools.combinations_with_replacement(range(levels), m))
        idx = np.asarray(idx_list, dtype=np.int64)[:, ::-1]  # non-increasing rows
        heights = ladder[idx]
        mass = heights.mean(axis=1)
        theta = heights / mass[:, None]
        ok = np.all(theta >= a - 1e-12, axis=1) & np.all(theta <= b + 1e-12, axis=1)
        for row in theta[ok]:
            cands.append(MonotoneHistogram(grid, row, renormalize=True))
    if not cands:
        raise ExpertClassError("factory produced an empty class; widen bounds or the ladder")
    experts = _dedup_sorted(cands)
    return ExpertClass(
        experts,
        provenance={
            "kind": "factory",
            "name": "equal_mass_histograms",
            "bin_counts": list(bin_counts),
            "levels": levels,
            "a": bounds.a,
            "b": bounds.b,
        },
    )


DEFAULT_FACTORY_LEVELS = {1: 9, 2: 9, 4: 9, 8: 9, 16: 5}


def default_factory_class(bounds: BoundsAB, levels_by_count: dict | None = None) -> ExpertClass:
    """Default aggregation class: equal-width factories over bin counts
    {1,2,4,8,16} with per-bin-count ladder levels.

    The per-count levels keep the class at a few thousand experts; a single
    9-level ladder at 16 bins would blow the class up combinatorially.
    """
    levels_by_count = dict(DEFAULT_FACTORY_LEVELS if levels_by_count is None else levels_by_count)
    cands: list[MonotoneHistogram] = []
    for m, levels in sorted(levels_by_count.items()):
        sub = factory_equal_mass_histograms([m], bounds, levels=levels)
        cands.extend(sub.experts)
    experts = _dedup_sorted(cands)
    return ExpertClass(
        experts,
        provenance={
            "kind": "factory",
            "name": "default",
            "levels_by_count": {str(k): v for k, v in sorted(levels_by_count.items())},
            "a": bounds.a,
            "b": bounds.b,
        },
    )
