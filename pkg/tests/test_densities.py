import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from monodens import (
    BoundsAB,
    DensityError,
    DomainError,
    Linear,
    MonotoneHistogram,
    PiecewiseConstant,
    Quadratic,
    Uniform,
    divergence,
    evaluate,
    expected_log_density,
    inverse_cdf_sample,
    validate,
)
from monodens.densities import density_from_dict, density_to_dict, log_pdf_at_sample

from conftest import random_monotone_histogram


class PdfOnly:
    """Adapter hiding the histogram structure to force the quadrature path."""

    def __init__(self, d):
        self._d = d

    def pdf(self, u):
        return self._d.pdf(u)

    def logpdf(self, u):
        return self._d.logpdf(u)


HIST = MonotoneHistogram([0.0, 0.5, 1.0], [1.5, 0.5])


class TestEvaluate:
    def test_uniform(self):
        assert evaluate(Uniform(), 0.37) == 1.0

    def test_linear_at_zero_is_delta1(self):
        # section-4 model (delta0, delta1) = (0.75, 1.25)
        assert evaluate(Linear(0.75, 1.25), 0.0) == 1.25

    def test_half_open_cell_convention(self):
        assert evaluate(HIST, 0.5) == 0.5

    def test_closed_final_cell(self):
        assert evaluate(HIST, 1.0) == 0.5

    def test_left_value_pays_closing_cell(self):
        assert HIST.left_pdf(0.5) == 1.5
        assert math.isclose(log_pdf_at_sample(HIST, 0.5), math.log(1.5))

    def test_domain_error(self):
        with pytest.raises(DomainError):
            evaluate(HIST, 1.2)
        with pytest.raises(DomainError):
            evaluate(Uniform(), -0.1)


class TestInverseCdf:
    def test_uniform_identity(self):
        assert inverse_cdf_sample(Uniform(), 0.3) == 0.3

    def test_histogram_analytic(self):
        # CDF(0.5) = 0.75 for heights (1.5, 0.5)
        assert math.isclose(inverse_cdf_sample(HIST, 0.75), 0.5)

    def test_quadratic(self):
        # 1 - (1-u)^3 = 0.875  =>  u = 0.5
        assert math.isclose(inverse_cdf_sample(Quadratic(), 0.875), 0.5)

    @pytest.mark.parametrize(
        "d",
        [
            Uniform(),
            Linear(0.5, 1.5),
            Linear(0.75, 1.25),
            Quadratic(),
            PiecewiseConstant([1.25, 13.0 / 12, 11.0 / 12, 0.75]),
            HIST,
            MonotoneHistogram([0.0, 0.1, 0.4, 1.0], [3.0, 1.5, 0.5], renormalize=True),
        ],
    )
    def test_cdf_roundtrip_grid(self, d):
        grid = np.arange(0.0, 1.0, 0.01)
        x = d.ppf(grid)
        assert np.max(np.abs(np.asarray(d.cdf(x)) - grid)) <= 1e-9

    def test_monotone_in_u(self, rng):
        u = np.sort(rng.random(200))
        x = HIST.ppf(u)
        assert np.all(np.diff(x) >= 0)


class TestDivergence:
    @pytest.mark.parametrize("metric", ["kl", "hellinger2", "l22"])
    def test_self_divergence_zero(self, metric):
        assert divergence(HIST, HIST, metric) == pytest.approx(0.0, abs=1e-12)

    def test_histogram_kl_closed_form(self):
        expected = 0.5 * 1.5 * math.log(1.5) + 0.5 * 0.5 * math.log(0.5)
        assert divergence(HIST, Uniform(), "kl") == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(0.130812, abs=5e-7)

    def test_linear_kl_matches_quadrature_oracle(self):
        q = Linear(0.5, 1.5)
        oracle, _ = quad(lambda u: q.pdf(u) * math.log(q.pdf(u)), 0.0, 1.0, epsabs=1e-12)
        assert divergence(q, Uniform(), "kl") == pytest.approx(oracle, abs=1e-10)
        assert expected_log_density(q) == pytest.approx(oracle, abs=1e-10)

    def test_kl_infinite_when_g_vanishes(self):
        g = MonotoneHistogram([0.0, 0.5, 1.0], [2.0, 0.0])
        assert divergence(Uniform(), g, "kl") == math.inf

    @pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
    def test_histogram_matches_quadrature(self, rng):
        # the adapter hides the cell structure, so quad sees discontinuities
        bounds = BoundsAB(0.3, 2.5)
        for _ in range(5):
            f = random_monotone_histogram(rng, bounds)
            g = random_monotone_histogram(rng, bounds)
            for metric in ("kl", "hellinger2", "l22"):
                exact = divergence(f, g, metric)
                viaquad = divergence(PdfOnly(f), PdfOnly(g), metric)
                assert exact == pytest.approx(viaquad, abs=1e-8)

    def test_divergence_inequalities(self, rng):
        # distance equivalences on the box class, used as test oracles
        g0, g1 = 0.4, 2.2
        bounds = BoundsAB(g0, g1)
        for _ in range(25):
            f = random_monotone_histogram(rng, bounds)
            g = random_monotone_histogram(rng, bounds)
            kl = divergence(f, g, "kl")
            l22 = divergence(f, g, "l22")
            h2 = divergence(f, g, "hellinger2")
            root_int = 2.0 * h2  # int (sqrt f - sqrt g)^2
            assert kl <= l22 / g0 + 1e-12
            assert kl <= 8.0 * g1 / g0 * h2 + 1e-12
            assert g0 * root_int <= l22 + 1e-12
            assert l22 <= 4.0 * g1 * root_int + 1e-12


class TestValidate:
    def test_uniform_valid(self):
        report = validate(MonotoneHistogram([0.0, 1.0], [1.0]), BoundsAB(0.5, 2.0))
        assert report.is_valid

    def test_monotonicity_violation_reported(self):
        report = validate(([0.0, 0.5, 1.0], [0.5, 1.5]), BoundsAB(0.0, math.inf))
        assert not report.monotone
        assert report.monotonicity_violations == (1,)

    def test_lower_bound_violation_reported(self):
        report = validate(HIST, BoundsAB(0.6, 2.0))
        assert not report.is_valid
        assert report.lower_violations == (1,)

    def test_normalization_residual(self):
        report = validate(([0.0, 1.0], [1.5]), BoundsAB(0.0, math.inf))
        assert report.normalization_residual == pytest.approx(0.5)
        assert not report.normalized


class TestHistogramInvariants:
    def test_rejects_bad_breakpoints(self):
        with pytest.raises(DensityError):
            MonotoneHistogram([0.1, 1.0], [1.0])
        with pytest.raises(DensityError):
            MonotoneHistogram([0.0, 0.5, 0.5, 1.0], [2.0, 1.0, 0.5])

    def test_rejects_increasing_heights(self):
        with pytest.raises(DensityError):
            MonotoneHistogram([0.0, 0.5, 1.0], [0.5, 1.5])

    def test_rejects_unnormalized(self):
        with pytest.raises(DensityError):
            MonotoneHistogram([0.0, 1.0], [1.5])

    def test_renormalize_exact(self):
        h = MonotoneHistogram([0.0, 0.5, 1.0], [3.0, 1.0], renormalize=True)
        assert h.total_mass() == pytest.approx(1.0, abs=1e-15)

    def test_immutable(self):
        with pytest.raises(AttributeError):
            HIST.heights = None
        with pytest.raises(ValueError):
            HIST.heights[0] = 2.0

    def test_simplified_merges(self):
        h = MonotoneHistogram([0.0, 0.25, 0.5, 1.0], [2.0, 2.0, 0.0], renormalize=True)
        s = h.simplified()
        assert s.breakpoints.tolist() == [0.0, 0.5, 1.0]
        assert s.heights.tolist() == [2.0, 0.0]

    def test_json_round_trip(self):
        for d in [Uniform(), Linear(0.5, 1.5), Quadratic(), PiecewiseConstant([1.5, 0.5]), HIST]:
            spec = json.loads(json.dumps(density_to_dict(d)))
            d2 = density_from_dict(spec)
            u = np.linspace(0, 1, 33)
            assert np.allclose(np.asarray(d.pdf(u)), np.asarray(d2.pdf(u)))

    def test_linear_requires_valid_params(self):
        with pytest.raises(DensityError):
            Linear(1.25, 0.75)
        with pytest.raises(DensityError):
            Linear(0.3, 1.5)


class TestBounds:
    def test_v(self):
        assert BoundsAB(0.5, 2.0).V == pytest.approx(math.log(4.0))

    def test_v_rejects_infinite(self):
        with pytest.raises(DensityError):
            BoundsAB(0.5, math.inf).V
        with pytest.raises(DensityError):
            BoundsAB(0.0, 2.0).V

    def test_equal_bounds_allowed(self):
        assert BoundsAB(1.0, 1.0).V == 0.0

    def test_rejects_inverted(self):
        with pytest.raises(DensityError):
            BoundsAB(2.0, 1.0)


@settings(max_examples=40, deadline=None)
@given(st.floats(min_value=0.0, max_value=0.999), st.floats(min_value=0.05, max_value=0.95))
def test_ppf_cdf_property(u01, t1):
    h = MonotoneHistogram([0.0, t1, 1.0], [1.6, 0.4], renormalize=True)
    x = h.ppf(u01)
    assert abs(h.cdf(x) - u01) <= 1e-9
