import numpy as np
import pytest

from utils.coneop import bessel_oracle, discretize, laplace_type
from utils.errors import ConfigurationError, ValidationError
from utils.traces import (IDENTITY, Contour, complex_power_sum, full_spectrum, heat_trace, heat_trace_contour,
                          oracle_spectrum, resolvent_power_trace, single_mode_spectrum, spectrum, tip_cutoff,
                          weight_operator, weighted_heat_trace)


def interval_spectrum(count):
    # Dirichlet Laplacian on an interval of length 1: (k pi)^2
    return single_mode_spectrum((np.pi * np.arange(1, count + 1)) ** 2)


def test_tip_cutoff_profile():
    phi = tip_cutoff()
    np.testing.assert_allclose(phi([0.1, 0.5, 0.9, 2.0]), [1.0, 1.0, 0.0, 0.0])
    with pytest.raises(ConfigurationError):
        tip_cutoff(0.9, 0.5)


def test_weight_operator_identity():
    assert IDENTITY.is_identity
    assert not weight_operator(beta=1.0).is_identity
    assert weight_operator(mellin_order=2.0).mode_factor(3) == pytest.approx(10.0)


class TestSpectra:

    def test_oracle_first_eigenvalue(self, oracle):
        assert oracle.eigenvalues[0][0] == pytest.approx(bessel_oracle(1.5, 1)[0], rel=1e-12)
        np.testing.assert_array_equal(oracle.eigenvalues[3], oracle.eigenvalues[-3])
        assert oracle.all_values().max() < 4e4

    def test_oracle_rejects_perturbed_operator(self):
        with pytest.raises(ConfigurationError):
            oracle_spectrum(laplace_type(perturbation=lambda x: x), 1e3)

    def test_expectation_of_unit_weight(self, oracle):
        # phi = 1 on the whole cone when the cutoff starts beyond x = 1
        B = weight_operator(inner=2.0, outer=3.0)
        np.testing.assert_allclose(oracle.expectation(B, 0)[:5], 1.0, rtol=1e-10)
        disc = discretize(laplace_type(mode_cap=1), npoints=600)
        np.testing.assert_allclose(spectrum(disc, 5).expectation(B, 1), 1.0, rtol=1e-10)

    def test_frame_layout(self):
        frame = interval_spectrum(3).to_frame()
        assert list(frame.columns) == ["mode", "k", "eigenvalue", "provenance"]
        assert list(frame["k"]) == [1, 2, 3]

    def test_full_spectrum_has_every_value(self):
        disc = discretize(laplace_type(mode_cap=1), npoints=200)
        assert full_spectrum(disc).count == 3 * 200


class TestHeatTrace:

    def test_leading_weyl_terms(self, oracle, heat_grid):
        series = heat_trace(oracle, heat_grid[:5])
        # area / (4 pi t) - perimeter / (8 sqrt(pi t)) for the unit disc
        corrected = series.param * series.values + np.sqrt(np.pi * series.param) / 4.0
        np.testing.assert_allclose(corrected, 0.25, rtol=0.02)
        assert series.meta["kind"] == "heat"
        assert np.all(series.tail_bound < 0.01 * series.values)

    def test_insufficient_spectrum_raises(self):
        with pytest.raises(ValidationError) as info:
            heat_trace(interval_spectrum(10), [1e-3])
        assert info.value.payload["required_count"] > 10

    def test_required_count_is_enough(self):
        with pytest.raises(ValidationError) as info:
            heat_trace(interval_spectrum(10), [1e-3])
        series = heat_trace(interval_spectrum(info.value.payload["required_count"]), [1e-3])
        assert series.tail_bound[0] < 0.01 * series.values[0]

    def test_weighted_tail_scaled_per_mode(self, oracle):
        # top weights of x^{-1} phi grow like log(j / nu) in the low modes only
        lam = -np.geomspace(10.0, 100.0, 40) + 0j
        series = resolvent_power_trace(oracle, weight_operator(beta=1.0), 2, lam)
        assert np.all(series.tail_bound < 0.01 * np.abs(series.values))

    def test_weighted_trace_needs_eigenfunctions(self):
        with pytest.raises(ConfigurationError):
            weighted_heat_trace(interval_spectrum(50), weight_operator(beta=1.0), [0.1])

    def test_nonpositive_time_rejected(self, oracle):
        with pytest.raises(ConfigurationError):
            heat_trace(oracle, [0.0, 0.1])

    def test_window(self, oracle, heat_grid):
        series = heat_trace(oracle, heat_grid[-10:])
        part = series.window(0.05, 0.1)
        assert part.param.min() >= 0.05
        assert list(part.to_frame().columns) == ["param", "value_re", "value_im", "tail_bound"]


class TestContour:

    def test_contour_matches_eigen_sum(self):
        spec = interval_spectrum(200)
        for N in (2, 3):
            direct = np.sum(np.exp(-0.1 * spec.all_values()))
            assert heat_trace_contour(spec, 0.1, N=N) == pytest.approx(direct, rel=1e-6)

    def test_contour_on_discretization(self):
        disc = discretize(laplace_type(mode_cap=0), npoints=150)
        direct = np.sum(np.exp(-0.05 * full_spectrum(disc).all_values()))
        assert heat_trace_contour(disc, 0.05) == pytest.approx(direct, rel=1e-6)

    def test_contour_arguments(self):
        with pytest.raises(ConfigurationError):
            heat_trace_contour(interval_spectrum(5), 0.1, N=1)
        with pytest.raises(ConfigurationError):
            Contour(a=1.0)


class TestResolventTrace:

    def test_leading_term(self, oracle):
        series = resolvent_power_trace(oracle, IDENTITY, 2, [-100.0 + 0j])
        r = series.param[0]
        # 1/(4 r) - (pi/8) r^{-3/2}
        assert r * series.values[0].real + np.pi / 8.0 / np.sqrt(r) == pytest.approx(0.25, rel=0.05)
        assert series.meta["N"] == 2

    def test_trace_class_condition(self, oracle):
        with pytest.raises(ConfigurationError):
            resolvent_power_trace(oracle, IDENTITY, 1, [-10.0 + 0j])


class TestPowerSum:

    def test_interval_zeta(self):
        value, bound = complex_power_sum(interval_spectrum(2000), -2.0)
        # sum (k pi)^{-4} = 1/90
        assert value == pytest.approx(1.0 / 90.0, rel=1e-9)
        assert bound < 1e-10

    def test_region_of_convergence(self):
        with pytest.raises(ConfigurationError):
            complex_power_sum(interval_spectrum(10), -0.8)
