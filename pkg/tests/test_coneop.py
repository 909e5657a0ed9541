import numpy as np
import pytest

from utils.coneop import (bessel_oracle, bessel_zeros_below, boundary_spectrum, check_parameter_ellipticity,
                          conormal_symbol, discretize, kappa_homogeneity_deviation, kappa_scale, laplace_type,
                          polynomial_operator, resolvent_norm, resolvent_solve)
from utils.errors import ConfigurationError, Verdict
from utils.symbols import LEFT_HALF_PLANE, Sector


@pytest.fixture(scope="module")
def model():
    return laplace_type(mode_cap=3)


@pytest.fixture(scope="module")
def disc(model):
    return discretize(model, npoints=2000)


class TestBoundarySpectrum:

    @pytest.mark.parametrize("a", [1.1, 1.5, 2.0])
    def test_poles_stay_outside_unit_strip(self, a):
        spec = boundary_spectrum(laplace_type(a=a, mode_cap=8), strip=a + 1.0)
        assert spec.min_abs_imag() == pytest.approx(a, abs=1e-10)
        assert spec.min_abs_imag() > 1.0

    def test_laplace_type_poles(self, model):
        spec = boundary_spectrum(model, strip=2.0)
        # sigma = +-i sqrt(m^2 + a^2): modes 0 and +-1 fall inside the strip
        assert len(spec) == 6
        sigmas = sorted(abs(sigma.imag) for sigma, _, m in spec.poles if m == 0)
        assert sigmas == pytest.approx([1.5, 1.5])
        assert spec.min_abs_imag() == pytest.approx(1.5)

    def test_double_root_has_order_two(self):
        # (sigma - i)^2
        op = polynomial_operator([-1.0, -2.0j, 1.0])
        spec = boundary_spectrum(op, strip=2.0)
        assert len(spec) == 1
        sigma, order, _ = spec.poles[0]
        assert order == 2
        assert sigma == pytest.approx(1j, abs=1e-9)

    def test_vanishing_family_raises(self):
        with pytest.raises(ConfigurationError):
            boundary_spectrum(polynomial_operator([0.0]), strip=1.0)

    def test_conormal_symbol_per_mode(self, model):
        symbol = conormal_symbol(model)
        assert sorted(symbol) == list(range(-3, 4))
        assert symbol[2](0.0) == pytest.approx(4.0 + 2.25)

    def test_frame_columns(self, model):
        frame = boundary_spectrum(model, strip=2.0).to_frame()
        assert list(frame.columns) == ["mode", "sigma_re", "sigma_im", "order"]


class TestDiscretization:

    def test_bad_arguments(self, model):
        with pytest.raises(ConfigurationError):
            discretize(model, s_min=-3.0)
        with pytest.raises(ConfigurationError):
            discretize(model, npoints=50)
        with pytest.raises(ConfigurationError):
            discretize(polynomial_operator([1.0, 1.0, 1.0]))

    def test_perturbation_must_vanish_at_tip(self):
        with pytest.raises(ConfigurationError):
            laplace_type(perturbation=lambda x: 1.0 + x)

    def test_eigenvalues_match_bessel_oracle(self, model, disc):
        for m in (0, 1, 2):
            nu = np.sqrt(m ** 2 + 2.25)
            computed = disc.eigenvalues(m, count=3)
            np.testing.assert_allclose(computed, bessel_oracle(nu, 3), rtol=1e-3)

    def test_first_eigenvalue_at_acceptance_resolution(self, disc):
        # j_{3/2, 1} is the first positive root of tan x = x
        j = 4.4934094579090642
        assert disc.eigenvalues(0, count=1)[0] == pytest.approx(j ** 2, rel=1e-4)

    def test_eigenpairs_are_weight_normalized(self, disc):
        _, vectors = disc.eigenpairs(0, 3)
        gram = vectors.T @ (disc.weight[:, None] * vectors)
        np.testing.assert_allclose(gram, np.eye(3), atol=1e-8)

    def test_frozen_flag_drops_perturbation(self):
        op = laplace_type(mode_cap=1, perturbation=lambda x: 0.5 * x)
        assert discretize(op, npoints=200, frozen=True).op.x_perturbation is None


class TestBessel:

    def test_half_order_zeros(self):
        # j_{1/2, k} = k pi
        np.testing.assert_allclose(bessel_oracle(0.5, 4), (np.pi * np.arange(1, 5)) ** 2, rtol=1e-12)

    def test_zeros_below_limit(self):
        zeros = bessel_zeros_below(0.0, 10.0)
        np.testing.assert_allclose(zeros, [2.404825557695773, 5.520078110286311, 8.653727912911012], rtol=1e-12)

    def test_negative_order_rejected(self):
        with pytest.raises(ConfigurationError):
            bessel_zeros_below(-1.0, 5.0)


class TestResolvent:

    def test_kappa_scale_integer_shift(self):
        s = np.linspace(-5.0, 0.0, 11)
        u = np.arange(11.0)
        shifted = kappa_scale(np.exp(2 * 0.5), u, s)
        np.testing.assert_allclose(shifted[:9], u[2:])
        assert np.all(shifted[9:] == 0)

    def test_kappa_scale_rejects_nonpositive(self):
        with pytest.raises(ConfigurationError):
            kappa_scale(0.0, np.ones(3), np.arange(3.0))

    def test_resolvent_solve_inverts(self, disc):
        rhs = np.exp(-((disc.s_grid + 2.0) / 0.5) ** 2)
        lam = -50.0 + 10.0j
        u = resolvent_solve(disc, lam, rhs, mode=1)
        residual = disc.stiffness(1) @ u - lam * disc.weight * u
        np.testing.assert_allclose(residual, disc.weight * rhs, atol=1e-9)

    def test_block_solve_gives_resolvent_trace(self):
        small = discretize(laplace_type(mode_cap=0), npoints=200)
        lam = -30.0 + 5.0j
        block = resolvent_solve(small, lam, np.eye(200), mode=0)
        expected = np.sum(1.0 / (small.eigenvalues(0) - lam))
        assert complex(np.trace(block)) == pytest.approx(expected, rel=1e-8)

    def test_resolvent_norm_on_negative_ray(self, disc):
        lowest = disc.eigenvalues(0, count=1)[0]
        assert resolvent_norm(disc, -100.0) == pytest.approx(1.0 / (100.0 + lowest))

    def test_resolvent_norm_decays_like_inverse_modulus(self, disc):
        moduli = np.geomspace(1e2, 1e6, 9)
        norms = [resolvent_norm(disc, -modulus) for modulus in moduli]
        slope = np.polyfit(np.log(moduli), np.log(norms), 1)[0]
        assert -1.05 <= slope <= -0.95

    def test_kappa_homogeneity_of_frozen_model(self, model):
        frozen = discretize(model, npoints=800, s_max=4.0, modes=[0])
        table = kappa_homogeneity_deviation(frozen, [1e2, 1e3])
        assert list(table.columns) == ["lam_abs", "norm", "scaled_norm", "deviation"]
        assert (table["deviation"] < 0.02).all()


class TestEllipticity:

    def test_laplace_type_is_parameter_elliptic(self, model):
        report = check_parameter_ellipticity(model, LEFT_HALF_PLANE)
        assert report.symbol_ok
        assert report.clean_weight_line
        assert report.verdict != Verdict.FAIL

    def test_pole_on_weight_line_fails(self):
        op = laplace_type(a=1.0, mode_cap=1, alpha=1.0)
        assert check_parameter_ellipticity(op, LEFT_HALF_PLANE).verdict == Verdict.FAIL

    def test_right_half_plane_fails_symbol_check(self, model):
        report = check_parameter_ellipticity(model, Sector(-0.5, 0.5))
        assert not report.symbol_ok
        assert report.verdict == Verdict.FAIL

    def test_perturbed_operator_rejected(self):
        with pytest.raises(ConfigurationError):
            check_parameter_ellipticity(laplace_type(perturbation=lambda x: x), LEFT_HALF_PLANE)
