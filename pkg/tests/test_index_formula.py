import numpy as np
import pandas as pd
import pytest

from utils.coneop import laplace_type
from utils.errors import ConfigurationError, ValidationError, Verdict
from utils.index_formula import (Factorization, MellinPerturbation, eta_term, index_assemble,
                                 invariance_red_to_const, invariance_red_to_sobolev, kernel_dimensions, mckean_singer,
                                 omega_constant, rank_one_example, rational_perturbation, reflect_across_line,
                                 sobolev_verdicts, winding_census, zero_perturbation)


@pytest.fixture(scope="module")
def wide_matrix():
    return np.random.default_rng(7).standard_normal((40, 60))


class TestDiscreteIndex:

    def test_kernel_dimensions(self, wide_matrix):
        dims = kernel_dimensions(wide_matrix)
        assert (dims["kernel"], dims["cokernel"]) == (20, 0)
        assert not dims["ambiguous"]
        assert kernel_dimensions(np.zeros((3, 2)))["kernel"] == 2

    def test_rank_deficient_square(self):
        matrix = np.diag([1.0, 2.0, 0.0])
        dims = kernel_dimensions(matrix)
        assert (dims["kernel"], dims["cokernel"]) == (1, 1)

    def test_mckean_singer_is_constant(self, wide_matrix):
        np.testing.assert_allclose(mckean_singer(wide_matrix, [1e-3, 0.1, 10.0]), 20.0, atol=1e-9)

    def test_omega_equals_kernel_gap(self, wide_matrix):
        result = omega_constant(wide_matrix)
        assert result.value == pytest.approx(20.0, abs=1e-6)
        assert result.kernel_gap == 20
        assert result.verdict == Verdict.PASS
        assert result.flags == []

    def test_omega_of_invertible_matrix(self):
        result = omega_constant(np.eye(5))
        assert result.value == 0.0
        assert result.kernel_gap == 0


class TestEta:

    def test_rank_one_example(self):
        # zero of 1 + H at -1.5i below the line, both poles above it
        result = eta_term(rank_one_example())
        assert result.value == pytest.approx(1.0, abs=1e-6)
        assert result.oracle == 1
        assert abs(result.imaginary_part) < 1e-6

    def test_reflection_flips_count(self):
        reflected = reflect_across_line(rank_one_example())
        assert eta_term(reflected).value == pytest.approx(-1.0, abs=1e-6)
        assert winding_census(reflected) == -1

    def test_zero_perturbation(self):
        assert eta_term(zero_perturbation(), with_oracle=False).value == pytest.approx(0.0, abs=1e-12)

    def test_zero_on_line_rejected(self):
        # c = 1 - b^2 puts the zeros of 1 + H at +-i
        with pytest.raises(ValidationError):
            eta_term(rational_perturbation(0.75, 0.5j, -0.5j))

    def test_slow_decay_rejected(self):
        with pytest.raises(ConfigurationError):
            MellinPerturbation(h_hat=lambda sigma: np.array([[1.0 / sigma]]),
                               h_prime=lambda sigma: np.array([[-1.0 / sigma ** 2]]))


def test_index_assemble():
    report = index_assemble(Factorization(np.eye(5), rank_one_example()))
    assert report.index == pytest.approx(-1.0, abs=1e-6)
    assert report.verdict == Verdict.PASS
    assert "eta_oracle_mismatch" not in report.flags
    frame = report.to_frame()
    assert list(frame.columns) == ["omega", "eta", "index", "integer_distance", "flags", "verdict"]


class TestInvariance:

    def test_red_to_const_decays(self):
        result = invariance_red_to_const(laplace_type(perturbation=lambda x: 0.5 * x))
        assert result.slope >= 0.8
        assert result.verdict == Verdict.PASS

    def test_red_to_const_unperturbed(self):
        result = invariance_red_to_const(laplace_type())
        assert (result.table["ratio"] == 0).all()
        assert result.slope == np.inf

    def test_red_to_const_unresolved_tau(self):
        with pytest.raises(ConfigurationError):
            invariance_red_to_const(laplace_type(perturbation=lambda x: 0.5 * x), tau_list=[1e-6], s_min=-6.0)

    def test_sobolev_sweep_flags_jump_at_crossing(self):
        # nu_0 = 1.5 puts a pole 0.5 below the weight line; nu_1 = sqrt(3.25) stays beyond 0.7
        report = invariance_red_to_sobolev(laplace_type(a=1.5, alpha=1.0, mode_cap=1), [0.0, 0.2, 0.7])
        assert report["gap"].iloc[0] == pytest.approx(0.5)
        assert list(report["crossing"]) == [False, False, True]
        assert list(report["kernel"]) == [0, 0, 1]
        assert (report["cokernel"] == 0).all()
        assert list(report["index"]) == [0, 0, 1]
        assert list(report["dimension_jump"]) == [False, False, True]
        assert (report["verdict"] == "PASS").all()

    def test_jump_without_crossing_fails(self):
        table = pd.DataFrame({"eps": [0.0, 0.2, 0.4], "kernel": [0, 1, 1], "cokernel": [0, 0, 0],
                              "crossing": [False, False, True], "ambiguous": [False, False, False]})
        report = sobolev_verdicts(table)
        assert list(report["dimension_jump"]) == [False, True, True]
        assert list(report["verdict"]) == ["PASS", "FAIL", "PASS"]

    def test_sobolev_negative_eps(self):
        with pytest.raises(ConfigurationError):
            invariance_red_to_sobolev(laplace_type(mode_cap=0), [-0.1])
