import numpy as np
import pytest

from utils.errors import NumericalError, ValidationError
from utils.expansion_fitter import ExpansionFitter, LogPolyExpansion

T = np.geomspace(1e-3, 1e-1, 40)
TERMS = [(-1.0, 0), (0.0, 0), (0.0, 1), (1.0, 0)]


def fitted(values, terms=TERMS, **kwargs):
    model = ExpansionFitter(T, values, terms, **kwargs)
    model.build()
    model.solve()
    return model.get_solu()


def test_recovers_log_polynomial():
    expansion = fitted(2.0 / T + 3.0 * np.log(T) + 1.0)
    assert expansion.coefficient(-1.0) == pytest.approx(2.0, rel=1e-8)
    assert expansion.coefficient(0.0, 1) == pytest.approx(3.0, rel=1e-8)
    assert expansion.coefficient(0.0, 0) == pytest.approx(1.0, rel=1e-6)
    assert expansion.detected_terms() == [(-1.0, 0), (0.0, 0), (0.0, 1)]
    assert not expansion.is_detected(1.0)
    assert isinstance(expansion.coefficient(-1.0), float)


def test_complex_data_keeps_complex_coefficients():
    expansion = fitted((2.0 + 1.0j) / T + 1.0)
    assert expansion.coefficient(-1.0) == pytest.approx(2.0 + 1.0j, rel=1e-8)


def test_free_leading_exponent():
    expansion = fitted(0.5 * T ** -0.9 + 1.0, free_leading=True)
    assert expansion.leading_exponent == pytest.approx(-0.9, abs=1e-6)
    assert expansion.coefficient(expansion.leading_exponent) == pytest.approx(0.5, rel=1e-5)


def test_solve_before_build():
    with pytest.raises(RuntimeError):
        ExpansionFitter(T, 1.0 / T, TERMS).solve()


def test_input_validation():
    with pytest.raises(ValidationError):
        ExpansionFitter(T, 1.0 / T, TERMS + [(1.0, 0)]).build()
    with pytest.raises(ValidationError):
        ExpansionFitter(T[:8], 1.0 / T[:8], TERMS).build()
    with pytest.raises(ValidationError):
        ExpansionFitter(-T, 1.0 / T, TERMS).build()


def test_ill_conditioned_design():
    t = np.linspace(1.0, 2.0, 40)
    terms = [(0.001 * i, 0) for i in range(5)]
    model = ExpansionFitter(t, 1.0 + t, terms)
    model.build()
    with pytest.raises(NumericalError):
        model.solve()


def test_zero_data_gives_empty_expansion():
    expansion = fitted(np.zeros_like(T))
    assert len(expansion) == 0
    assert expansion.residual == 0.0


def test_expansion_frame_and_evaluation():
    expansion = LogPolyExpansion(terms=[(0.0, 1, 3.0), (-1.0, 0, 2.0)], fit_window=(1e-3, 1e-1),
                                 residual=0.0, conditioning=1.0, detected={(-1.0, 0): True})
    assert [g for g, _, _ in expansion.terms] == [-1.0, 0.0]
    np.testing.assert_allclose(expansion.evaluate([0.5]), [4.0 + 3.0 * np.log(0.5)])
    frame = expansion.to_frame()
    assert list(frame.columns) == ["gamma", "logpow", "coeff_re", "coeff_im", "detected"]
    assert list(frame["detected"]) == [True, False]
    with pytest.raises(ValidationError):
        LogPolyExpansion(terms=[(0.0, 0, 1.0), (0.0, 0, 2.0)], fit_window=(0, 1), residual=0.0, conditioning=1.0)


def test_free_leading_at_infinity():
    lam = np.geomspace(10.0, 1e3, 40)
    model = ExpansionFitter(lam, 0.3 * lam ** -1.1 + lam ** -2.0, [(-2.0, 0), (-1.0, 0)], free_leading=True,
                            limit="infinity")
    model.build()
    model.solve()
    assert model.get_solu().leading_exponent == pytest.approx(-1.1, abs=1e-6)


def test_unknown_limit():
    with pytest.raises(ValidationError):
        ExpansionFitter(T, 1.0 / T, TERMS, limit="one")


def test_exponent_detected_as_a_group():
    expansion = fitted(1.0 / T + 0.3 * T ** -0.5 * np.log(T), terms=[(-1.0, 0), (-0.5, 0), (-0.5, 1), (0.0, 0)])
    assert expansion.exponent_detected(-0.5)
    assert expansion.exponent_detected(-1.0)
    assert not expansion.exponent_detected(0.0)
    assert not expansion.exponent_detected(0.5)
