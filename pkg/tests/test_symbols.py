from dataclasses import replace

import numpy as np
import pytest

from utils.errors import ConfigurationError, ValidationError, Verdict
from utils.symbols import (LEFT_HALF_PLANE, Sector, SymbolGrid, abs_power, derivative_consistency, excision,
                           homog_expand, neumann_error, neumann_refine, parametrix_leading, regularity_check,
                           resolvent_symbol, seminorm_check, smooth_step, zero_symbol)

COARSE = SymbolGrid(points_per_decade=10)


@pytest.fixture(scope="module")
def resolvent():
    return resolvent_symbol(abs_power(2.0), abs_power(0.0), 1, LEFT_HALF_PLANE)


def test_sector_membership():
    assert LEFT_HALF_PLANE.contains(-1.0)
    assert LEFT_HALF_PLANE.contains(1j)
    assert not LEFT_HALF_PLANE.contains(1.0 + 0.1j)
    with pytest.raises(ConfigurationError):
        Sector(1.0, 0.0)


def test_smooth_step_and_excision():
    assert smooth_step(-0.5) == 0.0
    assert smooth_step(1.5) == 1.0
    assert smooth_step(0.5) == pytest.approx(0.5)
    assert excision(0.4, 1.0) == 0.0
    assert excision(1.0, 1.0) == 1.0


def test_resolvent_orders(resolvent):
    assert resolvent.orders == (-2.0, -2.0, 2.0)


def test_resolvent_rejects_principal_symbol_in_sector():
    with pytest.raises(ValidationError):
        resolvent_symbol(abs_power(2.0, coefficient=-1.0), abs_power(0.0), 1, LEFT_HALF_PLANE)


def test_seminorms_pass_for_declared_orders(resolvent):
    report = seminorm_check(resolvent, grid=COARSE)
    assert report.passed
    assert report.verdict == Verdict.PASS
    assert set(report.table.columns) >= {"alpha", "beta", "worst_ratio", "grid_refined_ratio", "growth_slope"}


def test_seminorms_fail_for_misdeclared_order(resolvent):
    report = seminorm_check(resolvent.with_orders(resolvent.mu - 1.0), grid=COARSE)
    assert not report.passed
    assert report.table["growth_slope"].max() >= 0.9


def test_zero_symbol_passes_any_orders():
    assert seminorm_check(zero_symbol(-5.0, -2.0, 2.0), grid=COARSE).passed


def test_regularity_of_resolvent(resolvent):
    assert regularity_check(resolvent) == Verdict.PASS


def test_regularity_needs_integral_ratio():
    s = resolvent_symbol(abs_power(3.0), abs_power(0.0), 1, LEFT_HALF_PLANE)
    with pytest.raises(ConfigurationError):
        regularity_check(s.with_orders(s.mu, p=-2.0))


def test_homog_expand_leading_component(resolvent):
    components, rest = homog_expand(resolvent, 1)
    assert len(components) == 1
    assert components[0].degree == -2.0
    value = components[0](np.array(2.0), np.array(-1.0 + 0j))
    assert complex(value) == pytest.approx(1.0 / (4.0 + 1.0))
    assert rest.mu == -3.0


def test_homog_expand_degree_scaling():
    s = resolvent_symbol(abs_power(2.0), abs_power(0.0), 2, LEFT_HALF_PLANE)
    components, _ = homog_expand(s, 1)
    a = components[0]
    xi, lam, delta = np.array(1.5), np.array(-0.7 + 0.2j), 3.0
    assert complex(a(delta * xi, delta ** 2 * lam)) == pytest.approx(delta ** -4 * complex(a(xi, lam)))


def test_homog_expand_rejects_wrong_closed_form(resolvent):
    true_component = resolvent.component_builder
    doubled = replace(resolvent, component_builder=lambda j: lambda xi, lam: 2.0 * true_component(j)(xi, lam))
    with pytest.raises(ValidationError) as info:
        homog_expand(doubled, 1)
    assert info.value.payload["component"] == 0


def test_homog_expand_zero_length(resolvent):
    components, rest = homog_expand(resolvent, 0)
    assert components == []
    assert rest is resolvent


def test_lower_order_terms_enter_second_component():
    s = resolvent_symbol(abs_power(2.0), abs_power(0.0), 1, LEFT_HALF_PLANE, lower=(abs_power(1.0),))
    components, _ = homog_expand(s, 2)
    xi, lam = np.array(2.0), np.array(-1.0 + 0j)
    # -|xi| (xi^2 - lam)^{-2}
    assert complex(components[1](xi, lam)) == pytest.approx(-2.0 / 25.0)


def test_analytic_gradient_matches_finite_differences(resolvent):
    gap = derivative_consistency(resolvent, np.array([2.0, 3.0, 10.0]), np.array(-4.0 + 1j))
    assert gap < 1e-4


def test_parametrix_leading_and_neumann():
    b0 = parametrix_leading(abs_power(2.0), 2.0, LEFT_HALF_PLANE, eps=0.5, lower=(abs_power(0.0, 1.0),))
    assert b0.orders == (-2.0, -2.0, 2.0)
    xi, lam = np.array(2.0), np.array(-3.0 + 0j)
    assert complex(b0(xi, lam)) == pytest.approx(1.0 / (4.0 + 1.0 + 3.0))

    refined = neumann_refine(b0, zero_symbol(-1.0, -2.0, 2.0), steps=2)
    assert complex(refined(xi, lam)) == pytest.approx(complex(b0(xi, lam)))
    assert neumann_error(zero_symbol(-1.0, -2.0, 2.0), steps=2).mu == -3.0


def test_parametrix_rejects_sector_values():
    with pytest.raises(ValidationError):
        parametrix_leading(abs_power(2.0, coefficient=-1.0), 2.0, LEFT_HALF_PLANE, eps=0.5)
