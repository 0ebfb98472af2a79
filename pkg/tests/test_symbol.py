import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from homlab.core import PeriodicProfile
from homlab.symbol import (
    AssumptionError,
    GridError,
    correction_term,
    homogenized_symbol,
    moments,
    nonpolynomiality_certificate,
    symbol_series,
)

from oracles import two_valued_symbol

PM_HALF = PeriodicProfile.two_valued(-0.5, 0.5)


def test_two_valued_closed_form():
    k = np.linspace(0.0, 10.0, 201)
    table = homogenized_symbol(PM_HALF, k)
    assert np.abs(table.values - two_valued_symbol(k, 0.5)).max() <= 1e-12
    assert table.bounds_ok()


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 0.95), st.floats(0.0, 20.0))
def test_two_valued_closed_form_any_contrast(c, k):
    v = homogenized_symbol(PeriodicProfile.two_valued(-c, c), np.array([k])).values[0]
    assert v == pytest.approx(float(two_valued_symbol(k, c)), rel=1e-13, abs=1e-13)


def test_moments_of_symmetric_profile():
    m = moments(PM_HALF, 4)
    assert np.allclose(m, [1.0, 0.0, 0.25, 0.0, 0.0625], atol=1e-15)


def test_series_error_within_geometric_tail():
    for J in (4, 8, 12):
        for k in np.linspace(0.0, 10.0, 21):
            approx, bound = symbol_series(PM_HALF, k, J)
            exact = float(two_valued_symbol(k, 0.5))
            assert abs(approx - exact) <= bound + 1e-14 * max(1.0, exact)
            # a-priori tail c0^(J+1) / ((1 - c0) (1 + k^2)^J)
            assert abs(approx - exact) <= 0.5 ** (J + 1) / (0.5 * (1 + k * k) ** J) + 1e-14 * max(1.0, exact)


def test_nonpolynomiality_certificate():
    k = np.linspace(0.0, 10.0, 201)
    cert = nonpolynomiality_certificate(homogenized_symbol(PM_HALF, k), 6)
    assert cert.certified
    assert np.all(cert.relative_residuals >= 1e-8)
    assert np.all(np.diff(cert.residuals) <= 1e-12 * cert.residuals[0])


def test_constant_coefficient_is_polynomial():
    k = np.linspace(0.0, 10.0, 101)
    cert = nonpolynomiality_certificate(homogenized_symbol(PeriodicProfile.constant(0.0), k), 3)
    assert not cert.certified
    assert cert.relative_residuals[1] <= 1e-13


def test_correction_term_vanishes_for_constant():
    assert correction_term(PeriodicProfile.constant(0.3), 2.0) == pytest.approx(0.0, abs=1e-14)
    assert correction_term(PM_HALF, 0.0) == pytest.approx(-0.25, abs=1e-14)


def test_assumption_violations():
    with pytest.raises(AssumptionError):
        homogenized_symbol(PeriodicProfile.two_valued(-1.0, 0.5), [0.0])
    with pytest.raises(GridError):
        nonpolynomiality_certificate(homogenized_symbol(PM_HALF, np.linspace(0, 1, 4)), 6)


def test_series_at_unit_wavenumber():
    approx, _ = symbol_series(PM_HALF, 1.0, 12)
    assert abs(approx - float(two_valued_symbol(1.0, 0.5))) <= 0.5 ** 13 / (0.5 * 2 ** 12)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-0.9, 0.9), min_size=2, max_size=4), st.floats(0.0, 5.0))
def test_series_error_shrinks_with_order(values, k):
    p = PeriodicProfile.piecewise(np.arange(len(values)) / len(values), values)
    exact = homogenized_symbol(p, np.array([k])).values[0]
    errs = [abs(symbol_series(p, k, J)[0] - exact) for J in (2, 4, 8, 16)]
    bounds = [symbol_series(p, k, J)[1] for J in (2, 4, 8, 16)]
    assert all(e <= b + 1e-13 for e, b in zip(errs, bounds))
    assert all(b2 <= b1 for b1, b2 in zip(bounds, bounds[1:]))
