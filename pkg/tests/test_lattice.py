import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from homlab.core import ConfigurationError
from homlab.lattice import (
    LatticeModel,
    ModelError,
    assemble_lattice,
    coarse_grain,
    coarse_symbol,
    kernel_diagnostics,
    rescaling_convergence,
)

from oracles import lattice_kernel_fft


def test_assembled_operator_matches_symbol():
    model = LatticeModel(1.0, 0.1, 64)
    L = assemble_lattice(model).toarray()
    q = 2 * np.pi * np.arange(64) / 64
    assert np.allclose(np.sort(np.linalg.eigvalsh(L)), np.sort(model.symbol(q)), atol=1e-12)
    assert np.abs(L.sum(axis=1)).max() <= 1e-15


def test_phonon_stability_enforced():
    with pytest.raises(ModelError):
        LatticeModel(1.0, -0.25, 64)
    with pytest.raises(ModelError):
        LatticeModel(0.0, 0.5, 64)


@settings(max_examples=15, deadline=None)
@given(st.sampled_from([-0.2, 0.0, 0.1, 0.5]), st.sampled_from([2, 4, 8]), st.sampled_from([0.5, 1.0]))
def test_kernel_matches_fourier_oracle(K2, M, eps):
    ker = coarse_grain(LatticeModel(1.0, K2, 256, eps), M)
    ref = lattice_kernel_fft(1.0, K2, 256, M, eps)
    assert np.abs(ker.column - ref).max() <= 1e-10 * abs(ref[0])


def test_second_moment_identity():
    for K2 in (-0.2, 0.0, 0.1, 0.5):
        for M in (2, 4, 8, 16):
            d = kernel_diagnostics(coarse_grain(LatticeModel(1.0, K2, 4096), M))
            assert d.moment_residual <= 1e-8


def test_kernel_structure_next_nearest():
    ker = coarse_grain(LatticeModel(1.0, 0.1, 4096), 4)
    d = kernel_diagnostics(ker)
    assert d.evenness <= 1e-14
    assert d.zero_sum <= 1e-10
    assert ker.at(0) > 0
    assert d.sign_pattern
    assert d.resolved >= 3
    assert d.decay_correlation >= 0.99
    assert d.decay_slope < 0


@pytest.mark.parametrize("M", [2, 4, 8])
def test_nearest_neighbour_closed_form(M):
    ker = coarse_grain(LatticeModel(1.0, 0.0, 4096), M)
    assert ker.at(1) == pytest.approx(-1.0 / M, rel=1e-12)
    assert ker.at(-1) == pytest.approx(-1.0 / M, rel=1e-12)
    far = np.abs(ker.theta[np.abs(ker.n) >= 2])
    assert far.max() <= 1e-12


def test_coarse_operator_is_circulant_schur():
    model = LatticeModel(1.0, 0.1, 64)
    ker = coarse_grain(model, 4)
    L = assemble_lattice(model).toarray()
    rep = np.arange(0, 64, 4)
    elim = np.setdiff1d(np.arange(64), rep)
    S = L[np.ix_(rep, rep)] - L[np.ix_(rep, elim)] @ np.linalg.solve(L[np.ix_(elim, elim)], L[np.ix_(elim, rep)])
    assert np.abs(ker.coarse_operator().toarray() - S).max() <= 1e-12 * np.abs(S).max()
    f = np.random.default_rng(0).standard_normal(64)
    fbar = f[rep] - L[np.ix_(rep, elim)] @ np.linalg.solve(L[np.ix_(elim, elim)], f[elim])
    assert np.allclose(ker.load_map(f), fbar, atol=1e-12)


def test_coarse_grain_validates_M():
    model = LatticeModel(1.0, 0.1, 64)
    with pytest.raises(ConfigurationError):
        coarse_grain(model, 5)
    with pytest.raises(ConfigurationError):
        coarse_grain(model, 16)


def test_coarse_symbol_small_wavenumber():
    ker = coarse_grain(LatticeModel(1.0, 0.1, 1024), 4)
    xi = np.array([1e-2])
    # thetahat(xi) ~ (K1 + 4 K2) xi^2 / M for small xi
    assert coarse_symbol(ker, xi)[0] == pytest.approx(1.4 * xi[0] ** 2 / 4, rel=1e-3)


def test_rescaling_converges():
    rep = rescaling_convergence(LatticeModel(1.0, 0.1, 1024), [2, 4, 8])
    assert np.all(np.diff(rep.differences) < 0)
    exact = rescaling_convergence(LatticeModel(1.0, 0.0, 1024), [2, 4, 8])
    assert exact.differences.max() <= 1e-12
    for M in (2, 4, 8):
        assert rep.theta0_moments[M] == pytest.approx(2 * 1.4, rel=1e-8)
