import numpy as np
import pytest

from homlab.core import TimeKernel, fit_order
from homlab.memory import TARTAR, memory_equation_from_measure
from homlab.mori_zwanzig import (
    BasisError,
    FitError,
    LinearSystem,
    MoriProjection,
    PreconditionError,
    correlation_evolution,
    exact_trajectory,
    fluctuation_dissipation_check,
    localize_kernel,
    master_property_trials,
    mori_reduce,
    projected_trajectory,
    prony_fit,
    random_skew_system,
    random_stable_system,
    subspace_reduce,
)

from oracles import subspace_kernel_by_expm, tartar_kernel


def test_mori_reduce_matches_memory_equation():
    red = mori_reduce(LinearSystem(np.diag([-1.0, -2.0])), MoriProjection(np.ones(2)), 5.0, 1e-3)
    eq = memory_equation_from_measure(TARTAR, 5.0, 1e-3)
    # u' = G u - int Gamma u versus u' + b u + int K u = 0
    assert abs(-red.G - eq.b) <= 1e-12
    assert np.abs(red.kernel.values - eq.kernel.values).max() <= 1e-12
    assert np.abs(np.real(red.kernel.rates) - eq.rates).max() <= 1e-12
    assert np.abs(np.real(red.kernel.weights) - eq.weights).max() <= 1e-12


def test_subspace_kernel_matches_dense_expm():
    rng = np.random.default_rng(3)
    system = random_stable_system(rng, 6)
    phi = rng.standard_normal(6)
    red = subspace_reduce(system, phi, 1.0, 0.1)
    t = red.times[::3]
    ref = subspace_kernel_by_expm(system.L, phi, t)
    assert np.abs(red.kernel.values[::3] - ref).max() <= 1e-12


def test_subspace_reduction_reproduces_projection():
    rng = np.random.default_rng(1)
    system = random_stable_system(rng, 8)
    basis = rng.standard_normal((8, 2))
    dt = 2e-3
    ref = projected_trajectory(system, basis, 2.0, dt)
    u = subspace_reduce(system, basis, 2.0, dt).solve()
    assert np.abs(u - ref).max() <= 5 * dt ** 2 * np.abs(ref).max()


def test_master_property_trials_pass():
    trials = master_property_trials(trials=3, seed=7, n_max=10, T=2.0, dt=1e-3)
    assert all(t.passed(1e-3) for t in trials)


def test_full_basis_has_no_memory():
    system = LinearSystem(np.diag([-1.0, -2.0]), np.array([1.0, 1.0]))
    red = subspace_reduce(system, np.eye(2), 1.0, 0.1)
    assert not np.any(red.kernel.values)
    # trapezoidal amplification factor (1 + l dt/2) / (1 - l dt/2) per step
    lam = np.array([-1.0, -2.0])
    amp = (1 + 0.05 * lam) / (1 - 0.05 * lam)
    assert np.abs(red.solve() - amp ** np.arange(11)[:, None]).max() <= 1e-14
    assert np.abs(red.solve() - exact_trajectory(system, system.x0, 1.0, 0.1)).max() <= 2e-3


def test_rank_deficient_basis_rejected():
    system = LinearSystem(np.eye(3), np.ones(3))
    with pytest.raises(BasisError):
        subspace_reduce(system, np.array([[1.0, 2.0], [1.0, 2.0], [0.0, 0.0]]), 1.0, 0.1)


def test_harmonic_oscillator_reduction():
    osc = LinearSystem(np.array([[0.0, 1.0], [-1.0, 0.0]]), np.array([1.0, 0.0]))
    red = subspace_reduce(osc, np.array([1.0, 0.0]), 5.0, 1e-3)
    assert red.G == 0.0
    # the eliminated momentum gives Gamma = 1, u'' = -u
    assert np.abs(red.kernel.values - 1.0).max() <= 1e-12
    assert np.abs(red.solve() - np.cos(red.times)).max() <= 1e-4


def test_fluctuation_dissipation_on_skew_systems():
    rng = np.random.default_rng(0)
    for _ in range(5):
        system, proj = random_skew_system(rng, 10)
        red = mori_reduce(system, proj, 2.0, 1e-2)
        assert fluctuation_dissipation_check(red, system) <= 1e-8


def test_fluctuation_dissipation_requires_skew():
    system = LinearSystem(np.diag([-1.0, -2.0]))
    red = mori_reduce(system, MoriProjection(np.ones(2)), 1.0, 0.1)
    with pytest.raises(PreconditionError):
        fluctuation_dissipation_check(red, system)


def test_skew_flag_is_validated():
    with pytest.raises(PreconditionError):
        LinearSystem(np.eye(2), skew=True)


def test_correlation_evolution_is_second_order():
    rng = np.random.default_rng(2)
    system = random_stable_system(rng, 5)
    proj = MoriProjection(rng.standard_normal(5))
    defects = []
    dts = [4e-2, 2e-2, 1e-2]
    for dt in dts:
        rep = correlation_evolution(mori_reduce(system, proj, 2.0, dt), system)
        assert rep.orthogonality <= 1e-12
        defects.append(rep.defect)
    assert fit_order(dts, defects) == pytest.approx(2.0, abs=0.2)


def test_prony_recovers_two_modes():
    dt = 1e-2
    t = dt * np.arange(300)
    y = 0.3 * np.exp(-0.5 * t) - 1.2 * np.exp(-2.0 * t)
    rates, weights, resid = prony_fit(y, dt, 2)
    order = np.argsort(np.real(rates))
    assert np.allclose(np.real(rates)[order], [-2.0, -0.5], atol=1e-8)
    assert np.allclose(np.real(weights)[order], [-1.2, 0.3], atol=1e-8)
    assert resid <= 1e-10


def test_prony_rejects_short_record():
    with pytest.raises(FitError):
        prony_fit(np.ones(3), 0.1, 2)


def test_localization_of_one_mode_kernel():
    errs = []
    dts = [4e-3, 2e-3, 1e-3]
    for dt in dts:
        k = TimeKernel(dt, tartar_kernel(dt * np.arange(int(round(5 / dt)) + 1)))
        loc = localize_kernel(k, 1, markov=-1.5)
        assert loc.kernel_residual <= 1e-10
        assert loc.rates[0] == pytest.approx(-1.5, abs=1e-9)
        errs.append(loc.trajectory_error)
    assert max(errs) <= 1e-5
