"""End-to-end acceptance checks, one test per criterion.

Each test logs a PASS/FAIL line through the ``report`` fixture (shown in
the terminal summary) and then asserts on the same condition.
"""

import numpy as np
import pytest

from homlab.ac import GaussianKernel, NonlocalDiffusionProblem, assemble_nonlocal, convergence_diagram
from homlab.bloch import bloch_bands, gaussian_pulse, kernel_from_dispersion, model_comparison, zone_grid
from homlab.classical import (
    cell_problem_converged,
    effective_coefficient_1d,
    epsilon_convergence_study,
    laminate_coefficient,
    solve_cell_problem,
)
from homlab.cli import EXPERIMENTS, main
from homlab.core import PeriodicProfile, TimeKernel, UniformGrid, volterra_solve
from homlab.lattice import LatticeModel, coarse_grain, kernel_diagnostics
from homlab.memory import TARTAR, localized_system_solve, memory_equation_from_measure
from homlab.mori_zwanzig import (
    LinearSystem,
    MoriProjection,
    fluctuation_dissipation_check,
    localize_kernel,
    master_property_trials,
    mori_reduce,
    random_skew_system,
    subspace_reduce,
)
from homlab.schur_lod import equivalence_trials
from homlab.symbol import homogenized_symbol, nonpolynomiality_certificate, symbol_series

from oracles import (
    gaussian_density,
    harmonic_mean,
    lattice_kernel_fft,
    tartar_kernel,
    tartar_weak_limit,
    two_valued_symbol,
)

LAMINATE = PeriodicProfile.two_valued(1.0, 2.0)


@pytest.fixture(scope="module")
def schur_reports():
    return equivalence_trials(trials=100, n=64, N=8, seed=0)


def test_01_closed_form_memory_solution(report):
    dt = 1e-3
    kernel = TimeKernel.from_modes([-1.5], [-0.25], 5.0, dt)
    u = volterra_solve(-1.5, kernel, None, 1.0, 5.0, dt)
    err = float(np.abs(u - tartar_weak_limit(kernel.times)).max())
    assert report(1, "closed-form memory solution", err <= 1e-5, f"max error {err:.2e} (<= 1e-5)")


def test_02_memory_kernel_extraction(report):
    eq = memory_equation_from_measure(TARTAR, 5.0, 1e-3)
    db = abs(eq.b - 1.5)
    dw = abs(eq.weights[0] + 0.25)
    dr = abs(eq.rates[0] + 1.5)
    dk = float(np.abs(eq.kernel.values - tartar_kernel(eq.kernel.times)).max())
    ok = eq.kernel.n_modes == 1 and max(db, dw, dr, dk) <= 1e-12
    assert report(2, "memory kernel extraction", ok,
                  f"|b-3/2|={db:.1e}, |w+1/4|={dw:.1e}, |rate+3/2|={dr:.1e}, kernel {dk:.1e}")


def test_03_cross_module_consistency(report):
    red = mori_reduce(LinearSystem(np.diag([-1.0, -2.0])), MoriProjection(np.ones(2)), 5.0, 1e-3)
    eq = memory_equation_from_measure(TARTAR, 5.0, 1e-3)
    d = max(abs(-red.G - eq.b),
            float(np.abs(red.kernel.values - eq.kernel.values).max()),
            float(np.abs(np.real(red.kernel.rates) - eq.rates).max()),
            float(np.abs(np.real(red.kernel.weights) - eq.weights).max()))
    assert report(3, "Mori reduction vs memory equation", d <= 1e-12, f"max difference {d:.1e}")


def test_04_schur_lod_equivalence(report, schur_reports):
    worst = max(max(r.matrix_difference, r.solution_difference) for r in schur_reports)
    assert report(4, "Schur-LOD equivalence (100 instances)", worst <= 1e-10, f"max relative difference {worst:.1e}")


def test_05_block_elimination_exactness(report, schur_reports):
    worst = max(r.exactness for r in schur_reports)
    assert report(5, "block elimination exactness", worst <= 1e-10, f"max relative difference {worst:.1e}")


def test_06_lattice_second_moment(report):
    worst, oracle = 0.0, 0.0
    for K2 in (-0.2, 0.0, 0.1, 0.5):
        for M in (2, 4, 8, 16):
            ker = coarse_grain(LatticeModel(1.0, K2, 4096), M)
            worst = max(worst, kernel_diagnostics(ker).moment_residual)
            ref = lattice_kernel_fft(1.0, K2, 4096, M)
            oracle = max(oracle, float(np.abs(ker.column - ref).max() / abs(ref[0])))
    ok = worst <= 1e-8 and oracle <= 1e-10
    assert report(6, "lattice second-moment identity", ok,
                  f"max relative residual {worst:.1e}, kernel vs Fourier oracle {oracle:.1e}")


def test_07_lattice_kernel_structure(report):
    ker = coarse_grain(LatticeModel(1.0, 0.1, 4096), 4)
    d = kernel_diagnostics(ker)
    ok = (d.evenness <= 1e-14 and d.zero_sum <= 1e-10 and ker.at(0) > 0 and bool(d.sign_pattern)
          and d.decay_correlation >= 0.99)
    assert report(7, "lattice kernel structure", ok,
                  f"evenness {d.evenness:.1e}, zero sum {d.zero_sum:.1e}, theta(0) {ker.at(0):.3f}, "
                  f"signs {d.sign_pattern}, resolved {d.resolved}, log-fit |r| {d.decay_correlation:.4f}")


def test_08_nearest_neighbour_closed_form(report):
    worst_near, worst_far = 0.0, 0.0
    for M in (2, 4, 8):
        ker = coarse_grain(LatticeModel(1.0, 0.0, 4096), M)
        target = -1.0 / M
        worst_near = max(worst_near, abs(ker.at(1) - target), abs(ker.at(-1) - target))
        worst_far = max(worst_far, float(np.abs(ker.theta[np.abs(ker.n) >= 2]).max()))
    ok = worst_near <= 1e-12 and worst_far <= 1e-12
    assert report(8, "nearest-neighbour reduction", ok,
                  f"|theta(H) + K1/M| {worst_near:.1e}, far entries {worst_far:.1e}")


def test_09_one_dimensional_homogenization(report):
    abar = effective_coefficient_1d(LAMINATE)
    study = epsilon_convergence_study(LAMINATE, 1.0, [1 / 8, 1 / 16, 1 / 32, 1 / 64, 1 / 128],
                                      UniformGrid(0.0, 1.0, 4097))
    ok = abs(abar - 4 / 3) <= 1e-14 and abs(abar - harmonic_mean([1, 2], [0.5, 0.5])) <= 1e-14 and study.order >= 0.9
    assert report(9, "1D homogenization", ok, f"|abar - 4/3| {abs(abar - 4 / 3):.1e}, L2 order {study.order:.3f}")


def test_10_cell_problem(report):
    _, ident = solve_cell_problem(laminate_coefficient(PeriodicProfile.constant(1.0)), 2, 16)
    e1 = float(np.abs(ident.matrix - np.eye(2)).max())
    _, lam, n = cell_problem_converged(laminate_coefficient(LAMINATE), 2, 8, 1e-6, 128)
    e2 = float(np.abs(lam.matrix - np.diag([4 / 3, 1.5])).max())
    ok = e1 <= 1e-10 and e2 <= 1e-3
    assert report(10, "cell problem", ok, f"identity error {e1:.1e}, laminate error {e2:.1e} at n={n}")


def test_11_symbol(report):
    k = np.linspace(0.0, 10.0, 201)
    prof = PeriodicProfile.two_valued(-0.5, 0.5)
    table = homogenized_symbol(prof, k)
    closed = float(np.abs(table.values - two_valued_symbol(k, 0.5)).max())
    cert = nonpolynomiality_certificate(table, 6)
    tail_ok = True
    for J in (4, 8, 12):
        for kk in k[::10]:
            approx, bound = symbol_series(prof, kk, J)
            exact = float(two_valued_symbol(kk, 0.5))
            geometric = 0.5 ** (J + 1) / (0.5 * (1 + kk * kk) ** J)
            slack = 1e-14 * max(1.0, exact)
            tail_ok &= abs(approx - exact) <= min(bound, geometric) + slack
    ok = closed <= 1e-12 and cert.certified and tail_ok
    assert report(11, "homogenized symbol", ok,
                  f"closed-form error {closed:.1e}, min relative fit residual "
                  f"{cert.relative_residuals.min():.1e}, series within tail {tail_ok}")


def test_12_bloch_bands(report):
    k = zone_grid(65)
    const = bloch_bands(PeriodicProfile.constant(1.0), k, n_modes=2, n_cell=512)
    e1 = float(np.abs(const.lambda0 - k ** 2).max())
    lam = bloch_bands(LAMINATE, zone_grid(257), n_modes=2)
    rel = abs(lam.small_k_slope() / harmonic_mean([1, 2], [0.5, 0.5]) - 1)
    ok = e1 <= 1e-8 and rel <= 1e-2
    assert report(12, "Bloch bands", ok, f"constant-medium error {e1:.1e}, slope vs harmonic mean {rel:.1e}")


def test_13_kernel_synthesis(report):
    ker = kernel_from_dispersion(lambda q: 1 - np.exp(-0.5 * q ** 2), k_edge=8.0)
    err = float(np.abs(ker.gamma - gaussian_density(ker.s)).max())
    bloch = kernel_from_dispersion(bloch_bands(LAMINATE, zone_grid(257), n_modes=1))
    mass = max(abs(ker.integral - 1), abs(bloch.integral - 1))
    even = bool(np.array_equal(ker.gamma, ker.gamma[::-1]) and np.array_equal(bloch.gamma, bloch.gamma[::-1]))
    ok = err <= 1e-8 and mass <= 1e-10 and even
    assert report(13, "kernel synthesis round trip", ok,
                  f"Gaussian error {err:.1e}, mass error {mass:.1e}, exactly even {even}")


@pytest.mark.slow
def test_14_wave_comparison(report):
    table = model_comparison(LAMINATE, 0.1, gaussian_pulse(0.3), [1.0, 10.0, 100.0],
                             sweep_epsilons=[0.1, 0.05, 0.025], sweep_time=10.0)
    ratio = table.nonlocal_errors[-1] / table.local_errors[-1]
    ok = ratio <= 0.5 and table.sweep_order >= 0.8
    assert report(14, "wave comparison", ok,
                  f"nonlocal/local error at T=100 {ratio:.3f}, sweep order {table.sweep_order:.3f}")


def test_15_mori_zwanzig(report):
    dt = 1e-3
    trials = master_property_trials(trials=20, seed=0, n_max=20, T=5.0, dt=dt)
    master = all(t.passed(dt) for t in trials)
    worst = max(t.error / (5 * dt ** 2 * t.scale) for t in trials)
    rng = np.random.default_rng(0)
    fd = 0.0
    for _ in range(5):
        system, proj = random_skew_system(rng, 8)
        fd = max(fd, fluctuation_dissipation_check(mori_reduce(system, proj, 5.0, dt), system))
    osc = LinearSystem(np.array([[0.0, 1.0], [-1.0, 0.0]]), np.array([1.0, 0.0]))
    red = subspace_reduce(osc, np.array([1.0, 0.0]), 5.0, dt)
    oerr = float(np.abs(red.solve() - np.cos(red.times)).max())
    ok = master and fd <= 1e-8 and oerr <= 1e-4
    assert report(15, "Mori-Zwanzig master property", ok,
                  f"worst error / budget {worst:.2f}, fluctuation-dissipation {fd:.1e}, oscillator {oerr:.1e}")


def test_16_kernel_localization(report):
    T = 5.0
    errs, fit = [], 0.0
    dts = [4e-3, 2e-3, 1e-3]
    for dt in dts:
        kernel = TimeKernel(dt, tartar_kernel(dt * np.arange(int(round(T / dt)) + 1)))
        loc = localize_kernel(kernel, 1, markov=-1.5)
        fit = max(fit, loc.kernel_residual)
        errs.append(loc.trajectory_error)
    # trapezoidal augmented system vs exact solution is second order
    aug = [np.abs(localized_system_solve(1.0, T, dt)[0] - tartar_weak_limit(dt * np.arange(int(round(T / dt)) + 1))).max()
           for dt in dts]
    order = float(np.polyfit(np.log(dts), np.log(aug), 1)[0])
    within = all(e <= 5 * dt ** 2 for e, dt in zip(errs, dts))
    ok = fit <= 1e-10 and within and abs(order - 2) <= 0.1
    assert report(16, "kernel localization", ok,
                  f"fit residual {fit:.1e}, local vs Volterra {max(errs):.1e} (<= 5 dt^2: {within}), order {order:.2f}")


def test_17_asymptotic_compatibility(report):
    kernel = GaussianKernel()
    epsilons = [1 / 8, 1 / 16, 1 / 32, 1 / 64]
    exact = True
    for eps in epsilons:
        for ratio in (4, 8, 16, 32):
            system = assemble_nonlocal(NonlocalDiffusionProblem(kernel, eps), eps / ratio)
            r = np.abs(system.apply(system.x ** 2) - kernel.sigma2).max()
            exact &= bool(r <= system.quadrature_tolerance)
    diag = convergence_diagram(kernel, epsilons, ratio=8, fine_ratio=32)
    sim = [r.local_error for r in diag.simultaneous]
    monotone = bool(np.all(np.diff(sim) < 0))
    final = sim[-1] / diag.h_first[-1].local_error
    ok = exact and monotone and final <= 2.0
    assert report(17, "asymptotic compatibility", ok,
                  f"quadratic exactness {exact}, simultaneous errors {', '.join(f'{e:.2e}' for e in sim)}, "
                  f"final ratio to h-first {final:.3f}")


@pytest.mark.slow
def test_18_determinism(report, tmp_path):
    differing = []
    for name in sorted(EXPERIMENTS):
        a, b = tmp_path / name / "a", tmp_path / name / "b"
        sa, sb = main([name, "-o", str(a)]), main([name, "-o", str(b)])
        files_a = {p.name: p.read_bytes() for p in a.iterdir() if p.name != "timing.json"}
        files_b = {p.name: p.read_bytes() for p in b.iterdir() if p.name != "timing.json"}
        if sa != sb or files_a != files_b:
            differing.append(name)
    ok = not differing
    assert report(18, "determinism", ok,
                  f"{len(EXPERIMENTS)} experiments rerun, differing: {differing or 'none'}")
