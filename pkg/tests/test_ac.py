import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from homlab.ac import (
    MASS_TOL,
    GaussianKernel,
    NonlocalDiffusionProblem,
    SampledKernel,
    TruncationError,
    assemble_nonlocal,
    convergence_diagram,
    manufactured_sine,
    solve_and_compare,
    solve_local,
    solve_nonlocal,
)
from homlab.core import ConfigurationError, DiscreteKernel

from oracles import gaussian_density

EPSILONS = [1 / 8, 1 / 16, 1 / 32, 1 / 64]


def test_gaussian_truncation_radius():
    k = GaussianKernel(1.0)
    assert k.mass_deficit <= MASS_TOL
    assert k.radius == pytest.approx(6.467, abs=1e-3)
    assert k(0.3) == pytest.approx(float(gaussian_density(0.3)), rel=1e-15)


def test_interior_rows_sum_to_zero():
    system = assemble_nonlocal(NonlocalDiffusionProblem(GaussianKernel(), 1 / 8), 1 / 64)
    A = system.matrix.toarray()
    rows = A[system.interior].sum(axis=1)
    assert np.abs(rows).max() <= 1e-10
    collar = A[~system.interior]
    assert np.array_equal(collar, np.eye(A.shape[0])[~system.interior])


@settings(max_examples=20, deadline=None)
@given(st.sampled_from(EPSILONS), st.sampled_from([4, 8, 16]))
def test_quadratic_exactness(eps, ratio):
    kernel = GaussianKernel()
    system = assemble_nonlocal(NonlocalDiffusionProblem(kernel, eps), eps / ratio)
    r = np.abs(system.apply(system.x ** 2) - kernel.sigma2).max()
    assert r <= system.quadrature_tolerance


def test_linear_functions_are_harmonic():
    system = assemble_nonlocal(NonlocalDiffusionProblem(GaussianKernel(), 1 / 16), 1 / 128)
    assert np.abs(system.apply(3 * system.x - 1)).max() <= 1e-9


def test_resolution_rule():
    with pytest.raises(ConfigurationError):
        assemble_nonlocal(NonlocalDiffusionProblem(GaussianKernel(), 1 / 8), 1 / 16)


def test_sampled_kernel_mass_checked():
    s = np.linspace(-7, 7, 281)
    with pytest.raises(TruncationError):
        SampledKernel(DiscreteKernel(s, 0.9 * gaussian_density(s)))
    k = SampledKernel(DiscreteKernel(s, gaussian_density(s)))
    assert k.sigma2 == pytest.approx(1.0, abs=1e-9)


def test_nonlocal_reproduces_quadratic_solution():
    # -Lbar u = -sigma^2 has the solution x^2 when the collar carries x^2
    kernel = GaussianKernel()
    sq = lambda x: np.asarray(x, float) ** 2
    prob = NonlocalDiffusionProblem(kernel, 1 / 16, lambda x: -kernel.sigma2 * np.ones_like(x), sq)
    x, u = solve_nonlocal(prob, 1 / 128)
    assert np.abs(u - x ** 2).max() <= 1e-8


def test_local_scheme_second_order():
    prob, exact = manufactured_sine(GaussianKernel(), 1 / 8)
    errs = []
    for n in (16, 32, 64):
        x, u = solve_local(prob, 1 / n)
        errs.append(np.abs(u - exact(x)).max())
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.05)


def test_solve_and_compare_against_reference():
    prob, exact = manufactured_sine(GaussianKernel(), 1 / 8)
    ref = solve_nonlocal(prob, 1 / 256)
    rec = solve_and_compare(prob, 1 / 64, exact, ref)
    assert rec.reference_error < rec.local_error


@pytest.mark.slow
def test_asymptotic_compatibility():
    diag = convergence_diagram(GaussianKernel(), EPSILONS)
    sim = np.array([r.local_error for r in diag.simultaneous])
    assert np.all(np.diff(sim) < 0)
    assert sim[-1] <= 2 * diag.h_first[-1].local_error
    assert diag.verdict["pass"]
    loc = np.array([r.local_error for r in diag.eps_first])
    assert np.all(np.diff(loc) < 0)


def test_zero_data_gives_zero_solution():
    x, u = solve_nonlocal(NonlocalDiffusionProblem(GaussianKernel(), 1 / 8), 1 / 32)
    assert np.abs(u).max() == 0.0


def test_discrete_maximum_principle():
    prob = NonlocalDiffusionProblem(GaussianKernel(0.7), 1 / 16, lambda x: 1 + np.cos(7 * np.asarray(x)))
    x, u = solve_nonlocal(prob, 1 / 128)
    assert u.min() >= -1e-12


def test_local_coefficient_scales_with_second_moment():
    a = NonlocalDiffusionProblem(GaussianKernel(1.0), 0.1)
    b = NonlocalDiffusionProblem(GaussianKernel(2.0), 0.1)
    assert abs(b.diffusion / a.diffusion - 4.0) <= 1e-8


def test_reference_error_decreases_at_fixed_horizon():
    prob, _ = manufactured_sine(GaussianKernel(), 1 / 8)
    ref = solve_nonlocal(prob, 1 / 512)
    errs = [solve_and_compare(prob, h, reference=ref).reference_error for h in (1 / 32, 1 / 64, 1 / 128)]
    assert errs[0] > errs[1] > errs[2]


def test_diagram_is_order_independent():
    k = GaussianKernel()
    a = convergence_diagram(k, [1 / 8, 1 / 16, 1 / 32])
    convergence_diagram(k, [1 / 16, 1 / 8, 1 / 32])
    b = convergence_diagram(k, [1 / 8, 1 / 16, 1 / 32])
    assert a.rows() == b.rows()


def test_sampled_kernel_stencil_is_quadratic_exact():
    # coarse samples of a narrow kernel: the stencil is moment-corrected
    s = 0.4 * np.arange(-40, 41)
    g = gaussian_density(s / 0.35) / 0.35
    g = g / (0.4 * g.sum())
    k = SampledKernel(DiscreteKernel(s, g))
    system = assemble_nonlocal(NonlocalDiffusionProblem(k, 1 / 16), 1 / 128)
    assert np.abs(system.apply(system.x ** 2) - k.sigma2).max() <= system.quadrature_tolerance
