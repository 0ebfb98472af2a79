"""Discretizations of the scaled nonlocal diffusion operator and their limits.

    Lbar u(x) = eps^-3 int gamma((y - x) / eps) (u(y) - u(x)) dy

on ``(0, 1)`` with a Dirichlet volume constraint on the collar. As
``eps -> 0`` the operator tends to ``(sigma^2 / 2) u''`` where ``sigma^2``
is the second moment of ``gamma``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import CubicSpline
from scipy.special import erfc, erfcinv

from .core import ConfigurationError, DiscreteKernel, HomlabError


class TruncationError(HomlabError, ValueError):
    pass


class ConstraintCoverageError(HomlabError, np.linalg.LinAlgError):
    pass


MASS_TOL = 1e-10
RESOLUTION = 4  # h <= eps / RESOLUTION


@dataclass(frozen=True)
class GaussianKernel:
    """Centered normal density with standard deviation ``std``, cut at ``radius``."""

    std: float = 1.0
    tol: float = MASS_TOL
    radius: float = field(init=False)

    def __post_init__(self):
        if not self.std > 0:
            raise ConfigurationError("std must be positive")
        object.__setattr__(self, "radius", float(np.sqrt(2.0) * self.std * erfcinv(self.tol)) * (1 + 1e-9))

    @property
    def sigma2(self) -> float:
        return self.std ** 2

    @property
    def mass_deficit(self) -> float:
        return float(erfc(self.radius / (np.sqrt(2.0) * self.std)))

    @property
    def moment_deficit(self) -> float:
        """Second moment lost by cutting at ``radius``."""
        r = self.radius
        return float(self.sigma2 * self.mass_deficit + 2 * r * self.sigma2 * self(r))

    def __call__(self, s):
        s = np.asarray(s, float)
        return np.exp(-0.5 * (s / self.std) ** 2) / (np.sqrt(2 * np.pi) * self.std)


class SampledKernel:
    """Kernel given by samples on a uniform symmetric grid, cubic in between."""

    def __init__(self, kernel: DiscreteKernel, tol: float = MASS_TOL):
        s, g = kernel.offsets, kernel.values
        ds = np.diff(s)
        if s.size < 5 or np.abs(ds - ds[0]).max() > 1e-9 * ds[0]:
            raise ConfigurationError("sampled kernel needs a uniform grid")
        self.ds = float(ds[0])
        self.mass = float(self.ds * g.sum())
        if abs(self.mass - 1) > tol:
            raise TruncationError(f"kernel mass deficit {1 - self.mass:.3e}")
        self.sigma2 = float(self.ds * np.sum(g * s ** 2))
        self.radius = float(s[-1])
        self.mass_deficit = 1 - self.mass
        self.moment_deficit = 0.0
        self._spl = CubicSpline(s, g)

    def __call__(self, s):
        s = np.asarray(s, float)
        out = np.zeros_like(s)
        inside = np.abs(s) <= self.radius
        out[inside] = self._spl(s[inside])
        return out


KernelLike = Union[GaussianKernel, SampledKernel]


@dataclass
class NonlocalDiffusionProblem:
    """``-Lbar u = f`` in ``(0, 1)``, ``u = g`` on the collar."""

    kernel: KernelLike
    epsilon: float
    source: Callable = lambda x: np.zeros_like(np.asarray(x, float))
    boundary: Callable = lambda x: np.zeros_like(np.asarray(x, float))

    def __post_init__(self):
        if isinstance(self.kernel, DiscreteKernel):
            self.kernel = SampledKernel(self.kernel)
        if not self.epsilon > 0:
            raise ConfigurationError("epsilon must be positive")
        if self.kernel.mass_deficit > MASS_TOL:
            raise TruncationError(f"kernel mass deficit {self.kernel.mass_deficit:.3e} exceeds {MASS_TOL}")

    @property
    def sigma2(self) -> float:
        return self.kernel.sigma2

    @property
    def diffusion(self) -> float:
        """Coefficient of the local limit ``-(sigma^2 / 2) u'' = f``."""
        return 0.5 * self.sigma2


@dataclass
class NonlocalSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    x: np.ndarray
    interior: np.ndarray
    stencil: np.ndarray  # weights c_j for j = -J..J, c_0 unused
    h: float
    quadrature_tolerance: float = 0.0

    def apply(self, u) -> np.ndarray:
        """Unconstrained ``Lbar_h u`` on interior nodes."""
        u = np.asarray(u, float)
        J = (self.stencil.size - 1) // 2
        idx = np.flatnonzero(self.interior)
        out = np.zeros(idx.size)
        for j in range(-J, J + 1):
            if j:
                out += self.stencil[j + J] * (u[idx + j] - u[idx])
        return out


def _mesh(problem: NonlocalDiffusionProblem, h: float):
    eps = problem.epsilon
    if h > eps / RESOLUTION * (1 + 1e-12):
        raise ConfigurationError(f"resolution rule violated: h={h} > eps/{RESOLUTION}={eps / RESOLUTION}")
    n = int(round(1.0 / h))
    if abs(n * h - 1.0) > 1e-9:
        raise ConfigurationError("1/h must be an integer so the mesh aligns with the domain")
    J = int(np.ceil(problem.kernel.radius * eps / h))
    return n, J


def assemble_nonlocal(problem: NonlocalDiffusionProblem, h: float) -> NonlocalSystem:
    """Trapezoid quadrature on mesh-aligned nodes; collar rows carry the constraint.

    Sampled kernels get a moment-corrected stencil (second moment equal to
    the recorded ``sigma2``); analytic kernels use the plain trapezoid rule.
    """
    n, J = _mesh(problem, h)
    h = 1.0 / n
    eps = problem.epsilon
    x = h * np.arange(-J, n + J + 1)
    interior = (x > 0.5 * h) & (x < 1 - 0.5 * h)
    j = np.arange(-J, J + 1)
    w = np.full(j.size, h)
    w[[0, -1]] *= 0.5
    c = w * problem.kernel(j * h / eps) / eps ** 3
    c[J] = 0.0
    if isinstance(problem.kernel, SampledKernel):
        # samples fix sigma^2 but not the values between them; rescale so the
        # stencil reproduces quadratics exactly
        c *= problem.kernel.sigma2 / np.sum(c * (j * h) ** 2)
    idx = np.flatnonzero(interior)
    rows, cols, vals = [], [], []
    for k in range(-J, J + 1):
        if k == 0:
            continue
        rows.append(idx)
        cols.append(idx + k)
        vals.append(np.full(idx.size, -c[k + J]))
    rows.append(idx)
    cols.append(idx)
    vals.append(np.full(idx.size, c.sum()))
    collar = np.flatnonzero(~interior)
    rows.append(collar)
    cols.append(collar)
    vals.append(np.ones(collar.size))
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(x.size, x.size))
    rhs = np.where(interior, problem.source(x), problem.boundary(x))
    # truncation tail plus rounding in differences of O(1) nodal values
    tol = problem.kernel.moment_deficit + 64 * np.finfo(float).eps * c.sum()
    return NonlocalSystem(A, np.asarray(rhs, float), x, interior, c, h, float(tol))


def solve_nonlocal(problem: NonlocalDiffusionProblem, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Nodal solution on ``[0, 1]``; returns ``(x, u)``."""
    system = assemble_nonlocal(problem, h)
    u = spla.spsolve(system.matrix.tocsc(), system.rhs)
    if not np.all(np.isfinite(u)):
        raise ConstraintCoverageError("constrained system is singular")
    keep = (system.x > -0.5 * system.h) & (system.x < 1 + 0.5 * system.h)
    return system.x[keep], u[keep]


def solve_local(problem: NonlocalDiffusionProblem, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Three-point scheme for ``-(sigma^2 / 2) u'' = f`` with ``u = g`` at 0 and 1."""
    n = int(round(1.0 / h))
    if abs(n * h - 1.0) > 1e-9 or n < 2:
        raise ConfigurationError("1/h must be an integer >= 2")
    h = 1.0 / n
    x = h * np.arange(n + 1)
    k = problem.diffusion / h ** 2
    main = np.full(n - 1, 2 * k)
    off = np.full(n - 2, -k)
    A = sp.diags([off, main, off], [-1, 0, 1], format="csc")
    rhs = np.asarray(problem.source(x[1:-1]), float).copy()
    g0, g1 = problem.boundary(np.array([0.0, 1.0]))
    rhs[0] += k * g0
    rhs[-1] += k * g1
    u = np.empty(n + 1)
    u[0], u[-1] = g0, g1
    u[1:-1] = spla.spsolve(A, rhs)
    return x, u


@dataclass
class ErrorRecord:
    epsilon: float
    h: float
    local_error: float
    reference_error: float = float("nan")


def _max_error(x, u, other_x, other_u) -> float:
    ratio = int(round((x[1] - x[0]) / (other_x[1] - other_x[0])))
    if ratio < 1 or other_x.size != (x.size - 1) * ratio + 1:
        raise ConfigurationError("reference mesh must nest the solution mesh")
    return float(np.abs(u - other_u[::ratio]).max())


def solve_and_compare(problem: NonlocalDiffusionProblem, h: float, exact: Optional[Callable] = None,
                      reference: Optional[tuple] = None) -> ErrorRecord:
    """Max-norm nodal errors against the local limit and an optional fine-mesh solution."""
    x, u = solve_nonlocal(problem, h)
    loc = float(np.abs(u - exact(x)).max()) if exact is not None else float("nan")
    ref = _max_error(x, u, *reference) if reference is not None else float("nan")
    return ErrorRecord(problem.epsilon, float(x[1] - x[0]), loc, ref)


def manufactured_sine(kernel: KernelLike, epsilon: float) -> tuple[NonlocalDiffusionProblem, Callable]:
    """Problem whose local limit is ``sin(pi x)``."""
    exact = lambda x: np.sin(np.pi * np.asarray(x, float))
    d = 0.5 * kernel.sigma2
    src = lambda x: d * np.pi ** 2 * np.sin(np.pi * np.asarray(x, float))
    return NonlocalDiffusionProblem(kernel, epsilon, src, exact), exact


@dataclass
class ConvergenceDiagram:
    """Errors toward the local limit along three paths in the ``(eps, h)`` plane."""

    epsilons: np.ndarray
    simultaneous: list
    h_first: list
    eps_first: list
    verdict: dict

    def rows(self) -> list[tuple]:
        out = []
        for name, recs in (("simultaneous", self.simultaneous), ("h_first", self.h_first),
                           ("eps_first", self.eps_first)):
            for r in recs:
                out.append((name, r.epsilon, r.h, r.local_error))
        return out


def convergence_diagram(kernel: KernelLike, epsilons: Sequence[float], ratio: int = 8,
                        fine_ratio: int = 32, local_hs: Optional[Sequence[float]] = None,
                        problem_factory: Callable = manufactured_sine) -> ConvergenceDiagram:
    """Tabulate the simultaneous (``h = eps / ratio``), h-first and eps-first paths.

    The h-first path solves at ``h = eps / fine_ratio``; the eps-first path
    uses the local three-point scheme on ``local_hs`` (default: the
    simultaneous mesh sizes). The verdict (a harness convention) passes
    when simultaneous errors strictly decrease and the last one is within
    2x of the h-first path's last error.
    """
    eps = np.asarray(epsilons, float)
    if eps.size < 3:
        raise ConfigurationError("need at least 3 points per path")
    if ratio < RESOLUTION or fine_ratio < ratio:
        raise ConfigurationError("path under-resolved")
    sim, hf, ef = [], [], []
    for e in eps:
        prob, exact = problem_factory(kernel, e)
        sim.append(solve_and_compare(prob, e / ratio, exact))
        hf.append(solve_and_compare(prob, e / fine_ratio, exact))
    hs = eps / ratio if local_hs is None else np.asarray(local_hs, float)
    prob0, exact0 = problem_factory(kernel, eps[-1])
    for h in hs:
        x, u = solve_local(prob0, h)
        ef.append(ErrorRecord(0.0, float(x[1] - x[0]), float(np.abs(u - exact0(x)).max())))
    se = np.array([r.local_error for r in sim])
    monotone = bool(np.all(np.diff(se) < 0))
    ratio_final = float(se[-1] / hf[-1].local_error)
    verdict = {"monotone": monotone, "final_ratio": ratio_final,
               "pass": bool(monotone and ratio_final <= 2.0 and 1 / ratio_final <= 2.0),
               "convention": "harness convention: monotone simultaneous path, final error within 2x of h-first path"}
    return ConvergenceDiagram(eps, sim, hf, ef, verdict)
