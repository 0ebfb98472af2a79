"""Classical periodic homogenization.

Exact oscillatory solution of the 1D Dirichlet problem
``-(a(x/eps) u')' = f``, the harmonic-mean effective coefficient, the
periodic cell problem in one and two dimensions and epsilon-convergence
studies.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import (
    ConfigurationError,
    DomainError,
    EllipticityError,
    HomlabError,
    PeriodicProfile,
    UniformGrid,
    fit_order,
    inverse,
    periodic_average,
)


class StudyError(HomlabError, ValueError):
    pass


class MeshError(HomlabError, ValueError):
    pass


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


def _require_positive(profile: PeriodicProfile):
    if profile.bounds[0] <= 0.0:
        raise EllipticityError(
            f"coefficient must be strictly positive, minimum is {profile.bounds[0]!r}")


def effective_coefficient_1d(profile: PeriodicProfile) -> float:
    """Harmonic mean ``<a^{-1}>^{-1}``."""
    _require_positive(profile)
    return 1.0 / periodic_average(profile, inverse)


def _as_callable(f) -> Callable:
    if callable(f):
        return lambda x: np.broadcast_to(np.asarray(f(x), dtype=float), np.shape(x))
    arr = np.asarray(f, dtype=float)
    if arr.ndim == 0:
        return lambda x: np.full(np.shape(x), float(arr))
    raise TypeError("pass a callable or a scalar; for grid samples use source_from_samples")


def source_from_samples(grid: UniformGrid, samples) -> Callable:
    """Piecewise-linear interpolant of source samples on ``grid``."""
    xs = grid.nodes
    ys = np.asarray(samples, float)
    return lambda x: np.interp(x, xs, ys)


def _pieces(grid_nodes, profile, epsilon, subdiv):
    # all points where a(x/eps) may jump, plus grid nodes, in [0, 1]
    jumps = profile.jumps()
    kmax = int(np.ceil(1.0 / epsilon)) + 1
    cells = np.arange(-1, kmax + 1)
    pts = (cells[:, None] + jumps[None, :]).ravel() * epsilon
    pts = pts[(pts > 0.0) & (pts < 1.0)]
    knots = np.unique(np.concatenate([grid_nodes, pts, [0.0, 1.0]]))
    if subdiv > 1:
        frac = np.arange(subdiv) / subdiv
        left = knots[:-1, None] + np.diff(knots)[:, None] * frac[None, :]
        knots = np.append(left.ravel(), knots[-1])
    return knots


def _integrals(knots, profile, epsilon, f):
    """Cumulative ``G(x) = int_0^x a_eps^{-1} F`` and ``H(x) = int_0^x a_eps^{-1}`` at knots."""
    left, right = knots[:-1], knots[1:]
    width = right - left
    t = 0.5 * (_GL_NODES + 1.0)
    w = 0.5 * _GL_WEIGHTS
    # F at piece boundaries
    xq = left[:, None] + width[:, None] * t[None, :]
    piece_f = (f(xq) * w[None, :]).sum(axis=1) * width
    F_left = np.concatenate([[0.0], np.cumsum(piece_f)])[:-1]
    # F at the Gauss nodes of each piece: nested Gauss on [left, xq]
    sub = left[:, None, None] + (xq - left[:, None])[:, :, None] * t[None, None, :]
    Fq = F_left[:, None] + ((f(sub) * w[None, None, :]).sum(axis=2)) * (xq - left[:, None])
    ainv = 1.0 / profile(0.5 * (left + right) / epsilon)
    piece_G = ainv * (Fq * w[None, :]).sum(axis=1) * width
    piece_H = ainv * width
    G = np.concatenate([[0.0], np.cumsum(piece_G)])
    H = np.concatenate([[0.0], np.cumsum(piece_H)])
    return G, H


def exact_solution_1d(profile: PeriodicProfile, epsilon: float, f, grid: UniformGrid,
                      tol: float = 1e-12, max_levels: int = 8) -> np.ndarray:
    """Closed-form solution of ``-(a(x/eps) u')' = f`` on (0,1), ``u(0)=u(1)=0``.

    ``u(x) = -int_0^x a_eps^{-1} (F + C) dxi`` with ``F = int_0^xi f`` and
    ``C`` fixed by ``u(1) = 0``. Integrals use 8-point Gauss-Legendre on
    pieces aligned with every jump of ``a_eps`` and nested Gauss for ``F``;
    pieces are halved until nodal values change by less than ``tol``.

    Parameters
    ----------
    profile : PeriodicProfile
        Strictly positive periodic coefficient.
    epsilon : float
        Period of the oscillation.
    f : callable or float
        Source term (vectorized callable or constant).
    grid : UniformGrid
        Output nodes on [0, 1].
    """
    _require_positive(profile)
    if not epsilon > 0:
        raise DomainError("epsilon must be positive")
    if grid.a != 0.0 or grid.b != 1.0 or not grid.endpoint:
        raise ConfigurationError("grid must cover [0, 1] including both ends")
    fc = _as_callable(f)
    nodes = grid.nodes
    prev = None
    for level in range(max_levels):
        knots = _pieces(nodes, profile, epsilon, 2 ** level)
        G, H = _integrals(knots, profile, epsilon, fc)
        C = -G[-1] / H[-1]
        u_knots = -(G + C * H)
        idx = np.searchsorted(knots, nodes)
        idx = np.minimum(idx, knots.size - 1)
        u = u_knots[idx]
        scale = max(1.0, np.abs(u).max())
        if prev is not None and np.abs(u - prev).max() <= tol * scale:
            break
        prev = u
    residual = abs(u_knots[-1])
    if residual > 1e-10 * max(1.0, np.abs(u_knots).max()):
        raise StudyError(f"boundary residual {residual:.3e} exceeds 1e-10")
    return u


def homogenized_solution_1d(profile: PeriodicProfile, f, grid: UniformGrid) -> np.ndarray:
    """Limit solution of ``-abar u'' = f`` from the same closed form with ``abar``."""
    abar = effective_coefficient_1d(profile)
    return exact_solution_1d(PeriodicProfile.constant(abar), 1.0, f, grid)


@dataclass
class ConvergenceStudy:
    epsilons: np.ndarray
    errors: np.ndarray
    order: float


def l2_norm(values, h: float) -> float:
    """Trapezoidal discrete L2 norm on a uniform grid including both ends."""
    v2 = np.asarray(values) ** 2
    return float(np.sqrt(h * (v2.sum() - 0.5 * (v2[0] + v2[-1]))))


def epsilon_convergence_study(profile: PeriodicProfile, f, epsilons: Sequence[float],
                              grid: UniformGrid) -> ConvergenceStudy:
    """L2 errors ``||u^eps - u^0||`` and their fitted order in epsilon."""
    eps = np.asarray(epsilons, dtype=float)
    if eps.size < 3:
        raise StudyError("an epsilon study needs at least 3 values")
    if np.any(np.diff(eps) >= 0):
        raise StudyError("epsilons must be strictly decreasing")
    u0 = homogenized_solution_1d(profile, f, grid)
    errors = np.array([l2_norm(exact_solution_1d(profile, e, f, grid) - u0, grid.h)
                       for e in eps])
    if np.all(errors <= 1e-10):
        order = float("nan")
    else:
        order = fit_order(eps, errors)
    return ConvergenceStudy(eps, errors, order)


# --------------------------------------------------------------------------
# cell problem
# --------------------------------------------------------------------------


@dataclass
class EffectiveTensor:
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.atleast_2d(np.asarray(self.matrix, float))
        asym = np.abs(self.matrix - self.matrix.T).max()
        if asym > 1e-12 * max(1.0, np.abs(self.matrix).max()):
            raise MeshError(f"effective tensor not symmetric ({asym:.3e})")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def scalar(self) -> float:
        if self.dim != 1:
            raise DomainError("scalar value only defined for d = 1")
        return float(self.matrix[0, 0])

    def to_dict(self) -> dict:
        return {"dimension": self.dim, "matrix": self.matrix.tolist()}


@dataclass
class CellCorrectors:
    n: int
    dim: int
    fields: np.ndarray  # (d, n**d) nodal values on the periodic mesh

    def means(self) -> np.ndarray:
        return self.fields.mean(axis=1)


def _sample_coefficient(A, d: int, n: int) -> np.ndarray:
    """Element (cell-centre) samples, shape ``(n,)*d + (d, d)``."""
    if callable(A):
        c = (np.arange(n) + 0.5) / n
        if d == 1:
            vals = np.asarray(A(c), float).reshape(n, 1, 1)
        else:
            Y1, Y2 = np.meshgrid(c, c, indexing="ij")
            vals = np.asarray(A(Y1, Y2), float)
            if vals.shape != (n, n, 2, 2):
                raise ConfigurationError("A(y1, y2) must return shape (n, n, 2, 2)")
        return vals
    vals = np.asarray(A, float)
    if d == 1 and vals.shape == (n,):
        vals = vals.reshape(n, 1, 1)
    if vals.shape != (n,) * d + (d, d):
        raise ConfigurationError(f"coefficient samples must have shape {(n,) * d + (d, d)}")
    return vals


def _check_elliptic(vals, d):
    flat = vals.reshape(-1, d, d)
    if np.abs(flat - flat.transpose(0, 2, 1)).max() > 1e-12 * max(1.0, np.abs(flat).max()):
        raise EllipticityError("coefficient must be symmetric")
    eig = np.linalg.eigvalsh(flat)
    if eig.min() <= 0:
        raise EllipticityError(f"coefficient not uniformly elliptic (min eigenvalue {eig.min()!r})")
    return eig


def _q1_local(Ae: np.ndarray, h: float):
    """Bilinear-element stiffness and load blocks for constant ``Ae`` on an h-square.

    Returns ``K`` (4x4) with ``K_ab = int grad phi_a . Ae grad phi_b`` and
    ``G`` (4x2) with ``G_aj = int grad phi_a . Ae e_j``. Local node order
    (0,0), (1,0), (0,1), (1,1).
    """
    gp = 0.5 * (np.array([-1, 1]) / np.sqrt(3) + 1)
    corners = np.array([[0, 0], [1, 0], [0, 1], [1, 1]])
    K = np.zeros((4, 4))
    G = np.zeros((4, 2))
    for s in gp:
        for t in gp:
            grads = np.empty((4, 2))
            for a, (i, j) in enumerate(corners):
                fx = (s if i else 1 - s)
                fy = (t if j else 1 - t)
                grads[a, 0] = (1 if i else -1) * fy / h
                grads[a, 1] = (1 if j else -1) * fx / h
            w = 0.25 * h * h
            K += w * grads @ Ae @ grads.T
            G += w * grads @ Ae
    return K, G


def solve_cell_problem(A, d: int, n: int) -> tuple[CellCorrectors, EffectiveTensor]:
    """Periodic cell problem on ``[0,1]^d`` with ``n`` elements per direction.

    Lowest-order conforming elements (linear for d=1, bilinear for d=2)
    on a uniform periodic mesh, coefficient constant per element. The
    zero-mean condition enters as a Lagrange multiplier against the
    constant vector, which keeps the bordered system symmetric.

    ``A`` is either a callable (``A(y)`` for d=1 returning scalars,
    ``A(y1, y2)`` for d=2 returning ``(n, n, 2, 2)``) or element samples.
    """
    if d not in (1, 2):
        raise ConfigurationError("only d = 1 and d = 2 are supported")
    if n < 2:
        raise MeshError("need at least 2 elements per direction")
    vals = _sample_coefficient(A, d, n)
    _check_elliptic(vals, d)
    h = 1.0 / n
    N = n ** d
    rows, cols, kv = [], [], []
    rhs = np.zeros((N, d))
    energy_const = np.zeros((d, d))
    if d == 1:
        a = vals[:, 0, 0]
        for e in range(n):
            i0, i1 = e, (e + 1) % n
            k = a[e] / h
            rows += [i0, i0, i1, i1]
            cols += [i0, i1, i0, i1]
            kv += [k, -k, -k, k]
            rhs[i0, 0] += -a[e]
            rhs[i1, 0] += a[e]
        energy_const[0, 0] = a.mean()
    else:
        cache = {}
        for e1 in range(n):
            for e2 in range(n):
                Ae = vals[e1, e2]
                key = Ae.tobytes()
                if key not in cache:
                    cache[key] = _q1_local(Ae, h)
                Kl, Gl = cache[key]
                idx = [
                    (e1 % n) * n + (e2 % n),
                    ((e1 + 1) % n) * n + (e2 % n),
                    (e1 % n) * n + ((e2 + 1) % n),
                    ((e1 + 1) % n) * n + ((e2 + 1) % n),
                ]
                for a_ in range(4):
                    for b_ in range(4):
                        rows.append(idx[a_])
                        cols.append(idx[b_])
                        kv.append(Kl[a_, b_])
                    rhs[idx[a_]] += Gl[a_]
        energy_const = vals.reshape(-1, 2, 2).mean(axis=0)
    K = sp.csc_matrix((kv, (rows, cols)), shape=(N, N))
    ones = np.ones((N, 1))
    bordered = sp.bmat([[K, sp.csc_matrix(ones)], [sp.csc_matrix(ones.T), None]], format="csc")
    try:
        lu = spla.splu(bordered)
    except RuntimeError as exc:
        raise MeshError(f"cell system singular beyond the constant null space: {exc}") from exc
    chi = np.empty((d, N))
    for j in range(d):
        sol = lu.solve(np.concatenate([-rhs[:, j], [0.0]]))
        chi[j] = sol[:N]
    if not np.all(np.isfinite(chi)):
        raise MeshError("cell solve produced non-finite values")
    # abar_ij = int a_ij + a_ik d_k chi_j = <A e_i, e_j> + G_i . chi_j
    Abar = energy_const + rhs.T @ chi.T
    Abar = 0.5 * (Abar + Abar.T)
    return CellCorrectors(n, d, chi), EffectiveTensor(Abar)


def cell_problem_converged(A: Callable, d: int, n0: int = 8, tol: float = 1e-6,
                           max_n: int = 256) -> tuple[CellCorrectors, EffectiveTensor, int]:
    """Refine the cell mesh by halving until ``Abar`` changes less than ``tol``."""
    n = n0
    corr, prev = solve_cell_problem(A, d, n)
    while n < max_n:
        n *= 2
        corr, cur = solve_cell_problem(A, d, n)
        if np.abs(cur.matrix - prev.matrix).max() < tol:
            return corr, cur, n
        prev = cur
    return corr, cur, n


def homogenization_bounds(A, d: int, n: int) -> tuple[float, float]:
    """Harmonic mean of the smallest and arithmetic mean of the largest pointwise eigenvalue."""
    eig = _check_elliptic(_sample_coefficient(A, d, n), d)
    return float(1.0 / np.mean(1.0 / eig[:, 0])), float(np.mean(eig[:, -1]))


def laminate_coefficient(profile: PeriodicProfile):
    """``A(y) = diag(a(y1), a(y1))`` as a 2D cell coefficient callable."""
    def A(y1, y2):
        a = profile(y1)
        out = np.zeros(np.shape(y1) + (2, 2))
        out[..., 0, 0] = a
        out[..., 1, 1] = a
        return out
    return A
