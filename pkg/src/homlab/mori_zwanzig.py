"""Mori-Zwanzig reduction of linear autonomous systems ``x' = L x``.

Two projections are offered. ``subspace_reduce`` eliminates the orthogonal
complement of a subspace exactly (reduced equation with Markov block,
memory kernel and fluctuation forcing from ``x0``). ``mori_reduce`` uses
the rank-one Mori projection onto an observable ``a`` in a weighted inner
product. Kernels are stored with the convention

    u' = G u - int_0^t Gamma(s) u(t - s) ds + f(t),

so the kernel written with a plus sign in the elimination form equals
``-Gamma``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .core import (
    ConfigurationError,
    DomainError,
    HomlabError,
    TimeKernel,
    trapezoid_linear_solve,
    volterra_solve,
)


class BasisError(HomlabError, ValueError):
    pass


class PreconditionError(HomlabError, ValueError):
    pass


class FitError(HomlabError, ValueError):
    pass


@dataclass(frozen=True)
class LinearSystem:
    L: np.ndarray
    x0: Optional[np.ndarray] = None
    skew: bool = False
    symmetric_negative: bool = False

    def __post_init__(self):
        L = np.atleast_2d(np.asarray(self.L, float))
        if L.shape[0] != L.shape[1]:
            raise DomainError("generator must be square")
        if not np.all(np.isfinite(L)):
            raise DomainError("generator has non-finite entries")
        object.__setattr__(self, "L", L)
        if self.x0 is not None:
            x0 = np.asarray(self.x0, float)
            if x0.shape != (L.shape[0],):
                raise DomainError("x0 has the wrong size")
            object.__setattr__(self, "x0", x0)
        scale = max(1.0, np.abs(L).max())
        if self.skew and np.abs(L + L.T).max() > 1e-12 * scale:
            raise PreconditionError("generator flagged skew-symmetric is not")
        if self.symmetric_negative:
            if np.abs(L - L.T).max() > 1e-12 * scale:
                raise PreconditionError("generator flagged symmetric is not")
            if np.linalg.eigvalsh(L).max() > 1e-12 * scale:
                raise PreconditionError("generator flagged negative has a positive eigenvalue")

    @property
    def n(self) -> int:
        return self.L.shape[0]


@dataclass(frozen=True)
class MoriProjection:
    """Rank-one projection ``P v = <v,a> <a,a>^{-1} a`` with ``<u,v> = sum w u v``."""

    a: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        a = np.asarray(self.a, float)
        w = np.ones_like(a) if self.weights is None else np.asarray(self.weights, float)
        if w.shape != a.shape or np.any(w <= 0):
            raise DomainError("weights must be positive, one per component")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "weights", w)
        if not self.norm2 > 0:
            raise DomainError("observable has zero norm")

    @property
    def norm2(self) -> float:
        return float(self.inner(self.a, self.a))

    def inner(self, u, v):
        return np.tensordot(self.weights * u, v, axes=(-1, -1)) if np.ndim(u) == 1 \
            else np.einsum("...i,i,...i->...", u, self.weights, v)

    @property
    def matrix(self) -> np.ndarray:
        return np.outer(self.a, self.weights * self.a) / self.norm2

    def apply(self, v):
        return self.inner(v, self.a) / self.norm2 * self.a


@dataclass
class ReducedModel:
    """Reduced equation ``u' = G u - int Gamma(s) u(t-s) ds + f(t)``.

    For a subspace reduction ``u`` are the coordinates of ``P x`` in the
    orthonormal basis ``basis``. For a Mori reduction ``u(t) = exp(tL) a``
    is the propagated observable and ``f(t) = exp(tQL) QL a``.
    """

    G: np.ndarray
    kernel: TimeKernel
    fluctuation: np.ndarray
    u0: np.ndarray
    kind: str
    basis: Optional[np.ndarray] = None
    projection: Optional[MoriProjection] = None
    T: float = 0.0
    dt: float = 0.0

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.fluctuation.shape[0])

    def memory_kernel_plus(self) -> np.ndarray:
        """Kernel samples for the form with ``+ int K u`` (equal to ``-Gamma``)."""
        return -self.kernel.values

    def solve(self) -> np.ndarray:
        """Integrate the reduced equation with the Volterra stepper."""
        return volterra_solve(self.G if np.ndim(self.G) else float(self.G), self.kernel,
                              self.fluctuation, self.u0, self.T, self.dt)


def _orthonormal_split(basis, n):
    B = np.asarray(basis, float)
    if B.ndim == 1:
        B = B[:, None]
    if B.shape[0] != n:
        raise BasisError("basis rows must match the system size")
    Qfull, R = np.linalg.qr(B, mode="complete")
    k = B.shape[1]
    diag = np.abs(np.diag(R[:k, :k]))
    if k > n or diag.min() <= 1e-12 * max(1.0, diag.max()):
        raise BasisError("subspace basis is rank deficient")
    return Qfull[:, :k], Qfull[:, k:]


def _propagate(M, v0, dt, nt, anchor=256):
    """Samples of ``exp(t M) v0`` on ``t = 0, dt, ...`` (nt samples).

    Repeated multiplication by ``expm(dt M)`` re-anchored every ``anchor``
    steps with a fresh ``expm(t M)`` to stop round-off drift.
    """
    M = np.atleast_2d(M)
    v0 = np.asarray(v0, dtype=M.dtype if np.iscomplexobj(M) else float)
    out = np.empty((nt,) + v0.shape, dtype=np.result_type(M, v0))
    if M.size == 0:
        out[:] = v0
        return out
    step = sla.expm(dt * M)
    out[0] = v0
    for n in range(1, nt):
        if n % anchor == 0:
            out[n] = sla.expm((n * dt) * M) @ v0
        else:
            out[n] = step @ out[n - 1]
    return out


def _grid(T, dt):
    if not dt > 0 or not T > 0:
        raise ConfigurationError("T and dt must be positive")
    nt = int(round(T / dt)) + 1
    if abs((nt - 1) * dt - T) > 1e-9 * T:
        raise ConfigurationError("T must be an integer multiple of dt")
    return nt


def _exponential_modes(left, M, right, scale=1.0):
    """Rates and weights of ``t -> scale * left @ expm(t M) @ right`` if diagonalizable."""
    if M.shape[0] == 0:
        return np.zeros(0), np.zeros(0)
    if np.allclose(M, M.T, atol=1e-13 * max(1.0, np.abs(M).max())):
        mu, S = np.linalg.eigh(0.5 * (M + M.T))
        Sinv = S.T
    else:
        mu, S = np.linalg.eig(M)
        if np.linalg.cond(S) > 1e8:
            return None, None
        Sinv = np.linalg.inv(S)
    weights = scale * (left @ S) * (Sinv @ right)
    return mu, weights


def subspace_reduce(system: LinearSystem, basis, T: float, dt: float) -> ReducedModel:
    """Exact elimination of the complement of ``span(basis)``.

    ``G = PLP``, ``Gamma(t) = -PLQ exp(t QLQ) QLP`` and
    ``f(t) = PLQ exp(t QLQ) Q x0`` in orthonormal coordinates. Matrix
    exponentials use scaling and squaring (``scipy.linalg.expm``).
    """
    if system.x0 is None:
        raise DomainError("subspace reduction needs an initial state")
    nt = _grid(T, dt)
    Phi, Psi = _orthonormal_split(basis, system.n)
    L = system.L
    G = Phi.T @ L @ Phi
    C = Phi.T @ L @ Psi
    A = Psi.T @ L @ Psi
    B = Psi.T @ L @ Phi
    k = Phi.shape[1]
    # columns of exp(tA) B and exp(tA) Q x0, propagated together
    start = np.column_stack([B, Psi.T @ system.x0]) if Psi.shape[1] else np.zeros((0, k + 1))
    prop = _propagate(A, start, dt, nt)
    if Psi.shape[1]:
        gamma = -np.einsum("ij,njk->nik", C, prop[:, :, :k])
        fluct = np.einsum("ij,nj->ni", C, prop[:, :, k])
    else:
        gamma = np.zeros((nt, k, k))
        fluct = np.zeros((nt, k))
    if k == 1:
        rates, weights = _exponential_modes(C[0], A, B[:, 0], scale=-1.0)
        if rates is not None and np.any(np.real(rates) > 1e-12):
            rates = weights = None
        kernel = TimeKernel(dt, gamma[:, 0, 0], rates, weights, fit_residual=1e-10)
        return ReducedModel(G[0, 0], kernel, fluct[:, 0], float(Phi[:, 0] @ system.x0),
                            "subspace", Phi, None, T, dt)
    kernel = TimeKernel(dt, gamma)
    return ReducedModel(G, kernel, fluct, Phi.T @ system.x0, "subspace", Phi, None, T, dt)


def projected_trajectory(system: LinearSystem, basis, T: float, dt: float) -> np.ndarray:
    """Coordinates of ``P exp(tL) x0`` in the orthonormalized basis."""
    Phi, _ = _orthonormal_split(basis, system.n)
    nt = _grid(T, dt)
    X = _propagate(system.L, system.x0, dt, nt)
    return X @ Phi


def _complement_basis(proj: MoriProjection):
    """W-orthonormal basis of the W-orthogonal complement of ``a``."""
    w = proj.weights
    sq = np.sqrt(w)
    a_t = sq * proj.a
    Qfull, _ = np.linalg.qr(a_t[:, None], mode="complete")
    return Qfull[:, 1:] / sq[:, None]


def mori_reduce(system: LinearSystem, projection: MoriProjection, T: float, dt: float) -> ReducedModel:
    """Mori reduction for the observable ``a``.

    ``G = <La,a>/<a,a>``, ``f(t) = exp(tQL) QL a`` and
    ``Gamma(t) = -<L f(t), a>/<a,a>``, so that ``u(t) = exp(tL) a``
    satisfies the reduced equation exactly.
    """
    if projection.a.shape != (system.n,):
        raise DomainError("observable size does not match the system")
    nt = _grid(T, dt)
    L = system.L
    a = projection.a
    w = projection.weights
    na = projection.norm2
    La = L @ a
    G = float(projection.inner(La, a) / na)
    QLa = La - G * a
    V = _complement_basis(projection)
    # QL restricted to range(Q) in W-orthonormal coordinates
    M = V.T @ (w[:, None] * (L @ V))
    c = V.T @ (w * QLa)
    coords = _propagate(M, c, dt, nt)
    fluct = coords @ V.T
    left = -(a * w) @ L @ V / na
    gamma = coords @ left
    rates, weights = _exponential_modes(left, M, c)
    if rates is not None and np.any(np.real(rates) > 1e-12):
        rates = weights = None
    kernel = TimeKernel(dt, gamma, rates, weights, fit_residual=1e-10)
    return ReducedModel(G, kernel, fluct, a.copy(), "mori", None, projection, T, dt)


def exact_trajectory(system: LinearSystem, x0, T: float, dt: float) -> np.ndarray:
    return _propagate(system.L, np.asarray(x0, float), dt, _grid(T, dt))


def fluctuation_dissipation_check(reduced: ReducedModel, system: LinearSystem) -> float:
    """``max_t |Gamma(t) - <f(t), f(0)>/<a,a>|`` for skew generators."""
    if reduced.kind != "mori" or reduced.projection is None:
        raise PreconditionError("fluctuation-dissipation needs a Mori-reduced model")
    if not system.skew:
        raise PreconditionError("fluctuation-dissipation relation only holds for skew generators")
    proj = reduced.projection
    W = np.diag(proj.weights)
    WL = W @ system.L
    if np.abs(WL + WL.T).max() > 1e-12 * max(1.0, np.abs(WL).max()):
        raise PreconditionError("generator is not skew in the projection inner product")
    f = reduced.fluctuation
    corr = proj.inner(f, np.broadcast_to(f[0], f.shape)) / proj.norm2
    return float(np.abs(reduced.kernel.values - corr).max())


@dataclass
class CorrelationReport:
    times: np.ndarray
    correlation: np.ndarray
    defect: float
    volterra_error: float
    orthogonality: float


def correlation_evolution(reduced: ReducedModel, system: LinearSystem) -> CorrelationReport:
    """Check ``C' = G C - int Gamma C`` for ``C(t) = <exp(tL) a, a>``.

    The defect uses the exact derivative ``<L exp(tL) a, a>`` and the
    trapezoidal convolution, so it is of quadrature order ``O(dt^2)``.
    The reduced scalar equation is also integrated and compared with C.
    """
    if reduced.kind != "mori":
        raise PreconditionError("correlation evolution needs a Mori-reduced model")
    proj = reduced.projection
    dt = reduced.dt
    nt = reduced.fluctuation.shape[0]
    U = _propagate(system.L, proj.a, dt, nt)
    C = proj.inner(U, np.broadcast_to(proj.a, U.shape))
    dC = proj.inner(U @ system.L.T, np.broadcast_to(proj.a, U.shape))
    gam = reduced.kernel.values
    conv = np.empty(nt)
    conv[0] = 0.0
    for n in range(1, nt):
        prod = gam[: n + 1] * C[n::-1]
        conv[n] = dt * (prod.sum() - 0.5 * (prod[0] + prod[-1]))
    defect = np.abs(dC - reduced.G * C + conv).max()
    Cv = volterra_solve(reduced.G, reduced.kernel, None, C[0], reduced.T, dt)
    orth = np.abs(proj.inner(reduced.fluctuation,
                             np.broadcast_to(proj.a, reduced.fluctuation.shape))).max()
    return CorrelationReport(dt * np.arange(nt), C, float(defect),
                             float(np.abs(Cv - C).max()), float(orth))


# --------------------------------------------------------------------------
# exponential localization
# --------------------------------------------------------------------------


def prony_fit(samples, dt: float, m: int):
    """Fit ``sum_j w_j exp(rho_j t)`` to uniform samples.

    Linear prediction of order ``m`` by least squares, rates from the
    roots of the prediction polynomial, rates with positive real part
    projected onto the imaginary axis, then a least-squares refit of the
    weights. Returns ``(rates, weights, max_residual)``.
    """
    if m < 1:
        raise ConfigurationError("need at least one exponential mode")
    y = np.asarray(samples, float)
    nt = y.size
    if nt < 2 * m + 1:
        raise FitError("too few samples for the requested number of modes")
    H = np.column_stack([y[j: nt - m + j] for j in range(m)])
    rhs = y[m:]
    coef, *_ = np.linalg.lstsq(H, rhs, rcond=None)
    roots = np.roots(np.concatenate([[1.0], -coef[::-1]]))
    if not np.all(np.isfinite(roots)) or np.any(np.abs(roots) == 0):
        raise FitError(f"degenerate prediction polynomial, roots {roots}")
    rates = np.log(roots.astype(complex)) / dt
    rates = np.where(rates.real > 0, 1j * rates.imag, rates)
    if not np.all(np.isfinite(rates)) or np.any(rates.real > 0):
        raise FitError(f"unstable rates after projection: {rates}")
    t = dt * np.arange(nt)
    V = np.exp(np.multiply.outer(t, rates))
    weights, *_ = np.linalg.lstsq(V, y.astype(complex), rcond=None)
    resid = float(np.abs(np.real(V @ weights) - y).max())
    if np.all(np.abs(rates.imag) < 1e-14) and np.all(np.abs(weights.imag) < 1e-14 * max(1, np.abs(weights).max())):
        rates, weights = rates.real, weights.real
    return rates, weights, resid


@dataclass
class LocalizedSystem:
    """Augmented local system for ``(u, v_1..v_m)``.

    ``u' = G u - sum_j v_j + f``, ``v_j' = w_j u + rho_j v_j`` with
    ``v_j(t) = int_0^t w_j exp(rho_j s) u(t-s) ds``.
    """

    matrix: np.ndarray
    rates: np.ndarray
    weights: np.ndarray
    kernel_residual: float
    trajectory_error: float = float("nan")

    def solve(self, u0: float, T: float, dt: float) -> np.ndarray:
        x0 = np.zeros(self.matrix.shape[0], dtype=self.matrix.dtype)
        x0[0] = u0
        X = trapezoid_linear_solve(self.matrix, x0, T, dt)
        return np.real(X)


def localize_kernel(kernel: TimeKernel, m: int, markov: float = 0.0, u0: float = 1.0,
                    T: Optional[float] = None) -> LocalizedSystem:
    """Replace a scalar memory kernel by ``m`` exponential modes and auxiliary variables.

    The trajectory error compares ``u`` from the augmented system with the
    Volterra solution of ``u' = markov u - int Gamma u`` on ``[0, T]``.
    """
    if m < 1:
        raise ConfigurationError("need at least one exponential mode")
    if kernel.values.ndim != 1:
        raise ConfigurationError("only scalar kernels can be localized")
    rates, weights, resid = prony_fit(kernel.values, kernel.dt, m)
    dtype = complex if np.iscomplexobj(rates) or np.iscomplexobj(weights) else float
    A = np.zeros((m + 1, m + 1), dtype=dtype)
    A[0, 0] = markov
    A[0, 1:] = -1.0
    A[1:, 0] = weights
    A[1:, 1:] = np.diag(rates)
    loc = LocalizedSystem(A, rates, weights, resid)
    T = kernel.times[-1] if T is None else T
    dt = kernel.dt
    ref = volterra_solve(markov, kernel, None, u0, T, dt)
    aug = loc.solve(u0, T, dt)[:, 0]
    loc.trajectory_error = float(np.abs(aug - ref).max())
    return loc


# --------------------------------------------------------------------------
# seeded instances
# --------------------------------------------------------------------------


def random_stable_system(rng: np.random.Generator, n: int) -> LinearSystem:
    """Skew part plus a negative definite part, with a unit-norm random start."""
    G = rng.standard_normal((n, n))
    S = rng.standard_normal((n, n)) / np.sqrt(n)
    L = 0.5 * (G - G.T) / np.sqrt(n) - (S @ S.T) - 0.1 * np.eye(n)
    x0 = rng.standard_normal(n)
    return LinearSystem(L, x0 / np.linalg.norm(x0))


def random_skew_system(rng: np.random.Generator, n: int) -> tuple[LinearSystem, MoriProjection]:
    """Random skew-symmetric generator and a random observable (unit weights)."""
    G = rng.standard_normal((n, n))
    L = 0.5 * (G - G.T)
    return LinearSystem(L, skew=True), MoriProjection(rng.standard_normal(n))


@dataclass
class MasterTrial:
    n: int
    k: int
    error: float
    scale: float

    def passed(self, dt: float) -> bool:
        return self.error <= 5 * dt ** 2 * self.scale


def master_property_trials(trials: int = 20, seed: int = 0, n_max: int = 20,
                           T: float = 5.0, dt: float = 1e-3) -> list[MasterTrial]:
    """Reduced trajectories against projected matrix-exponential trajectories."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(trials):
        n = int(rng.integers(3, n_max + 1))
        k = int(rng.integers(1, min(3, n - 1) + 1))
        system = random_stable_system(rng, n)
        basis = rng.standard_normal((n, k))
        red = subspace_reduce(system, basis, T, dt)
        ref = projected_trajectory(system, basis, T, dt)
        u = red.solve().reshape(ref.shape)
        out.append(MasterTrial(n, k, float(np.abs(u - ref).max()), float(np.abs(ref).max())))
    return out
