"""Coarse operators from an orthogonal splitting ``V = V_H + W``.

Given SPD ``L`` and a coarse basis ``Phi``, the splitting uses the
projection ``P`` onto ``span(Phi)`` orthogonal in ``<x, y> = x^T M y``
(``M`` identity or a lumped mass). Two coarse problems are built:

* the Schur complement of the complement block, and
* the LOD problem with correctors ``C v = (QLQ)^-1 QL v``.

Coarse matrices are expressed in the coordinates of the *input* basis, so
a hat basis keeps its node positions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .core import ConfigurationError, HomlabError, PeriodicProfile


class BasisError(HomlabError, ValueError):
    pass


class OperatorError(HomlabError, ValueError):
    pass


class ComplementSingularityError(HomlabError, np.linalg.LinAlgError):
    pass


class ProfileError(HomlabError, ValueError):
    pass


@dataclass
class SubspaceDecomposition:
    L: np.ndarray
    basis: np.ndarray
    mass: np.ndarray  # diagonal of the inner-product weight
    coarse: np.ndarray  # M-orthonormal, spans the basis
    complement: np.ndarray  # M-orthonormal complement
    to_basis: np.ndarray  # R with coarse = basis @ inv(R)
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    @property
    def n(self) -> int:
        return self.L.shape[0]

    @property
    def N(self) -> int:
        return self.basis.shape[1]

    def projector(self) -> np.ndarray:
        return self.coarse @ (self.coarse.T * self.mass)

    def invariant_residuals(self) -> dict:
        P = self.projector()
        MP = self.mass[:, None] * P
        scale = max(1.0, np.abs(self.L).max())
        pd = True
        if self.A.size:
            try:
                np.linalg.cholesky(self.A)
            except np.linalg.LinAlgError:
                pd = False
        return {
            "idempotence": float(np.abs(P @ P - P).max()),
            "self_adjointness": float(np.abs(MP - MP.T).max()),
            "transpose_blocks": float(np.abs(self.C - self.B.T).max() / scale) if self.B.size else 0.0,
            "complement_positive_definite": pd,
        }


def _mass(weights, n) -> np.ndarray:
    if weights is None:
        return np.ones(n)
    w = np.asarray(weights, float)
    if w.shape != (n,) or np.any(w <= 0):
        raise ConfigurationError("mass weights must be a positive vector of length n")
    return w


def decompose(L, basis, weights=None) -> SubspaceDecomposition:
    """Orthonormalize ``basis`` in the weighted inner product and split ``L`` into blocks.

    Blocks follow ``A = QLQ``, ``B = QLP``, ``C = PLQ``, ``D = PLP``
    expressed in the orthonormal coordinates.
    """
    L = np.asarray(L, float)
    Phi = np.asarray(basis, float)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise OperatorError("operator must be square")
    n = L.shape[0]
    if Phi.ndim == 1:
        Phi = Phi[:, None]
    if Phi.shape[0] != n or Phi.shape[1] < 1 or Phi.shape[1] > n:
        raise BasisError(f"basis shape {Phi.shape} incompatible with n={n}")
    scale = np.abs(L).max()
    if np.abs(L - L.T).max() > 1e-12 * scale:
        raise OperatorError("operator is not symmetric")
    try:
        np.linalg.cholesky(L)
    except np.linalg.LinAlgError as exc:
        raise OperatorError("operator is not positive definite") from exc
    m = _mass(weights, n)
    root = np.sqrt(m)
    Qfull, R = sla.qr(root[:, None] * Phi, mode="full")
    N = Phi.shape[1]
    diag = np.abs(np.diag(R[:N]))
    if diag.min() <= 1e-12 * diag.max():
        raise BasisError("coarse basis is rank deficient")
    coarse = Qfull[:, :N] / root[:, None]
    comp = Qfull[:, N:] / root[:, None]
    LP, LQ = L @ coarse, L @ comp
    return SubspaceDecomposition(L, Phi, m, coarse, comp, R[:N],
                                 comp.T @ LQ, comp.T @ LP, coarse.T @ LQ, coarse.T @ LP)


@dataclass
class CoarseProblem:
    """``matrix @ c = load`` for coefficients ``c`` of the input basis."""

    matrix: np.ndarray
    load: np.ndarray
    tag: str
    basis: np.ndarray

    def solve(self) -> np.ndarray:
        return np.linalg.solve(self.matrix, self.load)

    def fine(self) -> np.ndarray:
        return self.basis @ self.solve()

    def symmetry_residual(self) -> float:
        return float(np.abs(self.matrix - self.matrix.T).max() / np.abs(self.matrix).max())


def schur_homogenize(dec: SubspaceDecomposition, f) -> CoarseProblem:
    """Eliminate the complement block: ``D - C A^-1 B`` and ``Pf - C A^-1 Qf``."""
    f = np.asarray(f, float)
    fP, fQ = dec.coarse.T @ f, dec.complement.T @ f
    if dec.A.size:
        try:
            cho = sla.cho_factor(dec.A)
        except np.linalg.LinAlgError as exc:
            raise ComplementSingularityError("complement block is singular") from exc
        S = dec.D - dec.C @ sla.cho_solve(cho, dec.B)
        g = fP - dec.C @ sla.cho_solve(cho, fQ)
    else:
        S, g = dec.D.copy(), fP
    R = dec.to_basis
    S = R.T @ S @ R
    return CoarseProblem(0.5 * (S + S.T), R.T @ g, "schur", dec.basis)


def correctors(dec: SubspaceDecomposition) -> np.ndarray:
    """Corrector of each basis vector, from the constrained saddle-point system.

    ``C v`` lies in the complement (``Phi^T M C v = 0``) and satisfies
    ``a(C v, w) = a(v, w)`` for every complement ``w``.
    """
    n, N = dec.n, dec.N
    con = dec.mass[:, None] * dec.basis
    K = np.zeros((n + N, n + N))
    K[:n, :n] = dec.L
    K[:n, n:] = con
    K[n:, :n] = con.T
    rhs = np.zeros((n + N, N))
    rhs[:n] = dec.L @ dec.basis
    try:
        sol = sla.solve(K, rhs, assume_a="sym")
    except np.linalg.LinAlgError as exc:
        raise ComplementSingularityError("corrector system is singular") from exc
    return sol[:n]


def lod_homogenize(dec: SubspaceDecomposition, f) -> CoarseProblem:
    """``a((1 - C) u_H, v_H)`` and ``(f, (1 - C) v_H)`` on the input basis."""
    f = np.asarray(f, float)
    ms = dec.basis - correctors(dec)
    S = dec.basis.T @ dec.L @ ms
    return CoarseProblem(0.5 * (S + S.T), ms.T @ f, "lod", dec.basis)


@dataclass
class EquivalenceReport:
    matrix_difference: float
    solution_difference: float
    exactness: float
    tolerance: float = 1e-10

    @property
    def passed(self) -> bool:
        return max(self.matrix_difference, self.solution_difference, self.exactness) <= self.tolerance


def projected_fine_solution(dec: SubspaceDecomposition, f) -> np.ndarray:
    return dec.projector() @ np.linalg.solve(dec.L, np.asarray(f, float))


def equivalence_check(dec: SubspaceDecomposition, f, tol: float = 1e-10) -> EquivalenceReport:
    """Relative differences between the Schur and LOD coarse problems.

    ``exactness`` compares the Schur solution with the projection of the
    fine solution.
    """
    s, l = schur_homogenize(dec, f), lod_homogenize(dec, f)
    us, ul = s.fine(), l.fine()
    ref = projected_fine_solution(dec, f)
    nf = max(np.linalg.norm(ref), 1e-300)
    return EquivalenceReport(
        float(np.linalg.norm(s.matrix - l.matrix) / np.linalg.norm(s.matrix)),
        float(np.linalg.norm(us - ul) / max(np.linalg.norm(us), 1e-300)),
        float(np.linalg.norm(us - ref) / nf),
        tol,
    )


def random_spd(rng: np.random.Generator, n: int, condition: float = 1e2) -> np.ndarray:
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    ev = np.logspace(0, np.log10(condition), n)
    L = (Q * ev) @ Q.T
    return 0.5 * (L + L.T)


def random_instance(rng: np.random.Generator, n: int = 64, N: int = 8):
    return random_spd(rng, n), rng.standard_normal((n, N)), rng.standard_normal(n)


def equivalence_trials(trials: int = 100, n: int = 64, N: int = 8, seed: int = 0) -> list[EquivalenceReport]:
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(trials):
        L, Phi, f = random_instance(rng, n, N)
        out.append(equivalence_check(decompose(L, Phi), f))
    return out


# -- 1D model problem ---------------------------------------------------------


def fd_operator_1d(profile: PeriodicProfile, epsilon: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Dirichlet flux-form operator on ``n`` interior nodes of ``(0, 1)``.

    Returns ``(L, x)``; the coefficient ``a(x/eps)`` is sampled at cell midpoints.
    """
    h = 1.0 / (n + 1)
    x = h * np.arange(1, n + 1)
    mid = h * (np.arange(n + 1) + 0.5)
    a = np.asarray(profile((mid / epsilon) % 1.0), float)
    L = (np.diag(a[:-1] + a[1:]) - np.diag(a[1:-1], 1) - np.diag(a[1:-1], -1)) / h ** 2
    return L, x


def hat_basis(x, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Hat functions at ``N`` interior coarse nodes ``J / (N + 1)`` sampled at ``x``."""
    H = 1.0 / (N + 1)
    X = H * np.arange(1, N + 1)
    B = np.maximum(0.0, 1.0 - np.abs(np.subtract.outer(np.asarray(x, float), X)) / H)
    return B, X


@dataclass
class DecayProfile:
    distances: np.ndarray
    magnitudes: np.ndarray
    slope: float
    intercept: float
    correlation: float
    residual: float


def decay_profile(coarse: CoarseProblem, positions, floor: float = 1e-13) -> DecayProfile:
    """Band magnitudes ``max |Lbar_ij|`` by coarse-grid distance and a log-linear fit.

    Entries below ``floor * m(0)`` are treated as rounding noise and excluded.
    """
    X = np.asarray(positions, float)
    if X.size != coarse.matrix.shape[0]:
        raise ProfileError("one position per coarse degree of freedom is required")
    spacing = np.min(np.diff(np.sort(X))) if X.size > 1 else 1.0
    dist = np.rint(np.abs(np.subtract.outer(X, X)) / spacing).astype(int)
    ds = np.unique(dist)
    if ds.size < 4:
        raise ProfileError("fewer than 4 distinct distances")
    mags = np.array([np.abs(coarse.matrix[dist == d]).max() for d in ds])
    keep = mags > floor * mags[0]
    slope = intercept = corr = resid = float("nan")
    if keep.sum() >= 3:
        dk, lm = ds[keep].astype(float), np.log(mags[keep])
        slope, intercept = np.polyfit(dk, lm, 1)
        corr = float(np.corrcoef(dk, lm)[0, 1])
        resid = float(np.linalg.norm(lm - (slope * dk + intercept)))
    return DecayProfile(ds, mags, float(slope), float(intercept), corr, resid)
