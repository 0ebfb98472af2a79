"""Coarse-graining of a periodic chain with nearest and next-nearest springs.

The fine equation is ``L u = f`` with the stencil
``[-K2, -K1, 2(K1+K2), -K1, -K2] / eps^2``. Keeping every ``M``-th atom and
eliminating the rest gives the circulant coarse operator
``sum_y' theta(y - y') u(y') = fbar(y)`` on the grid ``y = n H``,
``H = M eps``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import ConfigurationError, DiscreteKernel, HomlabError


class ModelError(HomlabError, ValueError):
    pass


NOISE_FLOOR = 1e-13


@dataclass(frozen=True)
class LatticeModel:
    K1: float
    K2: float
    N: int
    epsilon: float = 1.0

    def __post_init__(self):
        if not (self.K1 > 0 and self.K1 + 4 * self.K2 > 0):
            raise ModelError(f"phonon stability violated: K1={self.K1}, K2={self.K2}")
        if self.N < 5:
            raise ModelError("chain needs at least 5 atoms")
        if not self.epsilon > 0:
            raise ModelError("lattice spacing must be positive")

    @property
    def stiffness(self) -> float:
        """``K1 + 4 K2``, the long-wave elastic modulus."""
        return self.K1 + 4 * self.K2

    def symbol(self, q) -> np.ndarray:
        q = np.asarray(q, float)
        return (2 * self.K1 * (1 - np.cos(q)) + 2 * self.K2 * (1 - np.cos(2 * q))) / self.epsilon ** 2


def assemble_lattice(model: LatticeModel) -> sp.csr_matrix:
    """Periodic circulant operator as a sparse matrix."""
    N, e2 = model.N, model.epsilon ** 2
    diags = {0: 2 * (model.K1 + model.K2) / e2, 1: -model.K1 / e2, 2: -model.K2 / e2}
    L = sp.lil_matrix((N, N))
    idx = np.arange(N)
    for off, val in diags.items():
        if val == 0:
            continue
        if off == 0:
            L[idx, idx] = val
        else:
            L[idx, (idx + off) % N] = val
            L[idx, (idx - off) % N] = val
    return L.tocsr()


@dataclass
class CoarseKernel:
    """Circulant coarse kernel ``theta(n H)`` for ``|n| < Nc / 2``."""

    n: np.ndarray
    theta: np.ndarray
    M: int
    model: LatticeModel
    column: np.ndarray  # full circulant column, length Nc
    load_map: object = field(repr=False, default=None)

    @property
    def H(self) -> float:
        return self.M * self.model.epsilon

    @property
    def y(self) -> np.ndarray:
        return self.n * self.H

    @property
    def kernel(self) -> DiscreteKernel:
        return DiscreteKernel(self.y, 0.5 * (self.theta + self.theta[::-1]))

    def at(self, n: int) -> float:
        return float(self.column[n % self.column.size])

    def coarse_operator(self) -> sp.csr_matrix:
        Nc = self.column.size
        rows = np.repeat(np.arange(Nc), Nc)
        cols = np.tile(np.arange(Nc), Nc)
        vals = self.column[(rows - cols) % Nc]
        keep = vals != 0
        return sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(Nc, Nc))


def coarse_grain(model: LatticeModel, M: int) -> CoarseKernel:
    """Schur complement onto the atoms ``0, M, 2M, ...``.

    Only one column is formed; translation invariance makes the coarse
    operator circulant. The returned ``load_map(f)`` gives ``fbar``.
    """
    if M < 1 or model.N % M:
        raise ConfigurationError(f"M={M} must divide N={model.N}")
    Nc = model.N // M
    if Nc < 8:
        raise ConfigurationError("need at least 8 coarse atoms")
    L = assemble_lattice(model)
    rep = np.arange(0, model.N, M)
    if M == 1:
        col = L[:, [0]].toarray()[:, 0]
        return _kernel_from_column(col, M, model, lambda f: np.asarray(f, float).copy())
    elim = np.setdiff1d(np.arange(model.N), rep)
    Lee = L[elim][:, elim].tocsc()
    Ler = L[elim][:, rep].tocsc()
    Lre = L[rep][:, elim].tocsr()
    lu = spla.splu(Lee)
    if not np.all(np.isfinite(lu.U.diagonal())) or np.abs(lu.U.diagonal()).min() == 0:
        raise HomlabError("eliminated block is singular")
    col = L[rep][:, [0]].toarray()[:, 0] - Lre @ lu.solve(Ler[:, [0]].toarray()[:, 0])

    def load_map(f):
        f = np.asarray(f, float)
        return f[rep] - Lre @ lu.solve(f[elim])

    return _kernel_from_column(col, M, model, load_map)


def _kernel_from_column(col, M, model, load_map) -> CoarseKernel:
    Nc = col.size
    half = (Nc - 1) // 2
    n = np.arange(-half, half + 1)
    theta = col[n % Nc]
    return CoarseKernel(n, theta, M, model, col, load_map)


@dataclass
class KernelDiagnostics:
    evenness: float
    zero_sum: float
    sign_pattern: bool | None
    resolved: int
    moment: float
    moment_target: float
    moment_residual: float
    decay_slope: float
    decay_correlation: float
    superalgebraic: dict

    def as_dict(self) -> dict:
        return {k: (float(v) if isinstance(v, (np.floating, float)) else v)
                for k, v in self.__dict__.items()}


def kernel_diagnostics(kernel: CoarseKernel, floor: float = NOISE_FLOOR) -> KernelDiagnostics:
    """Structural checks on a coarse kernel (all relative to ``theta(0)``).

    ``resolved`` is the largest ``n`` with every ``|theta(j H)|`` above
    ``floor * theta(0)`` for ``1 <= j <= n``.
    """
    theta, n = kernel.theta, kernel.n
    t0 = kernel.at(0)
    even = float(np.abs(theta - theta[::-1]).max() / abs(t0))
    zsum = float(abs(kernel.column.sum()) / abs(t0))
    pos = theta[n > 0]
    above = np.abs(pos) > floor * abs(t0)
    resolved = int(np.argmin(above)) if not above.all() else pos.size
    sign = None
    if kernel.model.K2 > 0:
        sign = bool(t0 > 0 and np.all(pos[:resolved] < 0))
    y = kernel.y
    moment = float(-np.sum(theta * y ** 2))
    target = 2 * kernel.M * kernel.model.stiffness
    slope = corr = float("nan")
    wit = {}
    if resolved >= 3:
        j = np.arange(1, resolved + 1, dtype=float)
        lg = np.log(np.abs(pos[:resolved]))
        slope = float(np.polyfit(j, lg, 1)[0])
        corr = float(abs(np.corrcoef(j, lg)[0, 1]))
        for p in (2, 4, 8):
            w = j ** p * np.abs(pos[:resolved])
            dec = np.diff(w) < 0
            start = resolved - 1
            while start > 0 and dec[start - 1]:
                start -= 1
            wit[p] = {"eventually_decreasing": bool(dec[-1]), "from_n": int(start + 1)}
    return KernelDiagnostics(even, zsum, sign, resolved, moment, target,
                             abs(moment - target) / abs(target), slope, corr, wit)


@dataclass
class RescalingReport:
    xi: np.ndarray
    curves: dict
    differences: np.ndarray
    limit: np.ndarray
    theta0: dict
    theta0_moments: dict


def coarse_symbol(kernel: CoarseKernel, xi) -> np.ndarray:
    """``sum_n theta(n H) cos(n xi)`` on coarse wavenumbers ``xi``."""
    xi = np.asarray(xi, float)
    return np.cos(np.multiply.outer(xi, kernel.n)) @ kernel.theta


def rescaling_convergence(model: LatticeModel, Ms: Sequence[int], n_xi: int = 201) -> RescalingReport:
    """``M * thetahat(xi)`` for each ``M`` and sup differences between successive ``M``.

    The limit curve is ``2 (K1 + 4 K2) (1 - cos xi) / eps^2``. ``theta0``
    holds the samples ``M theta(n H)`` at ``x = n eps``.
    """
    Ms = list(Ms)
    for M in Ms:
        if model.N % M:
            raise ConfigurationError(f"M={M} does not divide N={model.N}")
    if model.N // max(Ms) < 32:
        raise ConfigurationError("largest M must leave at least 32 coarse atoms")
    xi = np.linspace(0.0, np.pi, n_xi)
    curves, theta0, mom = {}, {}, {}
    for M in Ms:
        ker = coarse_grain(model, M)
        curves[M] = M * coarse_symbol(ker, xi)
        theta0[M] = (ker.n * model.epsilon, M * ker.theta)
        mom[M] = float(-np.sum(theta0[M][1] * theta0[M][0] ** 2))
    diffs = np.array([np.abs(curves[b] - curves[a]).max() for a, b in zip(Ms[:-1], Ms[1:])])
    limit = 2 * model.stiffness * (1 - np.cos(xi)) / model.epsilon ** 2
    return RescalingReport(xi, curves, diffs, limit, theta0, mom)
