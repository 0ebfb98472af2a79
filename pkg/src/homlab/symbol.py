"""Homogenized Fourier symbol ``bbar(k) = <(a + 1 + k^2)^-1>^-1``.

The profile ``a`` must satisfy ``sup|a| = c0 < 1`` so that the resolvent
expands geometrically in powers of ``a / (1 + k^2)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Polynomial

from .core import DomainError, HomlabError, PeriodicProfile, periodic_average


class AssumptionError(HomlabError, ValueError):
    pass


class GridError(HomlabError, ValueError):
    pass


CERTIFICATE_FLOOR = 1e-8


def _sup_abs(profile: PeriodicProfile) -> float:
    lo, hi = profile.bounds
    c0 = max(abs(lo), abs(hi))
    if c0 >= 1:
        raise AssumptionError(f"sup|a| = {c0} must be < 1")
    return c0


def moments(profile: PeriodicProfile, J: int) -> np.ndarray:
    """``<a^j>`` for ``j = 0..J``."""
    return np.array([periodic_average(profile, lambda v, j=j: v ** j) for j in range(J + 1)])


@dataclass
class SymbolTable:
    k: np.ndarray
    values: np.ndarray
    c0: float
    moments: np.ndarray = field(default_factory=lambda: np.ones(1))

    def bounds_ok(self, tol: float = 1e-12) -> bool:
        base = 1 + self.k ** 2
        return bool(np.all(self.values >= base - self.c0 - tol)
                    and np.all(self.values <= base + self.c0 + tol))


def _symbol(profile: PeriodicProfile, k: np.ndarray) -> np.ndarray:
    out = np.empty(k.shape)
    for i, kk in enumerate(k.ravel()):
        out.flat[i] = 1.0 / periodic_average(profile, lambda v, s=1 + kk * kk: 1.0 / (v + s))
    return out


def homogenized_symbol(profile: PeriodicProfile, k, J: int = 8) -> SymbolTable:
    """Harmonic mean of ``a + 1 + k^2`` at each wavenumber."""
    c0 = _sup_abs(profile)
    k = np.asarray(k, float)
    return SymbolTable(k, _symbol(profile, k), c0, moments(profile, J))


def symbol_series(profile: PeriodicProfile, k: float, J: int) -> tuple[float, float]:
    """Truncated moment series for ``bbar(k)`` and a rigorous bound on its error.

    The inner series ``1 + sum_{j<=J} (-1)^j <a^j> / q^j`` with ``q = 1 + k^2``
    has tail at most ``T = r^{J+1} / (1 - r)``, ``r = c0 / q``. Inverting
    ``S / q`` perturbs the result by at most ``q T / (|S| (|S| - T))``.
    """
    if J < 1:
        raise DomainError("J must be >= 1")
    c0 = _sup_abs(profile)
    q = 1.0 + float(k) ** 2
    mom = moments(profile, J)
    j = np.arange(J + 1)
    S = float(np.sum((-1.0) ** j * mom / q ** j))
    r = c0 / q
    tail = r ** (J + 1) / (1 - r)
    bound = q * tail / (abs(S) * (abs(S) - tail)) if abs(S) > tail else np.inf
    return q / S, float(bound)


def correction_term(profile: PeriodicProfile, k) -> np.ndarray | float:
    """``bbar(k) - (1 + k^2 + <a>)``; vanishes iff the moments factorize."""
    _sup_abs(profile)
    kk = np.asarray(k, float)
    out = _symbol(profile, np.atleast_1d(kk)) - (1 + np.atleast_1d(kk) ** 2 + periodic_average(profile))
    return float(out[0]) if kk.ndim == 0 else out


@dataclass
class NonpolynomialityReport:
    degrees: np.ndarray
    residuals: np.ndarray
    relative_residuals: np.ndarray
    floor: float
    certified: bool
    note: str = "numerical evidence on a finite grid and degree range, not a proof"


def nonpolynomiality_certificate(table: SymbolTable, max_degree: int,
                                 floor: float = CERTIFICATE_FLOOR) -> NonpolynomialityReport:
    """Least-squares fits of degree ``0..max_degree`` in ``k^2``.

    ``residuals`` are root sums of squares (monotone under appended data);
    ``relative_residuals`` divide by the norm of the data. Certification
    requires every relative residual to exceed ``floor``.
    """
    x = table.k ** 2
    if np.unique(x).size <= max_degree + 1:
        raise GridError(f"need more than {max_degree + 1} distinct k^2 values")
    scale = np.linalg.norm(table.values)
    res = []
    for d in range(max_degree + 1):
        p = Polynomial.fit(x, table.values, d)
        res.append(np.linalg.norm(p(x) - table.values))
    res = np.array(res)
    rel = res / scale
    return NonpolynomialityReport(np.arange(max_degree + 1), res, rel, floor,
                                  bool(np.all(rel > floor)))
