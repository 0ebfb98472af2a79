"""Memory effects in the weak limit of oscillatory decay ``u' + a(x/eps) u = 0``.

The weak limit is ``v * sum_i w_i exp(-lambda_i t)`` for the value
distribution ``{w_i @ lambda_i}`` of ``a``. Its evolution equation

    u' + b u + int_0^t K(t-s) u(s) ds = 0

is obtained from a Mori reduction of the diagonal system
``x_i' = -lambda_i x_i`` observed through the weighted mean. With this
sign convention ``b = -G`` and ``K`` coincides with the Mori kernel
``Gamma`` (both enter with a minus sign on the right-hand side).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import (
    AtomicMeasure,
    ConfigurationError,
    DomainError,
    HomlabError,
    TimeKernel,
    fit_order,
    trapezoid_linear_solve,
    volterra_solve,
)
from .mori_zwanzig import LinearSystem, MoriProjection, mori_reduce


class StabilityError(HomlabError, ValueError):
    pass


TARTAR = AtomicMeasure.from_pairs([(0.5, 1.0), (0.5, 2.0)])


@dataclass(frozen=True)
class MemoryEquation:
    """``u' + b u + int_0^t K(t-s) u(s) ds = 0``."""

    b: float
    kernel: TimeKernel

    @property
    def rates(self) -> np.ndarray:
        return self.kernel.rates

    @property
    def weights(self) -> np.ndarray:
        return self.kernel.weights

    def as_mori(self) -> tuple[float, TimeKernel]:
        """``(G, Gamma)`` for ``u' = G u - int Gamma u``."""
        return -self.b, self.kernel

    def solve(self, v, T: float, dt: float) -> np.ndarray:
        return volterra_solve(-self.b, self.kernel, None, v, T, dt)


def weak_limit_solution(measure: AtomicMeasure, v, t) -> np.ndarray:
    """``v * sum_i w_i exp(-lambda_i t)``; shape ``v.shape + t.shape``."""
    if measure.weights.size == 0:
        raise DomainError("empty measure")
    if np.any(measure.values <= 0):
        raise DomainError("decay rates must be positive")
    t = np.asarray(t, float)
    decay = np.exp(-np.multiply.outer(t, measure.values)) @ measure.weights
    return np.multiply.outer(np.asarray(v, float), decay)


def memory_equation_from_measure(measure: AtomicMeasure, T: float = 5.0,
                                 dt: float = 1e-3) -> MemoryEquation:
    """Coefficient ``b`` and exponential kernel ``K`` reproducing the weak limit.

    Equal atoms are merged first; ``n`` distinct atoms give ``n - 1`` modes.
    """
    meas = measure.merged()
    if np.any(meas.values <= 0):
        raise DomainError("decay rates must be positive")
    system = LinearSystem(np.diag(-meas.values))
    proj = MoriProjection(np.ones(meas.values.size), meas.weights)
    if meas.values.size == 1:
        nt = int(round(T / dt)) + 1
        return MemoryEquation(float(meas.values[0]),
                              TimeKernel(dt, np.zeros(nt), np.zeros(0), np.zeros(0)))
    reduced = mori_reduce(system, proj, T, dt)
    G, gamma = reduced.G, reduced.kernel
    return MemoryEquation(-G, gamma)


def measure_from_profile(profile) -> AtomicMeasure:
    """Lebesgue value distribution of a periodic profile over one period."""
    return AtomicMeasure.from_profile(profile)


def localized_matrix(eq: MemoryEquation) -> np.ndarray:
    """Generator of ``(u, v_1..v_m)`` with ``v_j = int exp(rho_j (t-s)) u(s) ds``.

    ``u' = -b u - sum_j w_j v_j`` and ``v_j' = u + rho_j v_j``; for the
    two-atom example this is exactly the 2x2 system with entries
    ``[[-3/2, 1/4], [1, -3/2]]``.
    """
    m = eq.kernel.n_modes
    A = np.zeros((m + 1, m + 1), dtype=np.result_type(eq.rates, eq.weights, float))
    A[0, 0] = -eq.b
    A[0, 1:] = -eq.weights
    A[1:, 0] = 1.0
    A[1:, 1:] = np.diag(eq.rates)
    return A


def localized_system_solve(v, T: float, dt: float,
                           eq: Optional[MemoryEquation] = None) -> tuple[np.ndarray, np.ndarray]:
    """Trapezoidal integration of the augmented local system.

    Returns ``(u, aux)`` with ``u`` of shape ``(nt, *v.shape)`` and ``aux``
    of shape ``(nt, m, *v.shape)``; ``aux(0) = 0``. Defaults to the
    two-atom ``{1/2 @ 1, 1/2 @ 2}`` equation.
    """
    if not dt > 0:
        raise ConfigurationError("dt must be positive")
    eq = memory_equation_from_measure(TARTAR, T, dt) if eq is None else eq
    A = localized_matrix(eq)
    v = np.asarray(v, float)
    x0 = np.zeros((A.shape[0],) + v.shape, dtype=A.dtype)
    x0[0] = v
    X = trapezoid_linear_solve(A, x0, T, dt)
    X = np.real(X)
    return X[:, 0], X[:, 1:]


@dataclass
class AveragingStudy:
    epsilons: np.ndarray
    errors: np.ndarray
    fast_errors_in_layer: np.ndarray
    fast_errors_after_layer: np.ndarray
    order: float
    times: np.ndarray


def fast_system_matrix(epsilon: float) -> np.ndarray:
    return np.array([[-1.5, 0.25], [1.0 / epsilon, -1.5 / epsilon]])


def averaging_limit_study(epsilons: Sequence[float], v: float, T: float, dt: float,
                          layer_width: float = 10.0) -> AveragingStudy:
    """Compare the stiff two-variable system with its enslaved limit.

    With the fast variable slaved to ``(2/3) u`` the slow equation becomes
    ``u' = -(4/3) u``. Errors are max-over-grid; fast-variable errors are
    split at ``t = layer_width * eps`` to locate the initial layer.
    """
    eps = np.asarray(epsilons, float)
    if np.any(eps <= 0):
        raise ConfigurationError("epsilons must be positive")
    if dt > eps.min() / 10 * (1 + 1e-12):
        raise StabilityError(f"dt={dt} does not resolve eps={eps.min()} (need dt <= eps/10)")
    nt = int(round(T / dt)) + 1
    t = dt * np.arange(nt)
    u_avg = v * np.exp(-4.0 * t / 3.0)
    v_avg = (2.0 / 3.0) * u_avg
    errs, in_layer, after = [], [], []
    for e in eps:
        X = trapezoid_linear_solve(fast_system_matrix(e), np.array([v, 0.0]), T, dt)
        errs.append(np.abs(X[:, 0] - u_avg).max())
        fe = np.abs(X[:, 1] - v_avg)
        mask = t <= layer_width * e
        in_layer.append(fe[mask].max())
        after.append(fe[~mask].max() if np.any(~mask) else 0.0)
    errs = np.array(errs)
    order = fit_order(eps, errs) if np.all(errs > 0) else float("nan")
    return AveragingStudy(eps, errs, np.array(in_layer), np.array(after), order, t)


def best_single_exponential(measure: AtomicMeasure, t) -> tuple[float, float]:
    """Best ``exp(-b t)`` fit (least squares over b) to the weak limit; returns ``(b, rel. residual)``."""
    from scipy.optimize import minimize_scalar

    t = np.asarray(t, float)
    target = weak_limit_solution(measure, 1.0, t)

    def resid(b):
        return np.linalg.norm(np.exp(-b * t) - target)

    lo, hi = float(measure.values.min()), float(measure.values.max())
    res = minimize_scalar(resid, bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-12})
    return float(res.x), float(res.fun / np.linalg.norm(target))
