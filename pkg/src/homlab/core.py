"""Shared numerical substrate.

Periodic coefficient profiles, grids, discrete kernels, time kernels,
atomic measures, cell averages, the Volterra integro-differential stepper
and small CSV helpers used by every other module.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np


class HomlabError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(HomlabError, ValueError):
    pass


class ConfigurationError(HomlabError, ValueError):
    pass


class EllipticityError(DomainError):
    pass


# --------------------------------------------------------------------------
# periodic profiles
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PeriodicProfile:
    """A 1-periodic scalar coefficient ``a(y)``.

    Two representations are supported:

    * ``kind="piecewise"``: ``breakpoints`` strictly increasing in ``[0, 1)``
      and one value per breakpoint; value ``i`` holds on
      ``[breakpoints[i], breakpoints[i+1])`` and the last value wraps around
      to ``breakpoints[0] + 1``.
    * ``kind="sampled"``: ``values`` are uniform cell samples, sample ``j``
      holding on ``[j/n, (j+1)/n)`` (cell-centre sampling).
    """

    kind: str
    values: np.ndarray
    breakpoints: Optional[np.ndarray] = None
    bounds: tuple = field(init=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if values.ndim != 1 or values.size == 0:
            raise DomainError("profile values must be a non-empty 1-d array")
        if not np.all(np.isfinite(values)):
            raise DomainError("profile values must be finite")
        if self.kind == "piecewise":
            bp = np.asarray(self.breakpoints, dtype=float).copy()
            if bp.shape != values.shape:
                raise DomainError("need exactly one value per breakpoint")
            if np.any(bp < 0.0) or np.any(bp >= 1.0):
                raise DomainError("breakpoints must lie in [0, 1)")
            if np.any(np.diff(bp) <= 0.0):
                raise DomainError("breakpoints must be strictly increasing")
            bp.setflags(write=False)
            object.__setattr__(self, "breakpoints", bp)
        elif self.kind == "sampled":
            if self.breakpoints is not None:
                raise DomainError("sampled profiles take no breakpoints")
        else:
            raise DomainError(f"unknown profile kind {self.kind!r}")
        object.__setattr__(self, "bounds", (float(values.min()), float(values.max())))

    # constructors -------------------------------------------------------

    @classmethod
    def constant(cls, c: float) -> "PeriodicProfile":
        return cls("piecewise", np.array([c]), np.array([0.0]))

    @classmethod
    def piecewise(cls, breakpoints, values) -> "PeriodicProfile":
        return cls("piecewise", np.asarray(values, float), np.asarray(breakpoints, float))

    @classmethod
    def two_valued(cls, first: float, second: float, fraction: float = 0.5) -> "PeriodicProfile":
        """``first`` on ``[0, fraction)`` and ``second`` on ``[fraction, 1)``."""
        if not 0.0 < fraction < 1.0:
            raise DomainError("fraction must lie in (0, 1)")
        return cls.piecewise([0.0, fraction], [first, second])

    @classmethod
    def sampled(cls, samples) -> "PeriodicProfile":
        return cls("sampled", np.asarray(samples, float))

    @classmethod
    def from_function(cls, fn: Callable, n: int) -> "PeriodicProfile":
        """Sample ``fn`` at the ``n`` cell centres of one period."""
        y = (np.arange(n) + 0.5) / n
        return cls.sampled(np.asarray(fn(y), dtype=float))

    # evaluation ----------------------------------------------------------

    def segments(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(starts, lengths, values)`` of the constant pieces on one period."""
        if self.kind == "sampled":
            n = self.values.size
            starts = np.arange(n) / n
            return starts, np.full(n, 1.0 / n), self.values
        bp = self.breakpoints
        lengths = np.diff(np.append(bp, bp[0] + 1.0))
        return bp, lengths, self.values

    def jumps(self) -> np.ndarray:
        """Positions in ``[0, 1)`` where the profile may be discontinuous."""
        if self.kind == "sampled":
            return np.arange(self.values.size) / self.values.size
        return np.array(self.breakpoints)

    def __call__(self, y):
        y = np.mod(np.asarray(y, dtype=float), 1.0)
        if self.kind == "sampled":
            n = self.values.size
            idx = np.minimum((y * n).astype(int), n - 1)
            return self.values[idx]
        idx = np.searchsorted(self.breakpoints, y, side="right") - 1
        # idx == -1 means y precedes the first breakpoint: wrapped last piece
        return self.values[idx]

    @property
    def is_constant(self) -> bool:
        return self.bounds[0] == self.bounds[1]

    # serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        if self.kind == "sampled":
            return {"type": "sampled", "samples": self.values.tolist()}
        return {
            "type": "piecewise",
            "breakpoints": self.breakpoints.tolist(),
            "values": self.values.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PeriodicProfile":
        data = dict(data)
        kind = data.pop("type", None)
        if kind == "piecewise":
            allowed = {"breakpoints", "values"}
        elif kind == "sampled":
            allowed = {"samples"}
        else:
            raise ConfigurationError(f"unknown profile type {kind!r}")
        extra = set(data) - allowed
        if extra:
            raise ConfigurationError(f"unknown profile key {sorted(extra)[0]!r}")
        if kind == "piecewise":
            return cls.piecewise(data["breakpoints"], data["values"])
        return cls.sampled(data["samples"])


def periodic_average(profile: PeriodicProfile, transform: Optional[Callable] = None,
                     nq: Optional[int] = None) -> float:
    """Cell average ``<transform(a)>`` over one period.

    Piecewise-constant profiles are integrated exactly as a length-weighted
    sum. ``nq`` switches to a composite midpoint rule with ``nq`` points
    per period (useful only to cross-check the exact sum).
    """
    if nq is None:
        _, lengths, values = profile.segments()
        tv = _apply(transform, values)
        return float(np.dot(lengths, tv))
    y = (np.arange(nq) + 0.5) / nq
    tv = _apply(transform, profile(y))
    return float(tv.mean())


def _apply(transform, values):
    if transform is None:
        return np.asarray(values, float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = np.asarray(transform(values), dtype=float)
    bad = ~np.isfinite(out)
    if np.any(bad):
        raise DomainError(
            f"transform is not finite at profile value {float(np.asarray(values)[bad][0])!r}")
    return out


def inverse(x):
    return 1.0 / x


# --------------------------------------------------------------------------
# grids and kernels
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class UniformGrid:
    """Uniform nodes on ``[a, b]``.

    With ``endpoint=True`` the ``n`` nodes include both ends and
    ``h = (b - a)/(n - 1)``; otherwise ``h = (b - a)/n`` (periodic grids).
    """

    a: float
    b: float
    n: int
    endpoint: bool = True

    def __post_init__(self):
        if self.n < 2 or not self.b > self.a:
            raise ConfigurationError("grid needs n >= 2 and b > a")

    @property
    def h(self) -> float:
        return (self.b - self.a) / (self.n - 1 if self.endpoint else self.n)

    @property
    def nodes(self) -> np.ndarray:
        return self.a + self.h * np.arange(self.n)


@dataclass(frozen=True)
class DiscreteKernel:
    """Even real kernel sampled at symmetric offsets."""

    offsets: np.ndarray
    values: np.ndarray
    drop_tol: float = 0.0

    def __post_init__(self):
        off = np.asarray(self.offsets, dtype=float)
        val = np.asarray(self.values, dtype=float)
        if off.shape != val.shape or off.ndim != 1:
            raise DomainError("offsets and values must be matching 1-d arrays")
        order = np.argsort(off, kind="stable")
        off, val = off[order], val[order]
        if not np.allclose(off, -off[::-1], rtol=0.0, atol=1e-12 * max(1.0, np.abs(off).max())):
            raise DomainError("kernel offsets must be symmetric about zero")
        scale = np.abs(val).max() if val.size else 0.0
        asym = np.abs(val - val[::-1]).max() if val.size else 0.0
        if asym > 1e-14 * scale:
            raise DomainError(f"kernel is not even (asymmetry {asym:.3e})")
        off.setflags(write=False)
        val.setflags(write=False)
        object.__setattr__(self, "offsets", off)
        object.__setattr__(self, "values", val)

    @property
    def horizon(self) -> float:
        keep = np.abs(self.values) > self.drop_tol
        return float(np.abs(self.offsets[keep]).max()) if np.any(keep) else 0.0

    def value_at(self, s):
        """Value at offsets ``s`` (must be grid offsets)."""
        s = np.atleast_1d(np.asarray(s, float))
        idx = np.searchsorted(self.offsets, s)
        idx = np.clip(idx, 0, self.offsets.size - 1)
        if not np.allclose(self.offsets[idx], s):
            raise DomainError("requested offset not on the kernel grid")
        return self.values[idx]


@dataclass(frozen=True)
class TimeKernel:
    """Memory kernel sampled on ``t_n = n*dt``, ``n = 0..nt-1``.

    ``values`` has shape ``(nt,)`` or ``(nt, m, m)``. Optional exponential
    modes describe a scalar kernel as ``sum(weights * exp(rates * t))``.
    """

    dt: float
    values: np.ndarray
    rates: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    fit_residual: float = 0.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        vals = np.asarray(self.values)
        vals = vals.real.astype(float) if np.iscomplexobj(vals) else vals.astype(float)
        object.__setattr__(self, "values", vals)
        if (self.rates is None) != (self.weights is None):
            raise DomainError("rates and weights go together")
        if self.rates is not None:
            rates = np.atleast_1d(np.asarray(self.rates, dtype=complex))
            weights = np.atleast_1d(np.asarray(self.weights, dtype=complex))
            if rates.shape != weights.shape:
                raise DomainError("one weight per rate")
            if np.any(rates.real > 1e-12):
                raise DomainError("exponential rates must have nonpositive real part")
            if np.all(np.abs(rates.imag) == 0) and np.all(np.abs(weights.imag) == 0):
                rates, weights = rates.real, weights.real
            object.__setattr__(self, "rates", rates)
            object.__setattr__(self, "weights", weights)
            if vals.ndim == 1:
                mismatch = np.abs(self.reconstruct() - vals).max()
                scale = max(1.0, np.abs(vals).max())
                if mismatch > max(self.fit_residual, 1e-9) * scale * 10:
                    raise DomainError(
                        f"exponential modes do not reproduce samples ({mismatch:.3e})")

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.values.shape[0])

    @property
    def n_modes(self) -> int:
        return 0 if self.rates is None else int(np.size(self.rates))

    def reconstruct(self, t=None) -> np.ndarray:
        if self.rates is None:
            raise DomainError("kernel carries no exponential modes")
        t = self.times if t is None else np.asarray(t, float)
        out = np.exp(np.multiply.outer(t, self.rates)) @ self.weights
        return np.real(out)

    def negated(self) -> "TimeKernel":
        return TimeKernel(
            self.dt, -self.values, self.rates,
            None if self.weights is None else -self.weights, self.fit_residual)

    @classmethod
    def from_modes(cls, rates, weights, T: float, dt: float) -> "TimeKernel":
        nt = int(round(T / dt)) + 1
        t = dt * np.arange(nt)
        rates = np.atleast_1d(rates)
        weights = np.atleast_1d(weights)
        vals = np.real(np.exp(np.multiply.outer(t, rates)) @ weights) if rates.size else np.zeros(nt)
        return cls(dt, vals, rates, weights)


@dataclass(frozen=True)
class AtomicMeasure:
    """Finite probability measure ``sum_i w_i delta(value_i)``."""

    weights: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, float))
        v = np.atleast_1d(np.asarray(self.values, float))
        if w.size == 0:
            raise DomainError("measure has no atoms")
        if w.shape != v.shape:
            raise DomainError("one weight per atom")
        if np.any(w < 0):
            raise DomainError("atom weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-14:
            raise DomainError(f"atom weights sum to {w.sum()!r}, not 1")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[float, float]]) -> "AtomicMeasure":
        """Build from ``(weight, value)`` pairs."""
        w, v = zip(*pairs) if pairs else ((), ())
        return cls(np.array(w, float), np.array(v, float))

    @classmethod
    def from_profile(cls, profile: PeriodicProfile) -> "AtomicMeasure":
        """Distribution of the values of ``profile`` over one period."""
        _, lengths, values = profile.segments()
        uniq, inv = np.unique(values, return_inverse=True)
        w = np.bincount(inv, weights=lengths)
        w = w / w.sum()
        return cls(w, uniq)

    def mean(self) -> float:
        return float(self.weights @ self.values)

    def variance(self) -> float:
        return float(self.weights @ (self.values - self.mean()) ** 2)

    def merged(self) -> "AtomicMeasure":
        """Drop zero-weight atoms and merge equal values."""
        keep = self.weights > 0
        uniq, inv = np.unique(self.values[keep], return_inverse=True)
        w = np.bincount(inv, weights=self.weights[keep])
        return AtomicMeasure(w / w.sum(), uniq)


# --------------------------------------------------------------------------
# Volterra integro-differential stepper
# --------------------------------------------------------------------------


def volterra_solve(markov, kernel, forcing, u0, T: float, dt: float) -> np.ndarray:
    """Solve ``u' = markov u - int_0^t kernel(s) u(t-s) ds + forcing(t)``.

    Parameters
    ----------
    markov : float or (m, m) array
        Markovian (instantaneous) part. A scalar acts as a multiple of the
        identity on any state shape.
    kernel : TimeKernel, array or None
        Memory kernel samples at ``t_n = n*dt`` with at least ``T/dt + 1``
        entries; scalar ``(nt,)`` or matrix valued ``(nt, m, m)``.
    forcing : callable, array or None
        Either ``forcing(t)`` or samples of shape ``(nt, *state_shape)``.
    u0 : float or array
        Initial state.

    Returns
    -------
    ndarray of shape ``(nt, *state_shape)`` with ``nt = round(T/dt) + 1``.

    Notes
    -----
    Trapezoidal rule in time for both the ODE part and the convolution.
    The only implicit contribution (Markov part plus the ``s = 0`` kernel
    weight) is linear, so it is solved exactly at each step. The scheme is
    second order and A-stable for dissipative Markov parts.
    """
    if not dt > 0:
        raise ConfigurationError("dt must be positive")
    nt = int(round(T / dt)) + 1
    if abs((nt - 1) * dt - T) > 1e-9 * max(1.0, T):
        raise ConfigurationError("T must be an integer multiple of dt")

    u0 = np.asarray(u0, dtype=float)
    shape = u0.shape
    matrix_markov = np.ndim(markov) == 2
    m = np.shape(markov)[0] if matrix_markov else None

    if isinstance(kernel, TimeKernel):
        if not math.isclose(kernel.dt, dt, rel_tol=1e-12):
            raise ConfigurationError(f"kernel step {kernel.dt} differs from dt {dt}")
        kvals = kernel.values
    elif kernel is None:
        kvals = np.zeros(nt)
    else:
        kvals = np.asarray(kernel, dtype=float)
    if kvals.shape[0] < nt:
        raise ConfigurationError(
            f"kernel has {kvals.shape[0]} samples, {nt} are needed for T={T}, dt={dt}")
    kvals = kvals[:nt]
    matrix_kernel = kvals.ndim == 3
    if matrix_kernel or matrix_markov:
        m = kvals.shape[1] if matrix_kernel else m
        if shape[:1] != (m,):
            raise ConfigurationError("matrix-valued coefficients need a state of leading size m")

    if forcing is None:
        F = np.zeros((nt,) + shape)
    elif callable(forcing):
        F = np.array([np.broadcast_to(forcing(k * dt), shape) for k in range(nt)], dtype=float)
    else:
        F = np.asarray(forcing, dtype=float)
        if F.shape[0] < nt:
            raise ConfigurationError("forcing has too few samples")
        F = np.broadcast_to(F[:nt], (nt,) + shape)

    def apply(op, x, matrix):
        return np.tensordot(op, x, axes=(1, 0)) if matrix else op * x

    def conv(k_rev, hist):
        # sum_j k_rev[j] u_hist[j]
        if matrix_kernel:
            return np.einsum("jab,jb...->a...", k_rev, hist)
        return np.tensordot(k_rev, hist, axes=(0, 0))

    U = np.empty((nt,) + shape)
    U[0] = u0
    g_prev = apply(markov, u0, matrix_markov) + F[0]

    # implicit operator: I - dt/2 * markov + dt^2/4 * kernel(0)
    if matrix_kernel or matrix_markov:
        eye = np.eye(m)
        Mk = np.asarray(markov, float) if matrix_markov else markov * eye
        K0 = kvals[0] if matrix_kernel else kvals[0] * eye
        lhs = eye - 0.5 * dt * Mk + 0.25 * dt * dt * K0
        lhs_inv = np.linalg.inv(lhs)
        solve = lambda r: np.tensordot(lhs_inv, r, axes=(1, 0))
    else:
        lhs = 1.0 - 0.5 * dt * float(markov) + 0.25 * dt * dt * float(kvals[0])
        solve = lambda r: r / lhs

    for n in range(nt - 1):
        # trapezoid history at t_{n+1} excluding the implicit s=0 term
        # H = dt*( sum_{j=1}^{n} K_j u_{n+1-j} + 1/2 K_{n+1} u_0 )
        if n >= 1:
            H = dt * conv(kvals[1:n + 1], U[n:0:-1])
        else:
            H = 0.0
        H = H + 0.5 * dt * apply(kvals[n + 1], U[0], matrix_kernel)
        rhs = U[n] + 0.5 * dt * (g_prev - H + F[n + 1])
        U[n + 1] = solve(rhs)
        I_next = H + 0.5 * dt * apply(kvals[0], U[n + 1], matrix_kernel)
        g_prev = apply(markov, U[n + 1], matrix_markov) - I_next + F[n + 1]
    return U


def trapezoid_linear_solve(A, x0, T: float, dt: float) -> np.ndarray:
    """Crank-Nicolson trajectory of ``x' = A x``; returns ``(nt, *x0.shape)``."""
    A = np.asarray(A)
    x0 = np.asarray(x0)
    nt = int(round(T / dt)) + 1
    eye = np.eye(A.shape[0])
    R = np.linalg.solve(eye - 0.5 * dt * A, eye + 0.5 * dt * A)
    X = np.empty((nt,) + x0.shape, dtype=np.result_type(A, x0, float))
    X[0] = x0
    for n in range(nt - 1):
        X[n + 1] = np.tensordot(R, X[n], axes=(1, 0))
    return X


def fit_order(params, errors) -> float:
    """Least-squares slope of ``log(error)`` against ``log(param)``."""
    p = np.log(np.asarray(params, float))
    e = np.log(np.asarray(errors, float))
    return float(np.polyfit(p, e, 1)[0])


# --------------------------------------------------------------------------
# CSV output
# --------------------------------------------------------------------------


def format_number(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return "%.17g" % float(x)


def write_csv(path, header: Sequence[str], columns: Sequence) -> None:
    """Write equal-length columns with a one-line header, full precision."""
    cols = [np.atleast_1d(np.asarray(c)) for c in columns]
    n = len(cols[0]) if cols else 0
    if any(len(c) != n for c in cols):
        raise ConfigurationError("CSV columns differ in length")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(header))
        for i in range(n):
            w.writerow([format_number(c[i].item() if hasattr(c[i], "item") else c[i])
                        for c in cols])


def read_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)
