"""Bloch bands of ``-(a(x) u')'`` on the unit cell and wave-propagation surrogates.

Convention: Bloch waves are ``psi = exp(i k x) phi(x)`` with ``phi`` 1-periodic
and the Brillouin zone is ``(-pi, pi)``. Fourier transforms use
``fhat(k) = int f(s) exp(-i k s) ds``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.linalg as sla
from scipy.interpolate import CubicSpline

from .core import (
    ConfigurationError,
    DiscreteKernel,
    DomainError,
    EllipticityError,
    HomlabError,
    PeriodicProfile,
    fit_order,
)
from .classical import effective_coefficient_1d


class DiscretizationError(HomlabError, ValueError):
    pass


class RangeError(HomlabError, ValueError):
    pass


class StabilityError(HomlabError, ValueError):
    pass


class BandLimitError(HomlabError, ValueError):
    pass


ZONE_EDGE = np.pi


def _check_positive(profile: PeriodicProfile) -> None:
    if profile.bounds[0] <= 0:
        raise EllipticityError(f"coefficient must be positive (min {profile.bounds[0]})")


def _midpoint_coefficients(profile: PeriodicProfile, n: int) -> np.ndarray:
    return np.asarray(profile((np.arange(n) + 0.5) / n), float)


def bloch_matrix(profile: PeriodicProfile, k: float, n: int) -> np.ndarray:
    """Flux-form finite differences with the quasi-periodic wrap ``psi_{j+n} = e^{ik} psi_j``.

    Unitarily equivalent to the shifted operator acting on periodic ``phi``.
    """
    if n < 4:
        raise DiscretizationError("cell mesh needs at least 4 nodes")
    h = 1.0 / n
    am = _midpoint_coefficients(profile, n)  # a_{j+1/2}
    H = np.zeros((n, n), dtype=complex)
    idx = np.arange(n)
    H[idx, idx] = (am + np.roll(am, 1)) / h ** 2
    H[idx[:-1], idx[:-1] + 1] = -am[:-1] / h ** 2
    H[idx[1:], idx[1:] - 1] = -am[:-1] / h ** 2
    H[n - 1, 0] = -am[-1] * np.exp(1j * k) / h ** 2
    H[0, n - 1] = -am[-1] * np.exp(-1j * k) / h ** 2
    return H


def _bands_on_mesh(profile, k, n_modes, n):
    lam = np.empty((k.size, n_modes))
    phi = np.empty((k.size, n), dtype=complex)
    x = np.arange(n) / n
    for i, kk in enumerate(k):
        H = bloch_matrix(profile, kk, n)
        herm = np.abs(H - H.conj().T).max()
        if herm > 1e-12 * np.abs(H).max():
            raise DiscretizationError(f"non-Hermitian residual {herm:.3e}")
        w, v = sla.eigh(H, subset_by_index=[0, n_modes - 1])
        lam[i] = w
        p = v[:, 0] * np.exp(-1j * kk * x)
        p = p / p[np.argmax(np.abs(p))] * np.abs(p).max()
        phi[i] = p / np.sqrt(np.mean(np.abs(p) ** 2))
    return lam, phi


@dataclass
class BlochSpectrum:
    """Lowest bands ``lambda_m(k)`` on a wavenumber grid inside the zone."""

    k: np.ndarray
    eigenvalues: np.ndarray
    phi0: np.ndarray
    n_cell: int
    extrapolated: bool

    @property
    def lambda0(self) -> np.ndarray:
        return self.eigenvalues[:, 0]

    def small_k_slope(self) -> float:
        """``lambda_0(k) / k^2`` at the smallest nonzero grid wavenumber."""
        ak = np.abs(self.k)
        i = np.argmin(np.where(ak > 0, ak, np.inf))
        return float(self.lambda0[i] / self.k[i] ** 2)

    def gap(self, k: float = ZONE_EDGE) -> float:
        i = np.argmin(np.abs(np.abs(self.k) - k))
        return float(self.eigenvalues[i, 1] - self.eigenvalues[i, 0])


def bloch_bands(profile: PeriodicProfile, k, n_modes: int = 3, n_cell: int = 256,
                extrapolate: bool = True) -> BlochSpectrum:
    """Lowest ``n_modes`` Bloch eigenvalues at each ``k``.

    With ``extrapolate`` the result combines meshes ``n_cell`` and
    ``n_cell / 2`` to cancel the leading ``h^2`` error.
    """
    _check_positive(profile)
    k = np.asarray(k, float)
    if np.any(np.abs(k) > ZONE_EDGE * (1 + 1e-12)):
        raise RangeError("wavenumbers must lie in the Brillouin zone [-pi, pi]")
    if n_modes < 1 or n_modes > n_cell // 2:
        raise ConfigurationError("n_modes out of range for the cell mesh")
    lam, phi = _bands_on_mesh(profile, k, n_modes, n_cell)
    if extrapolate:
        if n_cell % 2:
            raise ConfigurationError("extrapolation needs an even cell mesh")
        coarse, _ = _bands_on_mesh(profile, k, n_modes, n_cell // 2)
        lam = (4 * lam - coarse) / 3
    lam = np.sort(np.maximum(lam, 0.0), axis=1)
    return BlochSpectrum(k, lam, phi, n_cell, extrapolate)


def zone_grid(n: int = 257) -> np.ndarray:
    """``n`` equispaced wavenumbers on ``[0, pi]``."""
    return np.linspace(0.0, ZONE_EDGE, n)


def _spline(spectrum: BlochSpectrum) -> CubicSpline:
    ak = np.abs(spectrum.k)
    order = np.argsort(ak)
    ak, lam = ak[order], spectrum.lambda0[order]
    keep = np.concatenate(([True], np.diff(ak) > 0))
    return CubicSpline(ak[keep], lam[keep])


@dataclass
class RescaledSpectrum:
    """``lambda^eps(k) = eps^-2 lambda_0(eps k)`` on ``|k| <= pi / eps``."""

    spectrum: BlochSpectrum
    epsilon: float
    _spl: CubicSpline = field(init=False, repr=False)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise DomainError("epsilon must be positive")
        self._spl = _spline(self.spectrum)

    @property
    def band(self) -> float:
        return ZONE_EDGE / self.epsilon

    def __call__(self, k):
        k = np.asarray(k, float)
        q = np.abs(self.epsilon * k)
        if np.any(q > np.abs(self.spectrum.k).max() * (1 + 1e-12)):
            raise RangeError("wavenumber outside the rescaled zone")
        return self._spl(q) / self.epsilon ** 2

    def table(self) -> tuple[np.ndarray, np.ndarray]:
        k = self.spectrum.k / self.epsilon
        return k, self.spectrum.lambda0 / self.epsilon ** 2


def rescale_spectrum(spectrum: BlochSpectrum, epsilon: float, k=None):
    """Rescaled band; returns values at ``k`` or the callable when ``k`` is None."""
    r = RescaledSpectrum(spectrum, epsilon)
    return r if k is None else r(k)


# -- kernel synthesis ------------------------------------------------------


def _quintic_blend(t, g0, g1, g2):
    h0 = 1 - 10 * t ** 3 + 15 * t ** 4 - 6 * t ** 5
    h1 = t - 6 * t ** 3 + 8 * t ** 4 - 3 * t ** 5
    h2 = 0.5 * (t ** 2 - 3 * t ** 3 + 3 * t ** 4 - t ** 5)
    return g0 * h0 + g1 * h1 + g2 * h2


@dataclass
class DispersionKernel:
    """Even kernel ``gamma`` whose transform matches ``1 - lambda / amplitude``.

    The nonlocal model reads ``amplitude * int gamma(s) (u(x) - u(x+s)) ds``.
    """

    s: np.ndarray
    gamma: np.ndarray
    k_edge: float
    k_cut: float
    amplitude: float
    wavenumbers: np.ndarray
    symbol: np.ndarray
    blend: dict
    residual: float = float("nan")

    @property
    def ds(self) -> float:
        return float(self.s[1] - self.s[0])

    @property
    def integral(self) -> float:
        return float(self.ds * self.gamma.sum())

    @property
    def kernel(self) -> DiscreteKernel:
        return DiscreteKernel(self.s, self.gamma)

    def transform(self, k) -> np.ndarray:
        k = np.asarray(k, float)
        return self.ds * (np.cos(np.multiply.outer(k, self.s)) @ self.gamma)

    def dispersion(self, k) -> np.ndarray:
        """``amplitude * int gamma(s) (1 - cos ks) ds``."""
        return self.amplitude * (self.integral - self.transform(k))

    def round_trip_error(self) -> float:
        ds = self.ds
        fwd = np.real(np.fft.fft(np.fft.ifftshift(self.gamma))) * ds
        return float(np.abs(np.fft.fftshift(fwd) - self.symbol).max())

    def scaled(self, epsilon: float) -> DiscreteKernel:
        """``eps^-3 gamma(s / eps)`` on the stretched offsets."""
        return DiscreteKernel(epsilon * self.s, self.gamma / epsilon ** 3)


def _derivatives(fn, x, h):
    f0 = float(fn(x))
    fp, fm = float(fn(x + h)), float(fn(x - h))
    return f0, (fp - fm) / (2 * h), (fp - 2 * f0 + fm) / h ** 2


def kernel_from_dispersion(dispersion: Union[BlochSpectrum, Callable], k_edge: Optional[float] = None,
                           k_cut: Optional[float] = None, ds: Optional[float] = None,
                           half_width: Optional[float] = None,
                           window: tuple = (0.0, 1.0), target: float = 0.5) -> DispersionKernel:
    """Synthesize ``gamma`` from a dispersion relation ``lambda(k)``.

    ``lambda`` is used on ``|k| <= k_edge``; past that its transform is
    blended C2-smoothly to zero at ``k_cut`` (default ``2 k_edge``). When
    ``lambda(k_edge)`` falls outside ``window`` the relation is divided by
    ``amplitude = lambda(k_edge) / target``. The kernel is recovered by a
    discrete Fourier transform on an odd symmetric grid.
    """
    if isinstance(dispersion, BlochSpectrum):
        spl = _spline(dispersion)
        lam = spl
        k_edge = float(np.abs(dispersion.k).max()) if k_edge is None else k_edge
        d1, d2 = spl.derivative(1), spl.derivative(2)
        lam_edge = float(spl(k_edge))
        derivs = (lam_edge, float(d1(k_edge)), float(d2(k_edge)))
    else:
        if k_edge is None:
            raise ConfigurationError("k_edge is required for a callable dispersion")
        lam = dispersion
        derivs = _derivatives(lam, k_edge, 1e-3 * max(1.0, k_edge))
    k_cut = 2.0 * k_edge if k_cut is None else k_cut
    if not k_edge > 0 or not k_cut > k_edge:
        raise ConfigurationError(f"blend band misconfigured: k_edge={k_edge}, k_cut={k_cut}")
    lo, hi = window
    amplitude = 1.0 if lo <= derivs[0] < hi else derivs[0] / target
    ds = np.pi / (1.25 * k_cut) if ds is None else ds
    if not np.pi / ds > k_cut:
        raise ConfigurationError("displacement grid too coarse for the blend band")
    half_width = 40.0 * np.pi / k_edge if half_width is None else half_width
    N = int(np.ceil(half_width / ds))
    s = ds * np.arange(-N, N + 1)
    length = (2 * N + 1) * ds
    km = 2 * np.pi * np.arange(-N, N + 1) / length
    ak = np.abs(km)
    sym = np.zeros_like(km)
    inner = ak <= k_edge
    sym[inner] = 1.0 - np.asarray(lam(ak[inner]), float) / amplitude
    band = (ak > k_edge) & (ak < k_cut)
    width = k_cut - k_edge
    g0 = 1.0 - derivs[0] / amplitude
    g1 = -derivs[1] / amplitude * width
    g2 = -derivs[2] / amplitude * width ** 2
    sym[band] = _quintic_blend((ak[band] - k_edge) / width, g0, g1, g2)
    gamma = np.real(np.fft.fftshift(np.fft.ifft(np.fft.ifftshift(sym)))) / ds
    gamma = 0.5 * (gamma + gamma[::-1])
    gamma = gamma / (ds * gamma.sum())
    out = DispersionKernel(s, gamma, float(k_edge), float(k_cut), float(amplitude), km, sym,
                           {"kind": "quintic-hermite", "edge_value": g0, "edge_slope": derivs[1],
                            "edge_curvature": derivs[2]})
    kz = np.linspace(0.0, min(k_edge, ZONE_EDGE), 201)
    out.residual = float(np.abs(out.dispersion(kz) - np.asarray(lam(kz), float)).max())
    return out


# -- wave solvers ------------------------------------------------------------


@dataclass
class PeriodicDomain:
    """Uniform periodic grid on ``[-length/2, length/2)``."""

    length: float
    n: int

    @property
    def h(self) -> float:
        return self.length / self.n

    @property
    def x(self) -> np.ndarray:
        return -0.5 * self.length + self.h * np.arange(self.n)

    @property
    def wavenumbers(self) -> np.ndarray:
        return 2 * np.pi * np.fft.fftfreq(self.n, d=self.h)

    def l2(self, v) -> float:
        return float(np.sqrt(self.h * np.sum(np.abs(v) ** 2, axis=-1)))


def wave_domain(epsilon: float, length: float = 20.0, nodes_per_period: int = 32) -> PeriodicDomain:
    periods = length / epsilon
    if abs(periods - round(periods)) > 1e-9:
        raise ConfigurationError("domain length must hold a whole number of periods")
    if nodes_per_period < 16:
        raise ConfigurationError("need at least 16 nodes per period")
    return PeriodicDomain(float(length), int(round(periods)) * nodes_per_period)


@dataclass
class WaveSolution:
    times: np.ndarray
    x: np.ndarray
    snapshots: np.ndarray
    energy: np.ndarray

    @property
    def energy_drift(self) -> float:
        return float(np.abs(self.energy - self.energy[0]).max() / max(abs(self.energy[0]), 1e-300))


def _step_count(times, dt):
    steps = np.asarray(times, float) / dt
    if np.any(np.abs(steps - np.round(steps)) > 1e-8 * np.maximum(1, steps)):
        raise ConfigurationError("snapshot times must be multiples of dt")
    return np.round(steps).astype(int)


def default_dt(domain: PeriodicDomain, amax: float, cfl: float = 0.5) -> float:
    """Largest ``1/m`` (``m`` a multiple of 20) below ``cfl * h / sqrt(amax)``."""
    m = int(np.ceil(np.sqrt(amax) / (cfl * domain.h) / 20.0)) * 20
    return 1.0 / m


def fine_wave_solve(profile: PeriodicProfile, epsilon: float, f, times: Sequence[float],
                    domain: PeriodicDomain, dt: Optional[float] = None) -> WaveSolution:
    """Leapfrog for ``u_tt = (a(x/eps) u_x)_x`` with ``u_t(0) = 0``.

    The returned energy is the leapfrog invariant
    ``|(u^{n+1}-u^n)/dt|^2 + <A u^{n+1}, u^n>`` evaluated at each snapshot.
    """
    _check_positive(profile)
    h = domain.h
    x = domain.x
    amax = profile.bounds[1]
    dt = default_dt(domain, amax) if dt is None else dt
    if dt > h / np.sqrt(amax):
        raise StabilityError(f"CFL violated: dt={dt} > h/sqrt(max a)={h / np.sqrt(amax)}")
    am = np.asarray(profile(((x + 0.5 * h) / epsilon) % 1.0), float)  # a_{j+1/2}
    ap = am / h ** 2
    amm = np.roll(ap, 1)

    def apply(u):
        return -(ap * (np.roll(u, -1) - u) - amm * (u - np.roll(u, 1)))

    def energy(unew, uold):
        return h * (np.sum(((unew - uold) / dt) ** 2) + np.dot(apply(unew), uold))

    u0 = np.asarray(f(x) if callable(f) else f, float)
    steps = _step_count(times, dt)
    snaps = np.empty((len(steps), x.size))
    energies = np.empty(len(steps))
    uold = u0.copy()
    u = u0 - 0.5 * dt ** 2 * apply(u0)
    order = np.argsort(steps)
    n = 0
    # state: uold = u^n, u = u^{n+1}
    for i in order:
        target = steps[i]
        while n < target:
            unew = 2 * u - uold - dt ** 2 * apply(u)
            uold, u = u, unew
            n += 1
        snaps[i] = uold
        energies[i] = energy(u, uold)
    return WaveSolution(np.asarray(times, float), x, snaps, energies)


def surrogate_wave_solve(source: Union[Callable, float], f, times: Sequence[float],
                         domain: PeriodicDomain, band: Optional[float] = None) -> WaveSolution:
    """Spectral propagator ``uhat(k, t) = fhat(k) cos(t sqrt(lambda(k)))``.

    ``source`` is a dispersion callable (``RescaledSpectrum``) or an
    effective coefficient for ``lambda = abar k^2``. Modes with
    ``|k| >= band`` must carry relative L2 mass below 1e-8.
    """
    x = domain.x
    u0 = np.asarray(f(x) if callable(f) else f, float)
    fhat = np.fft.fft(u0)
    k = domain.wavenumbers
    if band is None and isinstance(source, RescaledSpectrum):
        band = source.band
    inside = np.ones(k.size, bool) if band is None else np.abs(k) < band
    total = np.sum(np.abs(fhat) ** 2)
    outside = np.sum(np.abs(fhat[~inside]) ** 2)
    if total > 0 and outside > 1e-16 * total:
        raise BandLimitError(f"relative mass {np.sqrt(outside / total):.3e} outside |k| < {band}")
    lam = np.zeros(k.size)
    if callable(source):
        lam[inside] = source(k[inside])
    else:
        lam[inside] = float(source) * k[inside] ** 2
    omega = np.sqrt(np.maximum(lam, 0.0))
    fhat = np.where(inside, fhat, 0.0)
    t = np.asarray(times, float)
    phase = np.cos(np.multiply.outer(t, omega))
    snaps = np.real(np.fft.ifft(fhat * phase, axis=-1))
    vel = -fhat * omega * np.sin(np.multiply.outer(t, omega))
    energy = (np.sum(np.abs(vel) ** 2, axis=-1) + np.sum(lam * np.abs(fhat * phase) ** 2, axis=-1)) / k.size
    return WaveSolution(t, x, snaps, energy)


def gaussian_pulse(width: float = 0.5) -> Callable:
    return lambda x: np.exp(-0.5 * (np.asarray(x) / width) ** 2)


@dataclass
class ComparisonTable:
    times: np.ndarray
    local_errors: np.ndarray
    nonlocal_errors: np.ndarray
    fine_norms: np.ndarray
    epsilons: Optional[np.ndarray] = None
    sweep_errors: Optional[np.ndarray] = None
    sweep_order: float = float("nan")


def _spectrum_for(profile, n_k=257, n_cell=256):
    return bloch_bands(profile, zone_grid(n_k), n_modes=1, n_cell=n_cell)


def model_comparison(profile: PeriodicProfile, epsilon: float, f, times: Sequence[float],
                     length: float = 20.0, nodes_per_period: int = 32,
                     sweep_epsilons: Optional[Sequence[float]] = None,
                     sweep_time: Optional[float] = None,
                     spectrum: Optional[BlochSpectrum] = None) -> ComparisonTable:
    """L2 errors of the local and nonlocal surrogates against the fine solution."""
    spectrum = _spectrum_for(profile) if spectrum is None else spectrum
    abar = effective_coefficient_1d(profile)

    def errors(eps, ts):
        dom = wave_domain(eps, length, nodes_per_period)
        fine = fine_wave_solve(profile, eps, f, ts, dom)
        loc = surrogate_wave_solve(abar, f, ts, dom, band=ZONE_EDGE / eps)
        nl = surrogate_wave_solve(RescaledSpectrum(spectrum, eps), f, ts, dom)
        return (np.array([dom.l2(a - b) for a, b in zip(loc.snapshots, fine.snapshots)]),
                np.array([dom.l2(a - b) for a, b in zip(nl.snapshots, fine.snapshots)]),
                np.array([dom.l2(a) for a in fine.snapshots]))

    loc, nl, norms = errors(epsilon, times)
    table = ComparisonTable(np.asarray(times, float), loc, nl, norms)
    if sweep_epsilons is not None:
        T = max(times) if sweep_time is None else sweep_time
        eps = np.asarray(sweep_epsilons, float)
        sweep = np.array([errors(e, [T])[1][0] for e in eps])
        table.epsilons, table.sweep_errors = eps, sweep
        table.sweep_order = fit_order(eps, sweep)
    return table
