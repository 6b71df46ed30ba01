r"""Single-particle states in momentum space and their post-selection.

Conventions
-----------
A pure state is stored as the Fourier transform of its position
wavefunction, :math:`\psi(p) = \int dx\, \psi(x) e^{-ipx}`.  It is
normalised as :math:`\int dp/(2\pi)\, |\psi(p)|^2 = 1`.  The matching
density kernel is :math:`\rho(p, p') = \psi(p)\psi^*(p')/(2\pi)`, which has
unit trace :math:`\int dp\, \rho(p, p) = 1`.

With these conventions:

* post-selection by a detector with absorption ``alpha`` keeps the weight
  :math:`P_{tot} = \int dp\, \rho(p,p)\,\alpha(p)`;
* the post-selected pure state is
  :math:`\psi_{ps} = \sqrt{\alpha}\,\psi / \sqrt{P_{tot}}`;
* a localization kernel multiplies the coherences,
  :math:`\tilde\rho = S \cdot \rho_{ps}`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Tuple

import numpy as np

from .core import (
    Dispersion,
    Grid1D,
    SampledComplex,
    adaptive_quad,
    gauss_legendre_panels,
    momentum_cutoff,
)
from .detector import Absorption, LocalizationKernel, as_localization
from .errors import InvalidParameter, NegativeDensity, ZeroDetection

POSITIVE = "positive-momentum"
FULL = "full-line"
_SERIES_WINDOW = 1e-3


def _one_minus_expi_over(u):
    """``(1 - exp(-i u)) / u`` with a Taylor expansion near ``u = 0``."""
    u = np.asarray(u, dtype=float)
    small = np.abs(u) < _SERIES_WINDOW
    safe = np.where(small, 1.0, u)
    direct = (1.0 - np.exp(-1j * safe)) / safe
    series = 1j + u / 2 - 1j * u ** 2 / 6 - u ** 3 / 24 + 1j * u ** 4 / 120
    return np.where(small, series, direct)


@dataclass(frozen=True)
class MomentumWaveFunction:
    """Pure state ``psi(p)`` together with scale hints for the numerics.

    ``p_scale`` is a characteristic momentum of the state.  ``x_extent`` is
    its size in position space, which sets how fast ``psi(p)`` oscillates.
    ``support`` says whether the amplitude is meaningful on the full line
    or only for ``p > 0``.
    """

    dispersion: Dispersion
    amplitude: Callable
    support: str = FULL
    p_scale: float = 1.0
    x_extent: float = 1.0
    label: str = "state"

    def __post_init__(self):
        if self.support not in (POSITIVE, FULL):
            raise InvalidParameter(f"unknown support {self.support!r}")
        if not (self.p_scale > 0 and self.x_extent > 0):
            raise InvalidParameter("p_scale and x_extent must be positive")

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        vals = np.asarray(self.amplitude(p), dtype=complex)
        if self.support == POSITIVE:
            vals = np.where(p > 0, vals, 0.0)
        return vals

    def momentum_density(self, p):
        """``|psi(p)|^2 / (2 pi)``, the diagonal of the density kernel."""
        return np.abs(self(p)) ** 2 / (2 * math.pi)

    def sample(self, grid: Grid1D) -> SampledComplex:
        return SampledComplex(grid, self(grid.points))

    def cutoff(self, tol: float = 1e-8) -> float:
        """Momentum beyond which at most ``tol`` of the norm lies."""
        return _cached_cutoff(self, tol)

    def norm(self, p_max: Optional[float] = None, rel_tol: float = 1e-10) -> float:
        """``int dp/(2 pi) |psi|^2`` over the working range."""
        hi = p_max if p_max is not None else self.cutoff(1e-12)
        lo = 0.0 if self.support == POSITIVE else -hi
        n0 = int(math.ceil((hi - lo) * self.x_extent / math.pi)) + 1
        res = adaptive_quad(self.momentum_density, lo, hi, rel_tol, 1e-15,
                            max_subdivisions=max(4000, 4 * n0), initial_intervals=n0)
        return float(res.value)

    def translated(self, shift: float) -> "MomentumWaveFunction":
        """State translated by ``-shift`` in position: ``psi(p) exp(i p shift)``."""
        base = self.amplitude

        def amp(p):
            p = np.asarray(p, dtype=float)
            return base(p) * np.exp(1j * p * shift)

        return replace(self, amplitude=amp, x_extent=self.x_extent + abs(shift),
                       label=f"{self.label}+shift")


_CUTOFFS: dict = {}


def _cached_cutoff(psi: MomentumWaveFunction, tol: float) -> float:
    key = (id(psi), tol)
    hit = _CUTOFFS.get(key)
    if hit is not None and hit[0] is psi:
        return hit[1]
    lower = 0.0 if psi.support == POSITIVE else None
    value = momentum_cutoff(psi.momentum_density, psi.p_scale, psi.x_extent,
                            tol=tol, lower=lower)
    _CUTOFFS[key] = (psi, value)
    return value


def box_state(a: float, n: int, dispersion: Dispersion) -> MomentumWaveFunction:
    r"""Eigenstate ``n`` of a box ``[0, a]``: ``sqrt(2/a) sin(n pi x / a)``.

    The transform is
    :math:`\psi_n(p) = \sqrt{2/a}\,\pi a_n (1 - (-1)^n e^{-ipa}) / (\pi^2 - a_n^2 p^2)`
    with :math:`a_n = a/n`.  The poles at :math:`a_n p = \pm\pi` are removable
    and are evaluated from a fourth-order expansion close to them.
    """
    if not (np.isfinite(a) and a > 0):
        raise InvalidParameter(f"box width must be > 0, got {a}")
    if int(n) != n or n < 1:
        raise InvalidParameter(f"box level must be a positive integer, got {n}")
    n = int(n)
    an = a / n
    pref = math.sqrt(2.0 / a) * math.pi * an
    sign = (-1) ** n

    def amp(p):
        p = np.asarray(p, dtype=float)
        z = an * p
        out = np.empty(p.shape, dtype=complex)
        near = np.zeros(p.shape, dtype=bool)
        for s in (1.0, -1.0):
            d = z - s * math.pi
            m = np.abs(d) < _SERIES_WINDOW
            if np.any(m):
                out[m] = -pref * n * _one_minus_expi_over(n * d[m]) / (2 * s * math.pi + d[m])
            near |= m
        far = ~near
        zf = z[far]
        out[far] = pref * (1.0 - sign * np.exp(-1j * p[far] * a)) / (math.pi ** 2 - zf * zf)
        return out

    return MomentumWaveFunction(dispersion, amp, FULL, p_scale=n * math.pi / a,
                                x_extent=a, label=f"box(a={a:g}, n={n})")


def gaussian_state(p0: float, width: float, dispersion: Dispersion,
                   x0: float = 0.0) -> MomentumWaveFunction:
    """Gaussian packet centred at ``x0`` with mean momentum ``p0``.

    ``width`` is the standard deviation of the momentum distribution.
    """
    if not (np.isfinite(width) and width > 0):
        raise InvalidParameter(f"gaussian width must be > 0, got {width}")
    norm = math.sqrt(2 * math.pi) * (2 * math.pi * width ** 2) ** -0.25

    def amp(p):
        p = np.asarray(p, dtype=float)
        return norm * np.exp(-(p - p0) ** 2 / (4 * width ** 2) - 1j * p * x0)

    return MomentumWaveFunction(dispersion, amp, FULL, p_scale=abs(p0) + 10 * width,
                                x_extent=abs(x0) + 2.0 / width,
                                label=f"gaussian(p0={p0:g}, width={width:g})")


def _finite_fourier(func, lo, hi, omega, sign=1.0, order=16):
    """``int_lo^hi func(s) exp(sign i omega s) ds`` for an array of ``omega``.

    Composite Gauss-Legendre with enough panels to resolve the fastest
    oscillation.  Evaluated in chunks to bound memory.
    """
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    span = hi - lo
    out = np.empty(omega.shape, dtype=complex)
    flat = omega.ravel()
    res = out.ravel()
    for start in range(0, flat.size, 256):
        w = flat[start:start + 256]
        n_pan = int(math.ceil(np.max(np.abs(w)) * span / math.pi)) + 8
        nodes, weights = gauss_legendre_panels(lo, hi, n_pan, order)
        vals = weights * np.asarray(func(nodes), dtype=float)
        res[start:start + 256] = np.exp(sign * 1j * np.outer(w, nodes)) @ vals
    return out


class SourceProfile:
    """Classical source ``J(t, x) = g(t) h(x)`` switched on during ``[-T, 0]``."""

    duration: float
    width: float = 0.0
    amplitude: float = 1.0

    def time_profile(self, t):
        raise NotImplementedError

    def time_transform(self, omega, lo=None, hi=None):
        r"""``\int_{lo}^{hi} g(t) e^{i \omega t} dt`` with default range ``[-T, 0]``."""
        lo = -self.duration if lo is None else lo
        hi = 0.0 if hi is None else hi
        return _finite_fourier(self.time_profile, lo, hi, omega, +1.0)

    def space_transform(self, p):
        raise NotImplementedError


@dataclass(frozen=True)
class PointSinusoid(SourceProfile):
    """Point source ``A sin(pi t / T) delta(x)`` acting for ``-T <= t <= 0``."""

    duration: float
    amplitude: float = 1.0
    width: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.duration) and self.duration > 0):
            raise InvalidParameter(f"source duration must be > 0, got {self.duration}")

    @property
    def frequency(self) -> float:
        return math.pi / self.duration

    def time_profile(self, t):
        t = np.asarray(t, dtype=float)
        inside = (t >= -self.duration) & (t <= 0)
        return np.where(inside, np.sin(self.frequency * t), 0.0)

    def time_transform(self, omega, lo=None, hi=None):
        r"""Closed form of :math:`\int g(t) e^{i\omega t} dt`.

        Over the whole pulse this is
        :math:`-\pi T (1 + e^{-i\omega T}) / (\pi^2 - \omega^2 T^2)`, whose
        poles at :math:`\omega T = \pm\pi` are removable.  A partial range
        uses the same exponential integrals written through ``sinc``.
        """
        omega = np.asarray(omega, dtype=float)
        T = self.duration
        k = self.frequency
        if lo is None and hi is None:
            z = omega * T
            d_plus = z - math.pi
            d_minus = z + math.pi
            near_plus = np.abs(d_plus) < _SERIES_WINDOW
            near_minus = np.abs(d_minus) < _SERIES_WINDOW
            far = ~(near_plus | near_minus)
            zf = np.where(far, z, 0.0)
            out = -math.pi * T * (1 + np.exp(-1j * zf)) / (math.pi ** 2 - zf ** 2)
            dp = np.where(near_plus, d_plus, 0.0)
            dm = np.where(near_minus, d_minus, 0.0)
            out = np.where(near_plus,
                           math.pi * T * _one_minus_expi_over(dp) / (2 * math.pi + dp), out)
            out = np.where(near_minus,
                           -math.pi * T * _one_minus_expi_over(dm) / (2 * math.pi - dm), out)
            return self.amplitude * out
        lo = -T if lo is None else max(-T, lo)
        hi = 0.0 if hi is None else min(0.0, hi)
        if hi <= lo:
            return np.zeros(omega.shape, dtype=complex)
        return self.amplitude * 0.5j * (_interval_exp(omega - k, lo, hi)
                                        - _interval_exp(omega + k, lo, hi))

    def space_transform(self, p):
        return np.ones(np.shape(p), dtype=complex)


def _interval_exp(nu, lo, hi):
    """``int_lo^hi exp(i nu t) dt`` written with a sinc so it is smooth at ``nu = 0``."""
    nu = np.asarray(nu, dtype=float)
    c = 0.5 * (lo + hi)
    h = 0.5 * (hi - lo)
    return 2 * h * np.exp(1j * nu * c) * np.sinc(nu * h / math.pi)


@dataclass(frozen=True)
class SeparableSource(SourceProfile):
    """General source ``g(t) h(x)`` on ``[-T, 0] x [-a, 0]``.

    The transforms are computed by quadrature, which is slower than the
    closed form available for :class:`PointSinusoid`.
    """

    g: Callable
    h: Callable
    duration: float
    width: float
    amplitude: float = 1.0

    def __post_init__(self):
        if not (self.duration > 0 and self.width > 0):
            raise InvalidParameter("source duration and width must be > 0")

    def time_profile(self, t):
        t = np.asarray(t, dtype=float)
        inside = (t >= -self.duration) & (t <= 0)
        return np.where(inside, self.g(np.clip(t, -self.duration, 0.0)), 0.0)

    def space_transform(self, p):
        return self.amplitude * _finite_fourier(self.h, -self.width, 0.0, p, -1.0)


def source_state(source: SourceProfile, dispersion: Dispersion) -> MomentumWaveFunction:
    r"""Single-particle amplitude emitted by a classical source.

    :math:`\psi_0(p) = (2\varepsilon_p)^{-1/2}\, \tilde g(\varepsilon_p)\, \tilde h(p)`
    with :math:`\tilde g(\omega) = \int dt\, g(t) e^{i\omega t}` and
    :math:`\tilde h(p) = \int dx\, h(x) e^{-ipx}`.  The result is not
    normalised; its norm is the emission probability to lowest order.
    """
    m = dispersion.m
    T = source.duration
    if m == 0:
        raise InvalidParameter("source states need m > 0 (the amplitude diverges at p = 0)")

    def amp(p):
        p = np.asarray(p, dtype=float)
        eps = dispersion.energy(p)
        return source.time_transform(eps) * source.space_transform(p) / np.sqrt(2 * eps)

    return MomentumWaveFunction(dispersion, amp, FULL,
                                p_scale=max(m, math.pi / T),
                                x_extent=T + source.width,
                                label=f"source(T={T:g})")


class DensityMatrixMomentum:
    """Density kernel ``rho(p, p')`` in the unit-trace convention.

    Concrete kinds are :class:`PureDensity`, :class:`LocalizedDensity` and
    :class:`SampledDensity`.
    """

    dispersion: Dispersion
    support: str
    flags: frozenset = frozenset()

    def kernel(self, p, p2):
        raise NotImplementedError

    def diagonal(self, p):
        p = np.asarray(p, dtype=float)
        return self.kernel(p, p).real

    def cutoff(self, tol: float = 1e-8) -> float:
        raise NotImplementedError

    def momentum_range(self, tol: float = 1e-8) -> Tuple[float, float]:
        hi = self.cutoff(tol)
        return (0.0 if self.support == POSITIVE else -hi, hi)

    def sample(self, grid: Grid1D) -> np.ndarray:
        """Kernel values ``rho(p_i, p_j)`` on ``grid`` (no quadrature weights)."""
        p = grid.points
        return self.kernel(p[:, None], p[None, :])

    def pure_components(self, bandwidth: float = 0.0):
        """Decomposition into translated pure states, if one exists.

        Returns a list of ``(weight, psi, shift)``.  The component state is
        ``psi(p) exp(i p shift)``, so its arrival density at distance ``L`` is
        that of ``psi`` at ``L + shift``.  The decomposition must be exact for
        coherences between momenta at most ``bandwidth`` apart.
        """
        return None

    @property
    def is_pure(self) -> bool:
        return False

    @property
    def x_extent(self) -> float:
        return 1.0


@dataclass(frozen=True)
class PureDensity(DensityMatrixMomentum):
    """Rank-one kernel ``psi(p) psi*(p') / (2 pi)``."""

    psi: MomentumWaveFunction
    flags: frozenset = frozenset()

    @property
    def dispersion(self):
        return self.psi.dispersion

    @property
    def support(self):
        return self.psi.support

    @property
    def is_pure(self):
        return True

    @property
    def x_extent(self):
        return self.psi.x_extent

    def kernel(self, p, p2):
        return self.psi(p) * np.conj(self.psi(p2)) / (2 * math.pi)

    def diagonal(self, p):
        return self.psi.momentum_density(p)

    def cutoff(self, tol: float = 1e-8) -> float:
        return self.psi.cutoff(tol)

    def pure_components(self, bandwidth: float = 0.0):
        return [(1.0, self.psi, 0.0)]


@dataclass(frozen=True)
class LocalizedDensity(DensityMatrixMomentum):
    """Kernel ``S(p, p') rho(p, p')`` for a translation-invariant ``S``."""

    base: DensityMatrixMomentum
    localization: LocalizationKernel
    flags: frozenset = frozenset()

    @property
    def dispersion(self):
        return self.base.dispersion

    @property
    def support(self):
        return self.base.support

    @property
    def x_extent(self):
        return self.base.x_extent + self.localization.spread_width()

    def kernel(self, p, p2):
        return self.localization(p, p2) * self.base.kernel(p, p2)

    def diagonal(self, p):
        return self.base.diagonal(p)

    def cutoff(self, tol: float = 1e-8) -> float:
        return self.base.cutoff(tol)

    def pure_components(self, bandwidth: float = 0.0):
        parts = self.base.pure_components(bandwidth)
        if parts is None:
            return None
        weights, shifts = self.localization.mixture(bandwidth)
        return [(w0 * w, psi, y0 + y) for w0, psi, y0 in parts
                for w, y in zip(weights, shifts)]


@dataclass(frozen=True)
class SampledDensity(DensityMatrixMomentum):
    """Kernel tabulated on a uniform momentum grid, bilinearly interpolated.

    The tabulated matrix must be Hermitian and positive semidefinite up to
    round-off.  Otherwise :class:`NegativeDensity` is raised.
    """

    grid: Grid1D
    matrix: np.ndarray
    dispersion: Dispersion
    flags: frozenset = frozenset()
    check: bool = True

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=complex)
        if mat.shape != (self.grid.n, self.grid.n):
            raise InvalidParameter("sampled density must be square on its grid")
        object.__setattr__(self, "matrix", mat)
        if self.check:
            if not np.allclose(mat, mat.conj().T, atol=1e-12 * np.abs(mat).max()):
                raise NegativeDensity("sampled density is not Hermitian")
            ev = np.linalg.eigvalsh(0.5 * (mat + mat.conj().T))
            if ev.min() < -1e-8 * max(ev.max(), 0.0):
                raise NegativeDensity(f"sampled density has eigenvalue {ev.min():.3g}")

    @property
    def support(self):
        return POSITIVE if self.grid.lo >= 0 else FULL

    @property
    def x_extent(self):
        return 2 * math.pi / self.grid.spacing / 8

    def kernel(self, p, p2):
        from scipy.interpolate import RegularGridInterpolator

        pts = self.grid.points
        p, p2 = np.broadcast_arrays(np.asarray(p, float), np.asarray(p2, float))
        xy = np.stack([p.ravel(), p2.ravel()], axis=-1)
        re = RegularGridInterpolator((pts, pts), self.matrix.real, bounds_error=False,
                                     fill_value=0.0)(xy)
        im = RegularGridInterpolator((pts, pts), self.matrix.imag, bounds_error=False,
                                     fill_value=0.0)(xy)
        return (re + 1j * im).reshape(p.shape)

    def diagonal(self, p):
        pts = self.grid.points
        return np.interp(p, pts, np.diag(self.matrix).real, left=0.0, right=0.0)

    def cutoff(self, tol: float = 1e-8) -> float:
        return float(max(abs(self.grid.lo), abs(self.grid.hi)))


def _scaled_wavefunction(psi: MomentumWaveFunction, alpha, scale: float) -> MomentumWaveFunction:
    base = psi.amplitude
    positive = bool(getattr(alpha, "positive_only", False))

    def amp(p):
        p = np.asarray(p, dtype=float)
        return base(p) * np.sqrt(np.asarray(alpha(p), dtype=float)) * scale

    support = POSITIVE if positive or psi.support == POSITIVE else FULL
    return replace(psi, amplitude=amp, support=support, label=f"{psi.label}|ps")


def detection_probability(rho: DensityMatrixMomentum, alpha, tol: float = 1e-8,
                          rel_tol: float = 1e-10) -> float:
    """``P_tot = int dp rho(p, p) alpha(p)`` over the working momentum range."""
    lo, hi = rho.momentum_range(tol)
    if getattr(alpha, "positive_only", False):
        lo = max(lo, 0.0)

    def f(p):
        return rho.diagonal(p) * np.asarray(alpha(p), dtype=float)

    n0 = int(math.ceil((hi - lo) * rho.x_extent / math.pi)) + 1
    res = adaptive_quad(f, lo, hi, rel_tol, 1e-16,
                        max_subdivisions=max(4000, 4 * n0), initial_intervals=n0)
    return float(res.value)


def post_select(rho: DensityMatrixMomentum, alpha, tol: float = 1e-8):
    """Condition a state on eventual detection.

    Returns ``(rho_ps, P_tot)``.  Here ``rho_ps(p, p')`` is
    ``sqrt(alpha(p) alpha(p')) rho(p, p') / P_tot`` and ``P_tot`` is the total
    detection probability.  Rank-one inputs stay rank one.  The flag
    ``"negative-momentum-content"`` is set when more than ``1e-8`` of the
    post-selected weight sits at ``p < 0``.
    """
    if isinstance(alpha, (int, float)):
        value = float(alpha)
        alpha = Absorption(lambda p, v=value: np.full(np.shape(p), v), False, "constant")
    p_tot = detection_probability(rho, alpha, tol)
    if not p_tot >= 1e-12:
        raise ZeroDetection(f"total detection probability {p_tot:.3g} is below 1e-12")
    flags = set(rho.flags)
    if not getattr(alpha, "positive_only", False) and rho.support == FULL:
        neg = _negative_weight(rho, alpha, tol) / p_tot
        if neg > 1e-8:
            flags.add("negative-momentum-content")
    scale = 1.0 / math.sqrt(p_tot)
    if isinstance(rho, PureDensity):
        out = PureDensity(_scaled_wavefunction(rho.psi, alpha, scale), frozenset(flags))
    elif isinstance(rho, LocalizedDensity):
        inner, _ = post_select(rho.base, alpha, tol)
        out = LocalizedDensity(inner, rho.localization, frozenset(flags))
        # rescale using the detection probability of the localized state itself,
        # which equals that of its base because S(p, p) = 1
    elif isinstance(rho, SampledDensity):
        a = np.sqrt(np.asarray(alpha(rho.grid.points), dtype=float))
        mat = rho.matrix * np.outer(a, a) / p_tot
        out = SampledDensity(rho.grid, mat, rho.dispersion, frozenset(flags), check=False)
    else:
        raise InvalidParameter(f"cannot post-select a {type(rho).__name__}")
    return out, p_tot


def _negative_weight(rho, alpha, tol):
    lo, hi = rho.momentum_range(tol)
    if lo >= 0:
        return 0.0

    def f(p):
        return rho.diagonal(p) * np.asarray(alpha(p), dtype=float)

    n0 = int(math.ceil(-lo * rho.x_extent / math.pi)) + 1
    return float(adaptive_quad(f, lo, 0.0, 1e-8, 1e-18, max(4000, 4 * n0), n0).value)


def apply_localization(rho_ps: DensityMatrixMomentum, localization) -> DensityMatrixMomentum:
    """Multiply the coherences by a localization kernel.

    The maximal kernel returns the input unchanged.
    """
    kernel = as_localization(localization)
    if kernel.is_maximal:
        return rho_ps
    return LocalizedDensity(rho_ps, kernel, rho_ps.flags)
