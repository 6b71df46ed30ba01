r"""Numerical primitives shared by every other module.

The package works in natural units (``hbar = c = 1``) for a single scalar
species with dispersion :math:`\varepsilon_p = \sqrt{p^2 + m^2}`.  Phases are
built from the kinetic energy :math:`\varepsilon_p - m`.  A global phase
cancels in every density, and subtracting the rest energy keeps the phase
small enough to stay accurate when ``m`` is large.

Two quadrature back ends are provided:

* an adaptive Gauss-Kronrod (7/15) integrator for single, possibly
  vector-valued, oscillatory integrals, which serves as the reference;
* a sweep engine that evaluates sums of the form
  :math:`\sum_j c_j e^{\mp i \omega_j t_k}` on a uniform grid of ``t`` with a
  type-1 non-uniform FFT.  It turns a momentum integral into a whole time
  series at the cost of one transform.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import finufft
import numpy as np

from .errors import (
    InvalidDomain,
    InvalidParameter,
    NonConvergenceWarning,
)

# Kronrod 15-point nodes on [0, 1] (symmetric), with the embedded 7-point
# Gauss rule living on the odd indices.
_XK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])

KRONROD_NODES = np.concatenate([-_XK[:-1], _XK[::-1]])
KRONROD_WEIGHTS = np.concatenate([_WK[:-1], _WK[::-1]])
GAUSS_WEIGHTS = np.zeros(15)
GAUSS_WEIGHTS[1:7:2] = _WG[:3]
GAUSS_WEIGHTS[7] = _WG[3]
GAUSS_WEIGHTS[9:14:2] = _WG[2::-1]


@dataclass(frozen=True)
class Dispersion:
    """Free relativistic dispersion for a particle of mass ``m``."""

    m: float

    def __post_init__(self):
        if not (np.isfinite(self.m) and self.m >= 0):
            raise InvalidParameter(f"mass must be finite and >= 0, got {self.m}")

    def energy(self, p):
        p = np.asarray(p, dtype=float)
        return np.sqrt(p * p + self.m * self.m)

    def kinetic(self, p):
        """Kinetic energy ``eps - m``, computed without cancellation."""
        p = np.asarray(p, dtype=float)
        return p * p / (self.energy(p) + self.m) if self.m > 0 else np.abs(p)

    def velocity(self, p):
        p = np.asarray(p, dtype=float)
        e = self.energy(p)
        return np.divide(p, e, out=np.zeros_like(e), where=e > 0)

    def momentum_for_velocity(self, v):
        """Inverse of :meth:`velocity` on ``0 <= v < 1``."""
        v = np.asarray(v, dtype=float)
        if self.m == 0:
            return np.where(v > 0, np.inf, 0.0)
        v = np.clip(v, 0.0, 1.0 - 1e-15)
        return self.m * v / np.sqrt(1.0 - v * v)


@dataclass(frozen=True)
class Grid1D:
    """Uniform grid with ``n`` points from ``lo`` to ``hi`` inclusive."""

    lo: float
    hi: float
    n: int

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)):
            raise InvalidDomain("grid bounds must be finite")
        if self.n < 2 or self.hi <= self.lo:
            raise InvalidDomain(
                f"grid needs n >= 2 and hi > lo, got [{self.lo}, {self.hi}] n={self.n}"
            )

    @property
    def spacing(self) -> float:
        return (self.hi - self.lo) / (self.n - 1)

    @property
    def points(self) -> np.ndarray:
        return self.lo + self.spacing * np.arange(self.n)

    def trapezoid(self, values, axis=-1):
        """Trapezoid rule of sampled ``values`` along ``axis``."""
        return np.trapezoid(values, dx=self.spacing, axis=axis)


@dataclass(frozen=True)
class SampledComplex:
    """Complex values on a :class:`Grid1D`, linearly interpolated between nodes."""

    grid: Grid1D
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=complex)
        if vals.shape != (self.grid.n,):
            raise InvalidParameter(
                f"expected {self.grid.n} samples, got shape {vals.shape}"
            )
        object.__setattr__(self, "values", vals)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        pts = self.grid.points
        re = np.interp(x, pts, self.values.real, left=0.0, right=0.0)
        im = np.interp(x, pts, self.values.imag, left=0.0, right=0.0)
        return re + 1j * im


@dataclass(frozen=True)
class QuadratureSpec:
    """Tolerances and limits handed to every integration routine.

    ``p_max`` fixes the momentum cutoff explicitly.  When it is ``None`` the
    cutoff is chosen per state so that the discarded normalization mass is
    below ``mass_tol``.
    """

    method: str = "adaptive"
    rel_tol: float = 1e-8
    abs_tol: float = 1e-12
    max_subdivisions: int = 4000
    p_max: Optional[float] = None
    mass_tol: float = 1e-8
    nufft_eps: float = 1e-13
    threads: int = 1

    def __post_init__(self):
        if self.method not in ("adaptive", "fft-grid"):
            raise InvalidParameter(f"unknown quadrature method {self.method!r}")
        if not (self.rel_tol > 0 and self.abs_tol >= 0):
            raise InvalidParameter("tolerances must be positive")
        if self.max_subdivisions < 1:
            raise InvalidParameter("max_subdivisions must be >= 1")
        if self.p_max is not None and not self.p_max > 0:
            raise InvalidParameter(f"p_max must be > 0, got {self.p_max}")
        if not 0 < self.mass_tol < 1:
            raise InvalidParameter("mass_tol must lie in (0, 1)")


@dataclass(frozen=True)
class QuadratureResult:
    """Value of an integral with its error estimate and work counters."""

    value: complex
    error: float
    subdivisions: int
    converged: bool
    evaluations: int = 0

    def __complex__(self):
        return complex(self.value)


def gauss_legendre_panels(lo, hi, n_panels, order=16):
    """Nodes and weights of a composite Gauss-Legendre rule on ``[lo, hi]``."""
    if not hi > lo:
        raise InvalidDomain(f"empty panel range [{lo}, {hi}]")
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(lo, hi, int(n_panels) + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def phase_variation(phase, lo, hi, samples=4097):
    """Total variation of ``phase`` on ``[lo, hi]`` from a uniform sampling."""
    x = np.linspace(lo, hi, samples)
    return float(np.sum(np.abs(np.diff(np.asarray(phase(x), dtype=float)))))


def _kronrod(func, a, b):
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    x = mid[:, None] + half[:, None] * KRONROD_NODES[None, :]
    fx = np.asarray(func(x.ravel()))
    fx = fx.reshape((a.size, 15) + fx.shape[1:])
    extra = (1,) * (fx.ndim - 2)
    hk = half.reshape((-1,) + extra)
    k = hk * np.tensordot(fx, KRONROD_WEIGHTS, axes=([1], [0]))
    g = hk * np.tensordot(fx, GAUSS_WEIGHTS, axes=([1], [0]))
    # Error heuristic of QUADPACK: the raw Kronrod-Gauss difference is
    # rescaled against the mean absolute deviation of the integrand.
    mean = k / (2 * hk)
    dev = np.abs(fx - mean[:, None])
    resasc = np.abs(hk) * np.tensordot(dev, KRONROD_WEIGHTS, axes=([1], [0]))
    raw = np.abs(k - g)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(resasc > 0, 200 * raw / resasc, 0.0)
    err = np.where(resasc > 0, resasc * np.minimum(1.0, ratio ** 1.5), raw)
    if err.ndim > 1:
        err = err.reshape(a.size, -1).max(axis=1)
    return k, err


def adaptive_quad(func, lo, hi, rel_tol=1e-8, abs_tol=1e-12,
                  max_subdivisions=4000, initial_intervals=1):
    """Globally adaptive Gauss-Kronrod quadrature of a vectorised integrand.

    ``func`` maps a 1-D array of abscissae to values of shape ``(n,)`` or
    ``(n, k)``.  At each pass the intervals carrying the largest error share
    are bisected until the summed error meets the tolerance or the interval
    budget is spent.
    """
    if not (np.isfinite(lo) and np.isfinite(hi)) or not hi > lo:
        raise InvalidDomain(f"invalid domain [{lo}, {hi}]")
    n0 = int(min(max(1, initial_intervals), max_subdivisions))
    edges = np.linspace(lo, hi, n0 + 1)
    a, b = edges[:-1], edges[1:]
    vals, errs = _kronrod(func, a, b)
    evaluations = 15 * a.size
    while True:
        total = vals.sum(axis=0)
        err = float(errs.sum())
        scale = float(np.max(np.abs(total)))
        target = max(abs_tol, rel_tol * scale)
        if err <= target or a.size >= max_subdivisions:
            break
        order = np.argsort(errs)[::-1]
        cum = np.cumsum(errs[order])
        n_split = int(np.searchsorted(cum, 0.5 * err)) + 1
        n_split = min(n_split, max_subdivisions - a.size, a.size)
        if n_split <= 0:
            break
        pick = order[:n_split]
        keep = np.ones(a.size, dtype=bool)
        keep[pick] = False
        mid = 0.5 * (a[pick] + b[pick])
        na = np.concatenate([a[pick], mid])
        nb = np.concatenate([mid, b[pick]])
        if np.any(nb - na <= 1e-15 * max(1.0, abs(lo), abs(hi))):
            break
        nv, ne = _kronrod(func, na, nb)
        evaluations += 15 * na.size
        a = np.concatenate([a[keep], na])
        b = np.concatenate([b[keep], nb])
        vals = np.concatenate([vals[keep], nv])
        errs = np.concatenate([errs[keep], ne])
    total = vals.sum(axis=0)
    err = float(errs.sum())
    converged = err <= max(abs_tol, rel_tol * float(np.max(np.abs(total))))
    return QuadratureResult(total, err, int(a.size), bool(converged), evaluations)


def _uniform_simpson(func, lo, hi, n):
    x = np.linspace(lo, hi, n + 1)
    w = np.full(n + 1, 2.0)
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    return np.dot(w, func(x)) * (hi - lo) / (3 * n)


def integrate_oscillatory(f: Callable, phase: Callable, domain: Tuple[float, float],
                          spec: QuadratureSpec = QuadratureSpec()) -> QuadratureResult:
    """Integrate ``f(p) * exp(i * phase(p))`` over ``domain``.

    With ``spec.method == "adaptive"`` the domain is first split so that each
    piece carries at most half a period of the phase, then refined
    adaptively.  With ``"fft-grid"`` a composite Simpson rule on a uniform grid
    (the rule used by the sweep engine) is doubled until two successive
    levels agree.  The Richardson difference serves as the error estimate.
    A non-converged result is returned with ``converged=False`` and a
    :class:`NonConvergenceWarning`.
    """
    lo, hi = map(float, domain)
    if not (np.isfinite(lo) and np.isfinite(hi)) or not hi > lo:
        raise InvalidDomain(f"invalid domain [{lo}, {hi}]")

    def integrand(p):
        return np.asarray(f(p), dtype=complex) * np.exp(1j * np.asarray(phase(p)))

    variation = phase_variation(phase, lo, hi)
    if spec.method == "adaptive":
        n0 = int(math.ceil(variation / math.pi)) + 1
        res = adaptive_quad(integrand, lo, hi, spec.rel_tol, spec.abs_tol,
                            spec.max_subdivisions + n0, initial_intervals=n0)
    else:
        n = 2 * max(8, int(math.ceil(4 * variation / math.pi)))
        coarse = _uniform_simpson(integrand, lo, hi, n)
        limit = 2 ** 24
        while True:
            n *= 2
            fine = _uniform_simpson(integrand, lo, hi, n)
            err = abs(fine - coarse) / 15.0
            ok = err <= max(spec.abs_tol, spec.rel_tol * abs(fine))
            if ok or n >= limit:
                break
            coarse = fine
        res = QuadratureResult(complex(fine), float(err), n, bool(ok), n + 1)
    if not res.converged:
        warnings.warn(
            f"oscillatory integral on [{lo}, {hi}] did not converge "
            f"(error {res.error:.3g})", NonConvergenceWarning, stacklevel=2)
    return res


def phase_sweep(coeffs, freqs, grid: Grid1D, sign: int = -1,
                eps: float = 1e-13, threads: int = 1, chunk: int = 4_000_000):
    """Evaluate ``sum_j coeffs[j] * exp(sign * 1j * freqs[j] * t)`` on ``grid``.

    The sum is evaluated with a type-1 non-uniform FFT.  Each frequency is
    rescaled by the grid spacing and folded into ``[-pi, pi)``.  Large inputs
    are processed in fixed-size chunks that are accumulated in order, so
    the output is bitwise reproducible.
    """
    if sign not in (-1, 1):
        raise InvalidParameter("sign must be +1 or -1")
    coeffs = np.asarray(coeffs, dtype=complex).ravel()
    freqs = np.asarray(freqs, dtype=float).ravel()
    if coeffs.shape != freqs.shape:
        raise InvalidParameter("coeffs and freqs must have the same length")
    n = grid.n
    shift = n // 2
    out = np.zeros(n, dtype=complex)
    for start in range(0, coeffs.size, chunk):
        c = coeffs[start:start + chunk]
        w = freqs[start:start + chunk]
        x = w * grid.spacing
        c = c * np.exp(sign * 1j * (w * grid.lo + x * shift))
        xs = np.mod(x + np.pi, 2 * np.pi) - np.pi
        out += finufft.nufft1d1(xs, c, n, isign=sign, eps=eps, nthreads=threads)
    return out


def phase_sweep_2d(coeffs, freqs_x, x_grid: Grid1D, freqs_t, t_grid: Grid1D, sign_t: int = -1,
                   eps: float = 1e-13, threads: int = 1, chunk: int = 4_000_000):
    """Evaluate ``sum_j c_j exp(1j fx_j x) exp(sign_t 1j ft_j t)`` on ``x_grid`` times ``t_grid``.

    One two-dimensional type-1 non-uniform FFT replaces a separate sweep per
    ``x``.  The result has shape ``(x_grid.n, t_grid.n)``.
    """
    if sign_t not in (-1, 1):
        raise InvalidParameter("sign must be +1 or -1")
    coeffs = np.asarray(coeffs, dtype=complex).ravel()
    fx = np.asarray(freqs_x, dtype=float).ravel()
    ft = np.asarray(freqs_t, dtype=float).ravel()
    if not coeffs.shape == fx.shape == ft.shape:
        raise InvalidParameter("coeffs and frequencies must have the same length")
    nx, nt = x_grid.n, t_grid.n
    dx = x_grid.spacing if nx > 1 else 0.0
    out = np.zeros((nx, nt), dtype=complex)
    for start in range(0, coeffs.size, chunk):
        c = coeffs[start:start + chunk]
        wx = fx[start:start + chunk]
        wt = sign_t * ft[start:start + chunk]
        ax = wx * dx
        at = wt * t_grid.spacing
        c = c * np.exp(1j * (wx * x_grid.lo + ax * (nx // 2) + wt * t_grid.lo + at * (nt // 2)))
        ax = np.mod(ax + np.pi, 2 * np.pi) - np.pi
        at = np.mod(at + np.pi, 2 * np.pi) - np.pi
        # finufft orders the output as (modes along x, modes along y)
        out += finufft.nufft2d1(ax, at, c, (nx, nt), isign=1, eps=eps, nthreads=threads)
    return out


def smooth_taper(p, start, stop):
    """Window equal to 1 below ``start`` and 0 beyond ``stop``, infinitely smooth.

    It is built from the complementary error function centred between the
    two edges with width ``(stop - start) / 12``, so it is 1 - 1e-9 at
    ``start`` and 1e-9 at ``stop``.
    """
    p = np.asarray(p, dtype=float)
    from scipy.special import erfc

    mid = 0.5 * (start + stop)
    width = (stop - start) / 12.0
    return 0.5 * erfc((p - mid) / (width * math.sqrt(2.0)))


def momentum_cutoff(density: Callable, p_scale: float, x_extent: float,
                    tol: float = 1e-8, lower: Optional[float] = 0.0,
                    max_doublings: int = 60) -> float:
    """Smallest cutoff ``P`` keeping all but ``tol`` of the weight of ``density``.

    ``density`` is a non-negative function of momentum.  When ``lower`` is
    ``0`` only ``p >= 0`` is considered, and when it is ``None`` the range is
    ``[-P, P]``.  The integral is accumulated over octave bands
    ``[2^k s, 2^(k+1) s]`` with Gauss-Legendre panels narrower than half
    the oscillation period ``2 pi / x_extent``.  Once the band masses decay
    geometrically the remaining tail is extrapolated.
    """
    if not (p_scale > 0 and x_extent > 0):
        raise InvalidParameter("p_scale and x_extent must be positive")
    period = 2 * math.pi / x_extent

    def band(lo, hi):
        n_pan = max(4, int(math.ceil((hi - lo) / (0.5 * period))))
        nodes, weights = gauss_legendre_panels(lo, hi, n_pan, order=12)
        vals = np.asarray(density(nodes), dtype=float)
        if lower is None:
            vals = vals + np.asarray(density(-nodes), dtype=float)
        edges = np.linspace(lo, hi, n_pan + 1)
        per_panel = (weights * vals).reshape(n_pan, -1).sum(axis=1)
        return edges, per_panel

    edges_all, mass_all = band(0.0, p_scale)
    masses = [mass_all.sum()]
    edges_list, mass_list = [edges_all], [mass_all]
    hi = p_scale
    tail = 0.0
    for _ in range(max_doublings):
        e, m = band(hi, 2 * hi)
        edges_list.append(e)
        mass_list.append(m)
        masses.append(m.sum())
        hi *= 2
        total = sum(masses)
        if len(masses) >= 4 and total > 0:
            r1 = masses[-1] / max(masses[-2], 1e-300)
            r2 = masses[-2] / max(masses[-3], 1e-300)
            if masses[-1] < 1e-3 * tol * total and r1 < 0.9 and r2 < 0.9:
                tail = masses[-1] * r1 / (1 - r1)
                break
    else:
        raise InvalidParameter("momentum density does not decay; no cutoff exists")
    total = sum(masses) + tail
    if not total > 0:
        raise InvalidParameter("momentum density has zero weight")
    cum = np.cumsum(np.concatenate(mass_list))
    right = np.concatenate([e[1:] for e in edges_list])
    missing = total - cum
    idx = int(np.argmax(missing <= tol * total))
    return float(right[idx])


def gaussian_switching_identity_check(delta_t: float, delta_x: float, points) -> float:
    """Largest absolute residual of the Gaussian switching identity.

    For ``f(t, x) = exp(-t^2/(2 dt^2) - x^2/(2 dx^2))`` the identity
    ``f(t,x) f(t',x') = f^2((t+t')/2, (x+x')/2) * sqrt(f(t-t', x-x'))``
    holds exactly.  ``points`` is an array of shape ``(n, 4)`` holding
    ``(t, x, t', x')`` rows.
    """
    if not (delta_t > 0 and delta_x > 0):
        raise InvalidParameter("switching widths must be positive")
    pts = np.asarray(points, dtype=float).reshape(-1, 4)
    t, x, t2, x2 = pts.T

    def f(a, b):
        return np.exp(-a * a / (2 * delta_t ** 2) - b * b / (2 * delta_x ** 2))

    lhs = f(t, x) * f(t2, x2)
    rhs = f(0.5 * (t + t2), 0.5 * (x + x2)) ** 2 * np.sqrt(f(t - t2, x - x2))
    return float(np.max(np.abs(lhs - rhs)))
