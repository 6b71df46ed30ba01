r"""Detector models: absorption coefficients and localization kernels.

A detector is described by two functions of momentum.

* The **absorption coefficient** ``alpha(p)`` is the on-shell detection
  probability per unit flux.  It must satisfy ``0 <= alpha <= 1``.  Energy
  positivity forces it to vanish for ``p <= 0``, so only right-moving
  components are absorbed.
* The **localization kernel** ``S(p, p')`` rescales the coherences of the
  post-selected state.  Every kernel here is translation invariant,
  ``S(p, p') = s(p - p')``.  Each kernel is specified through its spectral
  representation ``s(q) = \int dy\, u(y) e^{i q y}`` with a probability
  density ``u``.  Positive definiteness, ``S(p, p) = 1`` and
  ``0 <= S <= 1`` then hold by construction.  The same representation shows
  that a localized pure state is a mixture of translated pure states.  The
  pure-state route in :mod:`reltoa.toa` uses this mixture.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import Dispersion, Grid1D, phase_sweep
from .errors import GridTooNarrow, InvalidParameter, UnphysicalAbsorption


@dataclass(frozen=True)
class Absorption:
    """Absorption coefficient ``alpha(p)``.

    ``positive_only`` records that the coefficient vanishes for ``p <= 0``.
    Post-selection then leaves a state supported on positive momenta.
    """

    func: Callable
    positive_only: bool = True
    label: str = "custom"

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        vals = np.asarray(self.func(p), dtype=float)
        if self.positive_only:
            vals = np.where(p > 0, vals, 0.0)
        return vals


def _perfect(p):
    return (np.asarray(p) > 0).astype(float)


def perfect_absorber() -> Absorption:
    """``alpha = 1`` for every right-moving momentum and 0 otherwise."""
    return Absorption(_perfect, True, "perfect")


def tabulated_absorption(momenta, values, label="table") -> Absorption:
    """Linear interpolation of tabulated ``(p, alpha)`` pairs.

    Outside the table the coefficient is held at its last value for large
    momenta.  It is zero at and below ``p = 0``.
    """
    p = np.asarray(momenta, dtype=float)
    a = np.asarray(values, dtype=float)
    if p.ndim != 1 or p.shape != a.shape or p.size < 2:
        raise InvalidParameter("absorption table needs two equal-length columns")
    if np.any(np.diff(p) <= 0):
        raise InvalidParameter("absorption table momenta must be increasing")
    if np.any(a < 0) or np.any(a > 1 + 1e-9):
        raise UnphysicalAbsorption("tabulated absorption must lie in [0, 1]")

    def func(x):
        return np.interp(x, p, a, left=0.0, right=a[-1])

    return Absorption(func, True, label)


def load_absorption_table(path) -> Absorption:
    """Read a two-column CSV of momentum and absorption coefficient."""
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                rows.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError):
                if rows:
                    raise InvalidParameter(f"malformed absorption row {row!r} in {path}")
                continue  # header line
    if len(rows) < 2:
        raise InvalidParameter(f"absorption table {path} has fewer than two rows")
    arr = np.array(rows)
    return tabulated_absorption(arr[:, 0], arr[:, 1], label=f"table:{path}")


def absorption_from_kernel(rtilde_onshell: Callable, dispersion: Dispersion,
                           p_check: Optional[float] = None, samples: int = 4001) -> Absorption:
    """Absorption coefficient ``alpha(p) = R(p, eps_p) / (2 p)`` for ``p > 0``.

    ``rtilde_onshell(p, eps)`` is the detector response evaluated on shell.
    The coefficient is checked on ``(0, p_check]``.  By default this range
    extends to ``50 * max(m, 1)``.  :class:`UnphysicalAbsorption` is raised
    if it exceeds one anywhere there.
    """

    def func(p):
        p = np.asarray(p, dtype=float)
        safe = np.where(p > 0, p, 1.0)
        vals = np.asarray(rtilde_onshell(safe, dispersion.energy(safe)), dtype=float)
        vals = vals / (2.0 * safe)
        return np.where(p > 0, vals, 0.0)

    hi = p_check if p_check is not None else 50.0 * max(dispersion.m, 1.0)
    probe = np.linspace(0.0, hi, samples)[1:]
    vals = func(probe)
    if np.any(vals > 1 + 1e-9):
        worst = probe[int(np.argmax(vals))]
        raise UnphysicalAbsorption(
            f"absorption reaches {vals.max():.6g} > 1 at p = {worst:.6g}")
    if np.any(vals < -1e-12):
        raise UnphysicalAbsorption("absorption is negative somewhere on the working range")
    return Absorption(func, True, "from-kernel")


# Gaussian mixtures: the spectral tail exp(-(sigma q)^2) is negligible beyond
# q = MIXTURE_DECAY / sigma, and the shift grid spans |y| <= MIXTURE_REACH sigma.
MIXTURE_DECAY = 6.0
MIXTURE_REACH = 12.0


class LocalizationKernel:
    """Translation-invariant localization kernel with a spectral density.

    Subclasses provide ``profile(q)``, which is ``S(p, p + q)``.  They also
    provide ``mixture(bandwidth)``, a quadrature ``(weights, shifts)`` of the
    spectral density ``u`` that reproduces ``S(q) = sum w cos(q y)`` for all
    momentum differences ``|q| <= bandwidth``.  ``spread_mass`` gives the exact
    mass of ``u`` inside an interval and is used by :func:`localization_spread`.
    """

    is_maximal = False
    label = "kernel"

    def profile(self, q):
        raise NotImplementedError

    def __call__(self, p, p2):
        return self.profile(np.asarray(p2, dtype=float) - np.asarray(p, dtype=float))

    def mixture(self, bandwidth: float):
        raise NotImplementedError

    def spread_mass(self, lo, hi):
        raise NotImplementedError

    def spread_width(self) -> float:
        """Half-width containing all but a negligible part of ``u``."""
        raise NotImplementedError


@dataclass(frozen=True)
class MaximalLocalization(LocalizationKernel):
    """``S = 1``: no suppression of coherences, ``u`` is a point mass."""

    is_maximal = True
    label = "maximal"

    def profile(self, q):
        return np.ones_like(np.asarray(q, dtype=float))

    def mixture(self, bandwidth: float = 0.0):
        return np.array([1.0]), np.array([0.0])

    def spread_mass(self, lo, hi):
        return np.where((lo <= 0) & (0 < hi), 1.0, 0.0)

    def spread_width(self):
        return 0.0


@dataclass(frozen=True)
class GaussianLocalization(LocalizationKernel):
    """``S = exp(-sigma^2 (p - p')^2)`` with Gaussian ``u`` of variance ``2 sigma^2``."""

    sigma: float
    label = "gaussian"

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise InvalidParameter(f"gaussian localization needs sigma > 0, got {self.sigma}")

    def profile(self, q):
        q = np.asarray(q, dtype=float)
        return np.exp(-(self.sigma * q) ** 2)

    def spread(self, x):
        """Closed form of ``u``: the inverse transform of ``profile``."""
        x = np.asarray(x, dtype=float)
        s2 = self.sigma ** 2
        return np.exp(-x * x / (4 * s2)) / math.sqrt(4 * math.pi * s2)

    def mixture(self, bandwidth: float):
        """Trapezoid rule for ``u`` on a uniform grid of shifts.

        For a function whose momentum content spans at most ``bandwidth``,
        the trapezoid sum of ``u f`` is exact up to aliasing from
        frequencies ``2 pi / h - bandwidth``.  There the transform
        ``exp(-sigma^2 q^2)`` of ``u`` is below ``exp(-36)``.  The grid
        covers ``|y| <= 12 sigma``, beyond which ``u`` holds less than
        ``1e-16`` of its mass.
        """
        if not bandwidth >= 0:
            raise InvalidParameter(f"bandwidth must be >= 0, got {bandwidth}")
        h = 2 * math.pi / (bandwidth + MIXTURE_DECAY / self.sigma)
        half = int(math.ceil(MIXTURE_REACH * self.sigma / h))
        shifts = h * np.arange(-half, half + 1)
        return h * self.spread(shifts), shifts

    def spread_mass(self, lo, hi):
        from scipy.special import ndtr

        std = math.sqrt(2.0) * self.sigma
        return ndtr(np.asarray(hi) / std) - ndtr(np.asarray(lo) / std)

    def spread_width(self):
        return 12.0 * self.sigma


@dataclass(frozen=True)
class DiscreteMixtureLocalization(LocalizationKernel):
    """``S(q) = sum_k w_k cos(q y_k)``: a symmetric mixture of point shifts.

    This is the general user-defined kernel.  Prescribing it through
    non-negative weights and shifts certifies positive definiteness.  An
    arbitrary function of two momenta is not accepted.
    """

    weights: tuple
    shifts: tuple
    label = "mixture"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        y = np.asarray(self.shifts, dtype=float)
        if w.ndim != 1 or w.shape != y.shape or w.size == 0:
            raise InvalidParameter("mixture needs equal-length weights and shifts")
        if np.any(w < 0) or not np.all(np.isfinite(y)):
            raise InvalidParameter("mixture weights must be non-negative and shifts finite")
        if abs(w.sum() - 1.0) > 1e-12:
            raise InvalidParameter("mixture weights must sum to one so that S(p, p) = 1")
        object.__setattr__(self, "weights", tuple(w))
        object.__setattr__(self, "shifts", tuple(y))

    def profile(self, q):
        q = np.asarray(q, dtype=float)
        w = np.asarray(self.weights)
        y = np.asarray(self.shifts)
        return np.tensordot(np.cos(q[..., None] * y), w, axes=([-1], [0]))

    def mixture(self, bandwidth: float = 0.0):
        w = np.asarray(self.weights)
        y = np.asarray(self.shifts)
        return np.concatenate([w, w]) / 2.0, np.concatenate([y, -y])

    def spread_mass(self, lo, hi):
        w, y = self.mixture()
        lo = np.asarray(lo, dtype=float)[..., None]
        hi = np.asarray(hi, dtype=float)[..., None]
        return np.sum(w * ((lo <= y) & (y < hi)), axis=-1)

    def spread_width(self):
        return float(np.max(np.abs(self.shifts)))


def as_localization(obj) -> LocalizationKernel:
    """Coerce ``None``, a width or a kernel into a :class:`LocalizationKernel`."""
    if obj is None:
        return MaximalLocalization()
    if isinstance(obj, LocalizationKernel):
        return obj
    if callable(obj):
        raise InvalidParameter(
            "localization kernels must be given through a spectral density "
            "(GaussianLocalization or DiscreteMixtureLocalization), not as a bare function")
    sigma = float(obj)
    return MaximalLocalization() if sigma == 0 else GaussianLocalization(sigma)


def localization_spread(kernel: LocalizationKernel, p: float, x_points,
                        xi_points: int = 4001) -> np.ndarray:
    r"""Phase-space spread ``u_p(x)`` of a kernel sampled on uniform ``x_points``.

    ``u_p(x) = \int d\xi/(2\pi)\, S(p - \xi/2, p + \xi/2) e^{-i \xi x}``.  For a
    kernel with a continuous profile the transform is evaluated by the
    trapezoid rule on a symmetric ``xi`` grid.  The Gaussian profile decays
    fast enough for this to be spectrally accurate.  Point masses, such as
    the maximal kernel and discrete mixtures, are returned as cell averages
    so that the samples integrate to the exact mass on the grid.
    :class:`GridTooNarrow` is raised when the grid holds less than
    ``1 - 1e-6`` of the spread.
    """
    x = np.asarray(x_points, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise InvalidParameter("x_points must be a 1-D grid")
    dx = x[1] - x[0]
    if not np.allclose(np.diff(x), dx, rtol=1e-9, atol=0):
        raise InvalidParameter("x_points must be uniform")
    lo_edges = x - dx / 2
    hi_edges = x + dx / 2
    if isinstance(kernel, GaussianLocalization):
        xi_max = 40.0 / kernel.sigma
        # keep the alias period 2 pi / dxi well beyond the requested x range
        reach = float(np.max(np.abs(x))) + kernel.spread_width()
        n_xi = max(xi_points, int(math.ceil(2 * xi_max * reach / math.pi)) + 1)
        xi = np.linspace(-xi_max, xi_max, n_xi)
        dxi = xi[1] - xi[0]
        prof = kernel(p - xi / 2, p + xi / 2)
        w = np.full(xi.size, dxi)
        w[0] = w[-1] = dxi / 2
        grid = Grid1D(float(x[0]), float(x[-1]), x.size)
        u = phase_sweep(w * prof, xi, grid, -1).real / (2 * math.pi)
        mass = float(np.sum(kernel.spread_mass(lo_edges, hi_edges)))
    else:
        cells = np.asarray(kernel.spread_mass(lo_edges, hi_edges), dtype=float)
        u = cells / dx
        mass = float(cells.sum())
    if mass < 1 - 1e-6:
        raise GridTooNarrow(
            f"x grid [{x[0]}, {x[-1]}] holds only {mass:.8f} of the localization spread")
    return u
