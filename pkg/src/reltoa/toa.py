r"""Arrival-time densities at a detector placed at distance ``L``.

Three routes lead to the conditional arrival-time density of a
post-selected, localized state :math:`\tilde\rho`.

* **Momentum double integral**.
  :math:`P(t) = \int\!\!\int_0^\infty \frac{dp\,dp'}{2\pi}\,
  \tilde\rho(p,p')\sqrt{v_p v_{p'}}\, e^{i(p-p')L - i(\varepsilon_p-\varepsilon_{p'})t}`.
* **Pure-state square**.  For :math:`\rho = \psi\psi^*/2\pi` this collapses to
  :math:`P(t) = |A(t)|^2` with
  :math:`A(t) = \frac{1}{2\pi}\int_0^\infty dp\,\psi(p)\sqrt{v_p}\,e^{ipL-i\varepsilon_p t}`.
  A localization kernel with spectral density ``u`` turns the state into the
  mixture :math:`\int dy\,u(y)\,|A(t; L+y)|^2`.
* **Phase space**.
  :math:`P(t) = \frac{1}{2\pi}\int dp\,dx_0\,dx_f\; W(x_0,p)\,u(x_f)\,
  F_t(L-x_0-x_f, p)`.  Here ``W`` is the Wigner function of
  :math:`\rho` and ``F_t`` is the arrival kernel returned by
  :func:`toa_kernel`.

The current-operator density replaces :math:`\sqrt{v_p v_{p'}}` by
:math:`(v_p + v_{p'})/2`.  It integrates to the same total but is not
positive at early times.  The causal correction replaces the Feynman
propagator by the retarded one.  This subtracts the contribution of the
negative-frequency term :math:`e^{+i\varepsilon t}`.

Time series are computed by the sweep engine of :mod:`reltoa.core`.
Momentum integrals use composite Gauss-Legendre panels in
:math:`q = \sqrt{p}`, so the :math:`\sqrt{v_p}` factor is analytic at the
origin.  Panels are sized by the local phase rate, and all times come out
of a single non-uniform FFT.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np
from scipy.special import j1

from .core import (
    Dispersion,
    Grid1D,
    QuadratureSpec,
    adaptive_quad,
    integrate_oscillatory,
    phase_sweep,
    phase_sweep_2d,
    smooth_taper,
)
from .detector import MaximalLocalization, localization_spread
from .errors import (
    EngineError,
    GridTooNarrow,
    InvalidParameter,
    NonConvergenceWarning,
)
from .states import (
    POSITIVE,
    DensityMatrixMomentum,
    LocalizedDensity,
    MomentumWaveFunction,
)

METHODS = ("momentum-double-integral", "pure-state-squared", "phase-space",
           "causal-corrected", "current-operator")
KERNEL_VARIANTS = ("numeric", "nonrel-closed", "ultrarel-closed", "current", "classical")
TAPER_STRETCH = 1.5
PANEL_PHASE = 3 * math.pi


@dataclass
class TimeSeriesDensity:
    """Density sampled on a uniform time grid, with provenance.

    ``noise_floor`` is the absolute accuracy of ``values`` estimated by
    repeating the computation at a finer quadrature resolution.
    """

    t_grid: Grid1D
    values: np.ndarray
    L: float
    method: str
    noise_floor: float = 0.0
    diagnostics: Dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.t_grid.n,):
            raise EngineError("density length does not match its time grid")
        if not np.all(np.isfinite(self.values)):
            raise EngineError(f"{self.method} produced non-finite values")

    @property
    def times(self) -> np.ndarray:
        return self.t_grid.points

    @property
    def peak(self) -> float:
        return float(np.max(self.values))

    @property
    def below_noise(self) -> np.ndarray:
        """Mask of samples whose magnitude is under the noise floor."""
        return np.abs(self.values) <= self.noise_floor

    def total_weight(self) -> float:
        """Trapezoid integral over the grid (not the full time axis)."""
        return float(self.t_grid.trapezoid(self.values))


@dataclass
class PhaseSpaceField:
    """Real field sampled on an ``x`` grid times a ``p`` grid (rows are ``p``)."""

    x_grid: Grid1D
    p_grid: Grid1D
    values: np.ndarray


# --------------------------------------------------------------------------
# arrival kernel


def _kernel_integrand(x, p, t, disp: Dispersion):
    def amp(xi):
        return np.sqrt(np.abs(disp.velocity(p + xi / 2) * disp.velocity(p - xi / 2)))

    def phase(xi):
        return x * xi - (disp.kinetic(p + xi / 2) - disp.kinetic(p - xi / 2)) * t

    return amp, phase


def toa_kernel(x, p, t, dispersion: Dispersion, variant: str = "numeric",
               spec: QuadratureSpec = QuadratureSpec(), dt: Optional[float] = None):
    r"""Arrival kernel ``F_t(x, p)`` linking the Wigner function to the density.

    ``numeric`` evaluates
    :math:`\int_{-2p}^{2p} d\xi\, \sqrt{|v_{p+\xi/2} v_{p-\xi/2}|}\,
    e^{ix\xi - i(\varepsilon_{p+\xi/2}-\varepsilon_{p-\xi/2})t}` by adaptive
    quadrature.  The closed forms hold in limiting regimes.

    * ``nonrel-closed``: :math:`v_p \pi J_1(2p|y|)/|y|` with
      :math:`y = x - v_p t`, valid for :math:`p \ll m`.
    * ``ultrarel-closed``: :math:`2\sin(2p(x-t))/(x-t)`, exact for ``m = 0``.
    * ``current``: :math:`v_p\, 2\sin(2py)/y`, the kernel of the current
      operator in the nonrelativistic regime.
    * ``classical``: :math:`2\pi\,\delta(t - x/v_p)`, represented by a
      normalised Gaussian in ``t`` of width ``dt``.

    Every variant shares the normalisation of ``numeric``, whose time
    integral is :math:`2\pi`.
    """
    if variant not in KERNEL_VARIANTS:
        raise InvalidParameter(f"unknown kernel variant {variant!r}")
    if not p > 0:
        raise InvalidParameter(f"kernel needs p > 0, got {p}")
    v = float(dispersion.velocity(p))
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    if variant == "numeric":
        xb, tb = np.broadcast_arrays(x, t)
        out = np.empty(xb.shape, dtype=complex)
        for idx in np.ndindex(xb.shape):
            amp, phase = _kernel_integrand(float(xb[idx]), p, float(tb[idx]), dispersion)
            out[idx] = integrate_oscillatory(amp, phase, (-2 * p, 2 * p), spec).value
        return out if out.ndim else complex(out)
    if variant == "nonrel-closed":
        y = np.abs(x - v * t)
        safe = np.where(y > 0, y, 1.0)
        return np.where(y > 0, v * math.pi * j1(2 * p * safe) / safe, math.pi * p * v)
    if variant == "ultrarel-closed":
        y = x - t
        return 4 * p * np.sinc(2 * p * y / math.pi)
    if variant == "current":
        y = x - v * t
        return 4 * p * v * np.sinc(2 * p * y / math.pi)
    if dt is None or not dt > 0:
        raise InvalidParameter("the classical kernel needs a positive width dt")
    arrival = x / v
    return (2 * math.pi) * np.exp(-0.5 * ((t - arrival) / dt) ** 2) / (math.sqrt(2 * math.pi) * dt)


def toa_kernel_grid(p, t_values, x_grid: Grid1D, dispersion: Dispersion,
                    oversample: int = 4):
    r"""``F_t(x, p)`` on a uniform ``x`` grid for several times, by FFT.

    The ``xi`` integral is a trapezoid sum on the grid conjugate to an
    ``oversample``-times longer copy of ``x_grid``.  The sum is evaluated at
    the requested ``x`` with one non-uniform FFT per time.  The result is
    intended for plotting and for cross-checks against :func:`toa_kernel`.
    """
    span = (x_grid.hi - x_grid.lo) * oversample
    reach = max(abs(x_grid.lo), abs(x_grid.hi)) + float(np.max(np.abs(t_values))) + span
    n_xi = int(2 ** math.ceil(math.log2(max(64, 4 * p * reach / math.pi))))
    xi = np.linspace(-2 * p, 2 * p, n_xi + 1)
    w = np.full(xi.size, xi[1] - xi[0])
    w[0] = w[-1] = 0.5 * w[0]
    amp = np.sqrt(np.abs(dispersion.velocity(p + xi / 2) * dispersion.velocity(p - xi / 2)))
    dk = dispersion.kinetic(p + xi / 2) - dispersion.kinetic(p - xi / 2)
    rows = []
    for t in np.atleast_1d(t_values):
        coeff = w * amp * np.exp(-1j * dk * t)
        rows.append(phase_sweep(coeff, xi, x_grid, sign=+1))
    return np.array(rows)


# --------------------------------------------------------------------------
# momentum quadrature in q = sqrt(p)


def _q_panels(q_max, rate, order=16, min_panels=32):
    """Panels on ``[0, q_max]`` so that each spans at most ``PANEL_PHASE`` of phase.

    ``rate(q)`` bounds ``|d phase / d q|``.
    """
    q = np.linspace(0.0, q_max, 8193)
    r = np.maximum(np.asarray(rate(q), dtype=float), 1e-300)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (r[1:] + r[:-1]) * np.diff(q))])
    total = cum[-1] / PANEL_PHASE
    n_pan = max(min_panels, int(math.ceil(total)))
    # blend phase-equidistributed edges with uniform ones so no panel is huge
    target = np.linspace(0.0, cum[-1], n_pan + 1)
    edges_phase = np.interp(target, cum, q)
    edges_uniform = np.linspace(0.0, q_max, min_panels + 1)
    edges = np.unique(np.concatenate([edges_phase, edges_uniform]))
    x, w = np.polynomial.legendre.leggauss(order)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


@dataclass
class MomentumNodes:
    """Quadrature nodes in momentum with weights including ``dp = 2 q dq``."""

    p: np.ndarray
    weights: np.ndarray
    kinetic: np.ndarray
    velocity: np.ndarray
    taper: np.ndarray


def momentum_nodes(dispersion: Dispersion, p_cut: float, L: float, x_extent: float,
                   t_absmax: float, refine: float = 1.0, p_taper: Optional[float] = None):
    """Nodes on ``(0, TAPER_STRETCH * p_cut]`` with a smooth roll-off after ``p_cut``."""
    top = TAPER_STRETCH * p_cut
    q_max = math.sqrt(top)
    reach = abs(L) + x_extent

    def rate(q):
        p = q * q
        return 2 * q * (reach + dispersion.velocity(p) * t_absmax) * refine

    q, wq = _q_panels(q_max, rate)
    p = q * q
    start = p_cut if p_taper is None else p_taper
    return MomentumNodes(p, 2 * q * wq, dispersion.kinetic(p), dispersion.velocity(p),
                         smooth_taper(p, start, top))


def _weight_function(kind, velocity):
    if kind == "sqrt-velocity":
        return np.sqrt(velocity)
    if kind == "velocity":
        return velocity
    if kind == "unit":
        return np.ones_like(velocity)
    raise InvalidParameter(f"unknown weight {kind!r}")


def amplitude_sweep(psi: MomentumWaveFunction, L: float, t_grid: Grid1D, nodes: MomentumNodes,
                    weight: str = "sqrt-velocity", sign: int = -1,
                    spec: QuadratureSpec = QuadratureSpec()):
    r""":math:`\frac{1}{2\pi}\int_0^\infty dp\,\psi(p)\,w(p)\,e^{ipL \pm iK_p t}` on ``t_grid``.

    ``sign = -1`` gives the positive-frequency (Feynman) amplitude and
    ``+1`` the negative-frequency one.  Global phases ``exp(-+ i m t)`` are
    dropped.
    """
    return _sweep_values(psi(nodes.p), L, t_grid, nodes, weight, sign, spec)


def _cutoff(rho: DensityMatrixMomentum, spec: QuadratureSpec) -> float:
    return spec.p_max if spec.p_max is not None else rho.cutoff(spec.mass_tol)


def _t_absmax(t_grid: Grid1D) -> float:
    return max(abs(t_grid.lo), abs(t_grid.hi))


def _components(rho: DensityMatrixMomentum, bandwidth: float):
    parts = rho.pure_components(bandwidth)
    if parts is None:
        raise InvalidParameter(
            "this state has no pure-state decomposition; use the momentum double integral")
    return parts


def _has_components(rho: DensityMatrixMomentum) -> bool:
    return rho.pure_components(0.0) is not None


def _component_extent(parts) -> float:
    return max(psi.x_extent + abs(shift) for _, psi, shift in parts)


def _group_components(parts):
    """Group ``(weight, psi, shift)`` triples by state: ``[(psi, weights, shifts)]``."""
    groups = {}
    for w, psi, shift in parts:
        entry = groups.setdefault(id(psi), (psi, [], []))
        entry[1].append(w)
        entry[2].append(shift)
    return [(psi, np.array(w), np.array(y)) for psi, w, y in groups.values()]


def _uniform_shifts(shifts) -> Optional[Grid1D]:
    if shifts.size < 3:
        return None
    order = np.argsort(shifts)
    if not np.array_equal(order, np.arange(shifts.size)):
        return None
    step = np.diff(shifts)
    if np.max(np.abs(step - step[0])) > 1e-9 * abs(step[0]):
        return None
    return Grid1D(float(shifts[0]), float(shifts[-1]), shifts.size)


def _sweep_values(values, L, t_grid, nodes, weight, sign, spec):
    c = (values * _weight_function(weight, nodes.velocity) * nodes.taper
         * nodes.weights * np.exp(1j * nodes.p * L) / (2 * math.pi))
    return phase_sweep(c, nodes.kinetic, t_grid, sign=sign, eps=spec.nufft_eps,
                       threads=spec.threads)


# output size of one two-dimensional sweep, in complex samples
_SWEEP_BLOCK = 4_000_000


def _shift_sweep(values, L, shifts, t_grid, nodes, weight, sign, spec):
    """Amplitudes of ``psi`` translated by each shift: an array ``(len(shifts), t_grid.n)``.

    Uniform shift grids are swept in one two-dimensional NUFFT per block
    of shifts.  Other shift sets fall back to one sweep per shift.
    """
    grid = _uniform_shifts(shifts)
    if grid is None:
        return np.array([_sweep_values(values, L + y, t_grid, nodes, weight, sign, spec)
                         for y in shifts])
    c = (values * _weight_function(weight, nodes.velocity) * nodes.taper
         * nodes.weights * np.exp(1j * nodes.p * L) / (2 * math.pi))
    per_block = max(2, _SWEEP_BLOCK // t_grid.n)
    out = np.empty((shifts.size, t_grid.n), dtype=complex)
    for lo in range(0, shifts.size, per_block):
        hi = min(shifts.size, lo + per_block)
        if hi - lo < 2:
            lo = hi - 2
        block = Grid1D(float(shifts[lo]), float(shifts[hi - 1]), hi - lo)
        out[lo:hi] = phase_sweep_2d(c, nodes.p, block, nodes.kinetic, t_grid, sign,
                                    spec.nufft_eps, spec.threads)
    return out


def _mixture_series(rho, L, t_grid, spec, combine, refine=1.0, p_cut=None, p_taper=None):
    """Weighted sum over the translated pure components of ``rho``.

    ``combine(sweep)`` receives ``sweep(weight, sign)``, which returns the
    amplitudes of every component of one state as rows.  It must return one
    real series per row.
    """
    cut = _cutoff(rho, spec) if p_cut is None else p_cut
    parts = _components(rho, TAPER_STRETCH * cut)
    nodes = momentum_nodes(rho.dispersion, cut, L, _component_extent(parts),
                           _t_absmax(t_grid), refine, p_taper)
    total = np.zeros(t_grid.n)
    for psi, weights, shifts in _group_components(parts):
        values = psi(nodes.p)

        def sweep(weight, sign, values=values, shifts=shifts):
            return _shift_sweep(values, L, shifts, t_grid, nodes, weight, sign, spec)

        total += weights @ combine(sweep)
    return total, nodes


def _with_error_estimate(compute, spec: QuadratureSpec, label: str):
    """Run ``compute(refine)`` at two resolutions; return fine values and error."""
    coarse, _ = compute(1.0)
    fine, nodes = compute(1.6)
    err = float(np.max(np.abs(fine - coarse)))
    scale = float(np.max(np.abs(fine)))
    diag = {"nodes": int(nodes.p.size), "error_estimate": err,
            "p_top": float(nodes.p.max())}
    if err > max(spec.abs_tol, 1e3 * spec.rel_tol * scale):
        warnings.warn(f"{label}: quadrature error estimate {err:.3g} exceeds tolerance",
                      NonConvergenceWarning, stacklevel=3)
        diag["converged"] = False
    else:
        diag["converged"] = True
    return fine, err, diag


def pure_state_density(rho: DensityMatrixMomentum, L: float, t_grid: Grid1D,
                       spec: QuadratureSpec = QuadratureSpec(), check: bool = True):
    """Conditional density as a mixture of squared pure-state amplitudes."""
    def compute(refine):
        def comb(sweep):
            return np.abs(sweep("sqrt-velocity", -1)) ** 2
        return _mixture_series(rho, L, t_grid, spec, comb, refine)

    return _finish(compute, spec, check, rho, L, t_grid, "pure-state-squared")


def current_density(rho: DensityMatrixMomentum, L: float, t_grid: Grid1D,
                    spec: QuadratureSpec = QuadratureSpec(), check: bool = True):
    """Current-operator pseudo-density ``Re(A_v A_1^*)`` summed over components."""
    def compute(refine):
        def comb(sweep):
            return (sweep("velocity", -1) * np.conj(sweep("unit", -1))).real
        return _mixture_series(rho, L, t_grid, spec, comb, refine)

    return _finish(compute, spec, check, rho, L, t_grid, "current-operator")


def causal_corrected_density(rho: DensityMatrixMomentum, L: float, t_grid: Grid1D,
                             spec: QuadratureSpec = QuadratureSpec(), check: bool = True):
    """``|A_-|^2 - |A_+|^2``: the density with the retarded propagator."""
    def compute(refine):
        def comb(sweep):
            return np.abs(sweep("sqrt-velocity", -1)) ** 2 - np.abs(sweep("sqrt-velocity", +1)) ** 2
        return _mixture_series(rho, L, t_grid, spec, comb, refine)

    return _finish(compute, spec, check, rho, L, t_grid, "causal-corrected")


def _finish(compute, spec, check, rho, L, t_grid, method):
    if check:
        values, err, diag = _with_error_estimate(compute, spec, method)
    else:
        values, nodes = compute(1.0)
        err, diag = 0.0, {"nodes": int(nodes.p.size)}
    floor = err + 10 * spec.nufft_eps * float(np.max(np.abs(values)))
    diag["p_cut"] = float(_cutoff(rho, spec))
    return TimeSeriesDensity(t_grid, values, L, method, floor, diag)


# --------------------------------------------------------------------------
# momentum double integral


def double_integral_density(rho: DensityMatrixMomentum, L: float, t_grid: Grid1D,
                            spec: QuadratureSpec = QuadratureSpec(), weight: str = "conditional",
                            check: bool = True, block: int = 256):
    r"""Density from the full momentum double integral of ``rho``.

    The kernel is evaluated on a product of the ``q``-panel nodes.  All
    pairs ``(p_j, p_k)`` are then swept over time as frequencies
    ``K_j - K_k``, one row block at a time.  The summand is Hermitian in
    ``(j, k)``, so only pairs with ``k`` at or beyond the current row block
    are swept and those beyond it count twice in the real part.  ``weight``
    selects :math:`\sqrt{v v'}` (conditional) or :math:`(v+v')/2` (current).
    """
    if weight not in ("conditional", "current"):
        raise InvalidParameter(f"unknown weight {weight!r}")
    cut = _cutoff(rho, spec)

    def compute(refine):
        nodes = momentum_nodes(rho.dispersion, cut, L, rho.x_extent, _t_absmax(t_grid), refine)
        # |rho(p, p')| <= sqrt(rho(p, p) rho(p', p')) for a positive kernel, so
        # nodes with negligible diagonal weight cannot contribute
        diag = np.abs(rho.diagonal(nodes.p)) * nodes.taper ** 2
        keep = diag > 1e-32 * diag.max()
        nodes = MomentumNodes(*(getattr(nodes, f)[keep] for f in
                                ("p", "weights", "kinetic", "velocity", "taper")))
        a = nodes.weights * nodes.taper * np.exp(1j * nodes.p * L)
        out = np.zeros(t_grid.n, dtype=complex)
        n = nodes.p.size
        for start in range(0, n, block):
            sl = slice(start, start + block)
            cols = slice(start, n)
            p_col, v_col = nodes.p[cols], nodes.velocity[cols]
            kern = rho.kernel(nodes.p[sl, None], p_col[None, :])
            if weight == "conditional":
                vw = np.sqrt(np.outer(nodes.velocity[sl], v_col))
            else:
                vw = 0.5 * (nodes.velocity[sl, None] + v_col[None, :])
            coeff = kern * vw * a[sl, None] * np.conj(a[cols])[None, :]
            coeff[:, block:] *= 2.0
            freqs = nodes.kinetic[sl, None] - nodes.kinetic[cols][None, :]
            out += phase_sweep(coeff, freqs, t_grid, -1, spec.nufft_eps, spec.threads)
        return out.real / (2 * math.pi), nodes

    method = "momentum-double-integral" if weight == "conditional" else "current-operator"
    return _finish(compute, spec, check, rho, L, t_grid, method)


# --------------------------------------------------------------------------
# Wigner function and phase-space route


def _slice(rho: DensityMatrixMomentum, p, xi):
    return rho.kernel(p - xi / 2, p + xi / 2)


def wigner_function(rho: DensityMatrixMomentum, x_grid: Grid1D, p_grid: Grid1D,
                    n_xi: Optional[int] = None) -> PhaseSpaceField:
    r"""Wigner function :math:`W(x,p) = \int \frac{d\xi}{2\pi}\rho(p-\xi/2,p+\xi/2)e^{-i\xi x}`.

    The ``xi`` integral is a trapezoid sum over the support of the slice,
    which is ``|xi| <= 2p`` for states on positive momenta.  It is evaluated
    at all ``x`` at once with the sweep engine.
    """
    reach = max(abs(x_grid.lo), abs(x_grid.hi)) + rho.x_extent
    cut = rho.cutoff(1e-10)
    rows = []
    for p in p_grid.points:
        if rho.support == POSITIVE:
            half = 2 * max(p, 0.0) * (1 - 1e-12)
        else:
            half = 2 * (cut + abs(p))
        if half <= 0:
            rows.append(np.zeros(x_grid.n))
            continue
        n = n_xi or int(max(257, 2 * math.ceil(4 * half * reach / math.pi) + 1))
        xi = np.linspace(-half, half, n)
        w = np.full(n, xi[1] - xi[0])
        w[0] = w[-1] = 0.5 * w[0]
        vals = phase_sweep(w * _slice(rho, p, xi), xi, x_grid, sign=-1)
        rows.append(vals.real / (2 * math.pi))
    return PhaseSpaceField(x_grid, p_grid, np.array(rows))


def phase_space_density(rho: DensityMatrixMomentum, L: float, t_grid: Grid1D,
                        spec: QuadratureSpec = QuadratureSpec(), check: bool = True,
                        x_points: Optional[int] = None):
    r"""Density from the phase-space form with an explicit Wigner function.

    For every momentum node ``p`` the slice of ``rho`` is transformed to
    :math:`W(x, p)` on a periodic ``x`` grid by FFT.  It is then convolved
    with the sampled localization spread ``u``.  The ``x`` integral against
    :math:`F_t(L - x, p)` is finally taken in the conjugate variable.  By
    Parseval's identity on the periodic grid this equals the direct ``x``
    sum, and it lets every time be swept at once.
    """
    if isinstance(rho, LocalizedDensity):
        base, kernel = rho.base, rho.localization
    else:
        base, kernel = rho, MaximalLocalization()
    if base.support != POSITIVE:
        raise InvalidParameter("the phase-space route needs a post-selected state (p > 0)")
    disp = rho.dispersion
    cut = _cutoff(rho, spec)
    top = TAPER_STRETCH * cut
    tmax = _t_absmax(t_grid)
    spread = kernel.spread_width()
    reach = abs(L) + base.x_extent + spread + tmax * float(disp.velocity(top))

    def compute(refine):
        dx = math.pi / (2 * top) * 0.9
        length = 2.5 * reach * refine + 4 * (base.x_extent + spread)
        n_x = x_points or int(2 ** math.ceil(math.log2(length / dx)))
        dx = length / n_x if x_points is None else dx
        x = (np.arange(n_x) - n_x // 2) * dx
        dxi = 2 * math.pi / (n_x * dx)
        k = np.fft.fftfreq(n_x, d=1.0 / n_x)
        xi = k * dxi
        # spread u sampled on the periodic grid, rolled so x = 0 is index 0
        u = localization_spread(kernel, 0.0, x) if not kernel.is_maximal else None
        u_hat = None
        if u is not None:
            u0 = np.fft.ifftshift(u) * dx
            u_hat = np.fft.fft(u0)
        # momentum nodes for the centre coordinate
        def rate(pc):
            return (2 * pc * tmax * disp.m ** 2 / np.maximum(disp.energy(pc), 1e-300) ** 3
                    + base.x_extent + 1.0) * refine
        pc_grid = np.linspace(0, top, 4097)
        r = rate(pc_grid)
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (r[1:] + r[:-1]) * np.diff(pc_grid))])
        n_pan = max(32, int(math.ceil(cum[-1] / PANEL_PHASE)))
        edges = np.interp(np.linspace(0, cum[-1], n_pan + 1), cum, pc_grid)
        gx, gw = np.polynomial.legendre.leggauss(12)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        pc_nodes = (mid[:, None] + half[:, None] * gx[None, :]).ravel()
        pc_w = (half[:, None] * gw[None, :]).ravel()
        coeffs, freqs = [], []
        out = np.zeros(t_grid.n, dtype=complex)
        pending = 0
        x_shift = np.exp(1j * xi * x[0])
        for pc, wpc in zip(pc_nodes, pc_w):
            inside = np.abs(xi) < 2 * pc
            if not np.any(inside):
                continue
            pm = pc - xi / 2
            pp = pc + xi / 2
            slice_vals = np.where(inside, base.kernel(pm, pp), 0.0)
            slice_vals = slice_vals * smooth_taper(pm, cut, top) * smooth_taper(pp, cut, top)
            # Wigner function on the periodic x grid: W_j = (1/2pi) sum_k dxi s_k e^{-i xi_k x_j}
            wig = np.fft.fft(dxi * slice_vals / x_shift) / (2 * math.pi)
            if u_hat is not None:
                wig = np.fft.ifft(np.fft.fft(wig) * u_hat)
            # x integral of W(x) F_t(L - x) taken in the conjugate variable
            w_hat = np.fft.fft(wig) * dx / x_shift
            g_amp = np.sqrt(np.abs(disp.velocity(pp) * disp.velocity(pm)))
            coef = wpc * dxi * g_amp * w_hat * np.exp(1j * xi * L) / (2 * math.pi)
            coeffs.append(coef[inside])
            freqs.append((disp.kinetic(pp) - disp.kinetic(pm))[inside])
            pending += coeffs[-1].size
            if pending >= 4_000_000:
                out += phase_sweep(np.concatenate(coeffs), np.concatenate(freqs), t_grid, -1,
                                   spec.nufft_eps, spec.threads)
                coeffs, freqs, pending = [], [], 0
        if coeffs:
            out += phase_sweep(np.concatenate(coeffs), np.concatenate(freqs), t_grid, -1,
                               spec.nufft_eps, spec.threads)
        return out.real, _Nodes(pc_nodes, n_x)

    return _finish(compute, spec, check, rho, L, t_grid, "phase-space")


@dataclass
class _Nodes:
    p: np.ndarray
    n_x: int


# --------------------------------------------------------------------------
# dispatcher


def conditional_density(rho: DensityMatrixMomentum, L: float, t_grid: Grid1D,
                        spec: QuadratureSpec = QuadratureSpec(),
                        method: str = "pure-state-squared", check: bool = True) -> TimeSeriesDensity:
    """Arrival-time density of ``rho`` at distance ``L`` by the chosen route."""
    if method == "pure-state-squared":
        return pure_state_density(rho, L, t_grid, spec, check)
    if method == "momentum-double-integral":
        return double_integral_density(rho, L, t_grid, spec, "conditional", check)
    if method == "phase-space":
        return phase_space_density(rho, L, t_grid, spec, check)
    if method == "causal-corrected":
        return causal_corrected_density(rho, L, t_grid, spec, check)
    if method == "current-operator":
        if _has_components(rho):
            return current_density(rho, L, t_grid, spec, check)
        return double_integral_density(rho, L, t_grid, spec, "current", check)
    raise InvalidParameter(f"unknown method {method!r}; expected one of {METHODS}")


# --------------------------------------------------------------------------
# integral over the whole time axis


def _flux_peak_velocity(rho: DensityMatrixMomentum, spec: QuadratureSpec) -> float:
    """Velocity at the maximum of the flux density ``v_p rho(p, p)`` on ``p > 0``."""
    cut = _cutoff(rho, spec)
    p = np.linspace(0, cut, 20001)[1:]
    flux = rho.dispersion.velocity(p) * rho.diagonal(p)
    return float(rho.dispersion.velocity(p[int(np.argmax(flux))]))


def default_time_window(rho: DensityMatrixMomentum, L: float,
                        spec: QuadratureSpec = QuadratureSpec(), factor: float = 3.0):
    """``[0, factor * L / v_peak]`` with ``v_peak`` the flux-peak velocity."""
    v = _flux_peak_velocity(rho, spec)
    return 0.0, factor * abs(L) / v


def arrival_weight(rho: DensityMatrixMomentum, L: float,
                   spec: QuadratureSpec = QuadratureSpec(), observable: str = "conditional",
                   max_segments: int = 14, return_details: bool = False):
    r"""Integral of the density over the whole time axis.

    A central window is integrated on a uniform grid.  Geometrically growing
    windows (ratio 4) follow on each side.  On a window starting at
    :math:`|t| = \tau` only momenta up to about
    :math:`40\max(p_v, \sqrt{2m/\tau}, 1/(L+X))` can still contribute.  Here
    :math:`p_v` is the momentum whose velocity is :math:`(L+X)/\tau` and
    ``X`` is the extent of the state.  The amplitude is smoothly tapered
    beyond that momentum so the grids stay small.  Once the windows decay
    as a stable power law, the rest of the axis is added analytically.
    """
    if observable not in ("conditional", "current"):
        raise InvalidParameter(f"unknown observable {observable!r}")
    disp = rho.dispersion
    cut = _cutoff(rho, spec)
    parts = _components(rho, TAPER_STRETCH * cut)
    extent = _component_extent(parts)
    reach = abs(L) + extent
    v_peak = max(_flux_peak_velocity(rho, spec), 1e-12)
    t0 = 4.0 * reach / v_peak

    def density(lo, hi, p_c):
        k_max = float(disp.kinetic(TAPER_STRETCH * p_c))
        dt_max = 0.25 * math.pi / max(k_max, 1e-300)
        n = int(min(2 ** 21, max(513, math.ceil((hi - lo) / dt_max))))
        n += (n + 1) % 2  # odd for Simpson
        grid = Grid1D(lo, hi, n)
        if observable == "conditional":
            def comb(sweep):
                return np.abs(sweep("sqrt-velocity", -1)) ** 2
        else:
            def comb(sweep):
                return (sweep("velocity", -1) * np.conj(sweep("unit", -1))).real
        total, _ = _mixture_series(rho, L, grid, spec, comb, 1.0, p_c)
        return grid, total

    def simpson(grid, vals):
        w = np.full(grid.n, 2.0)
        w[1::2] = 4.0
        w[0] = w[-1] = 1.0
        return float(np.dot(w, vals) * grid.spacing / 3)

    def cutoff_at(tau, forward):
        scales = [1.0 / reach]
        if disp.m > 0:
            scales.append(math.sqrt(2 * disp.m / tau))
        if forward:
            v = reach / tau
            if v < 1:
                scales.append(float(disp.momentum_for_velocity(v)))
            else:
                return cut
        return min(cut, 40.0 * max(scales))

    grid, vals = density(-t0, t0, cut)
    core = simpson(grid, vals)
    details = {"core": core, "segments": [], "tails": []}
    total = core
    for forward in (True, False):
        lo = t0
        prev_slope = None
        tail = 0.0
        for k in range(max_segments):
            hi = 4 * lo
            p_c = cutoff_at(lo, forward)
            a, b = (lo, hi) if forward else (-hi, -lo)
            g, v = density(a, b, p_c)
            seg = simpson(g, v)
            total += seg
            details["segments"].append((a, b, seg))
            # local power law from the outer quarter of the window
            vv = v if forward else v[::-1]
            tt = g.points if forward else -g.points[::-1]
            n4 = max(8, vv.size // 4)
            end_val = float(np.mean(vv[-n4:]))
            mid_val = float(np.mean(vv[-2 * n4:-n4]))
            t_end = float(np.mean(tt[-n4:]))
            t_mid = float(np.mean(tt[-2 * n4:-n4]))
            if end_val > 0 and mid_val > 0:
                slope = math.log(end_val / mid_val) / math.log(t_end / t_mid)
            else:
                slope = None
            lo = hi
            if abs(seg) <= 1e-12 * abs(total):
                break
            if slope is not None and prev_slope is not None and k >= 3 \
                    and abs(slope - prev_slope) < 0.02 and slope < -1.05:
                beta = -slope
                f_end = float(vv[-1])
                tail = f_end * hi / (beta - 1)
                break
            prev_slope = slope
        total += tail
        details["tails"].append(tail)
    details["total"] = total
    return (total, details) if return_details else total


# --------------------------------------------------------------------------
# transients and the vacuum floor


@dataclass
class TransientReport:
    """Summary of the density before the light-cone time ``L - T``."""

    cone_time: float
    precone_max: float
    peak: float
    precone_ratio: float
    ratio_to_vacuum: Optional[float]
    first_exceedance: Dict[float, Optional[float]]
    rise_onset: Optional[float]
    monotone_rise: bool
    causal_within_resolution: bool
    resolution: float

    def as_dict(self):
        return {k: (v if not isinstance(v, dict) else {str(a): b for a, b in v.items()})
                for k, v in self.__dict__.items()}


def transient_analysis(density: TimeSeriesDensity, T: float, L: float,
                       P0: Optional[float] = None, thresholds=(1e-8, 1e-6, 1e-4),
                       resolution: float = 1e-10, min_rise_points: int = 3) -> TransientReport:
    """Quantify the pre-cone support of a density emitted by a source of duration ``T``.

    The light cone of the switch-on event reaches the detector at
    ``t = L - T``.

    * ``precone_ratio`` is the largest magnitude before the cone relative
      to the peak after it.
    * ``first_exceedance`` lists the earliest time at which the density
      passes ``q * peak`` for each ``q``.
    * ``rise_onset`` is the start of the last non-decreasing run of samples
      that ends at the cone.  The run counts as a rise only when it spans at
      least ``min_rise_points`` samples and climbs by more than the
      density's noise floor.
    * The state is called causal within resolution when the pre-cone
      magnitude is below ``resolution * peak``.
    """
    t = density.times
    vals = density.values
    cone = L - T
    pre = t < cone
    if not np.any(pre) or np.all(pre):
        raise GridTooNarrow(f"time grid [{t[0]}, {t[-1]}] does not straddle the cone at {cone}")
    peak = float(np.max(vals[~pre]))
    if not peak > 0:
        raise EngineError("density has no positive values after the light cone")
    pre_vals = vals[pre]
    pre_max = float(np.max(np.abs(pre_vals)))
    ratio = pre_max / peak
    first = {}
    for q in thresholds:
        hit = np.nonzero(vals >= q * peak)[0]
        first[q] = float(t[hit[0]]) if hit.size else None
    # last monotone non-decreasing run ending at the final pre-cone sample
    idx = pre_vals.size - 1
    while idx > 0 and pre_vals[idx - 1] <= pre_vals[idx]:
        idx -= 1
    run = pre_vals.size - idx
    climb = float(pre_vals[-1] - pre_vals[idx])
    rising = run >= min_rise_points and climb > max(density.noise_floor, 0.0)
    onset = float(t[pre][idx]) if rising else None
    vac = None
    if P0 is not None and P0 > 0:
        vac = pre_max / P0
    return TransientReport(cone, pre_max, peak, ratio, vac, first, onset, bool(rising),
                           bool(ratio <= resolution), resolution)


def vacuum_floor(rtilde_onshell: Callable, dispersion: Dispersion, p_max: float,
                 spec: QuadratureSpec = QuadratureSpec()) -> float:
    r"""Vacuum detection rate :math:`P_0 = \int dp/(4\pi\varepsilon_p)\,\tilde R(p,\varepsilon_p)`.

    The integral runs over ``[-p_max, p_max]`` and is split at ``p = 0``,
    where detector responses are typically discontinuous.
    """
    if not p_max > 0:
        raise InvalidParameter("p_max must be positive")

    def f(p):
        p = np.asarray(p, dtype=float)
        eps = dispersion.energy(p)
        return np.asarray(rtilde_onshell(p, eps), dtype=float) / (4 * math.pi * eps)

    total = 0.0
    for lo, hi in ((-p_max, 0.0), (0.0, p_max)):
        res = adaptive_quad(f, lo, hi, spec.rel_tol, spec.abs_tol, spec.max_subdivisions, 8)
        if not res.converged:
            warnings.warn("vacuum floor integral did not converge", NonConvergenceWarning,
                          stacklevel=2)
        total += float(res.value)
    return total
