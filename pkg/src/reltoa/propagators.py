r"""Free Klein-Gordon propagators in one space dimension and the fields of classical sources.

Both kernels are written as momentum integrals over :math:`p \ge 0`::

    feynman(t, x)  = (1/2pi) int cos(p x) exp(-i eps |t|) / eps dp
    retarded(t, x) = (1/2pi) int cos(p x) sin(eps t) / eps dp      (t > 0, zero otherwise)

Neither integral converges absolutely.  Each is evaluated with a damping
factor ``exp(-eta eps)`` at three values of ``eta`` and extrapolated to
``eta = 0`` with a Richardson step that removes the first- and second-order
terms.  Off the light-cone the damped value is the propagator at the
complex time ``t - i eta``, an analytic function of ``eta``, so the
extrapolation error is of third order.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (Dispersion, Grid1D, QuadratureResult, QuadratureSpec,
                   smooth_taper)
from .errors import (EngineError, InvalidParameter, NonConvergence,
                     NonConvergenceWarning)
from .states import SourceProfile

KINDS = ("feynman", "retarded")
DAMPING_STEPS = (1e-2, 5e-3, 2.5e-3)
# Damping is switched off once exp(-eta * eps) drops below exp(-DAMPING_DEPTH).
DAMPING_DEPTH = 40.0
# Smallest damping length, as a fraction of max(|t|, |x|).
CONE_FLOOR = 0.02
# Sources: the momentum integral is tapered between SOURCE_CUT and
# TAPER_STRETCH * SOURCE_CUT times the source's momentum scale.
SOURCE_CUT = 200.0
TAPER_STRETCH = 1.5
_CHUNK = 2_000_000


def _check_kind(kind: str) -> str:
    if kind not in KINDS:
        raise InvalidParameter(f"unknown propagator kind {kind!r}; expected one of {KINDS}")
    return kind


def _richardson(f1, f2, f4):
    """Extrapolate ``f(h), f(h/2), f(h/4)`` to ``h = 0`` removing ``h`` and ``h**2``.

    Returns the extrapolated value and the change relative to the two-point
    (first-order) extrapolation, which serves as the error estimate.
    """
    best = f1 / 3.0 - 2.0 * f2 + 8.0 / 3.0 * f4
    linear = 2.0 * f4 - f2
    return best, abs(best - linear)


def _momentum_panels(p_stop: float, rate: float, scale: float, order: int = 16):
    """Composite Gauss-Legendre nodes on ``[0, p_stop]``.

    Panels are at most half an oscillation wide for phase rate ``rate`` and
    are graded geometrically towards ``p = 0`` down to ``scale / 64`` so the
    ``eps`` structure near the mass shell origin is resolved.
    """
    n_uniform = max(4, int(math.ceil(p_stop * rate / math.pi)))
    edges = np.linspace(0.0, p_stop, n_uniform + 1)
    if scale > 0:
        lo = min(scale / 64.0, p_stop / 2.0)
        grade = np.geomspace(lo, min(8.0 * scale, p_stop), 24)
        edges = np.unique(np.concatenate([edges, [0.0], grade]))
    x, w = np.polynomial.legendre.leggauss(order)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def _damping_length(dispersion: Dispersion, t: float, x: float,
                    length_scale: Optional[float]) -> float:
    if length_scale is not None:
        if not length_scale > 0:
            raise InvalidParameter(f"length_scale must be > 0, got {length_scale}")
        return float(length_scale)
    # The extrapolation error grows like (eta / distance to the light-cone)^3,
    # so the damping length never exceeds that distance (with a floor that
    # keeps the work bounded for points almost on the cone).
    reach = max(abs(t), abs(x))
    cone_gap = max(abs(abs(x) - abs(t)), CONE_FLOOR * reach)
    compton = 1.0 / dispersion.m if dispersion.m > 0 else math.inf
    ell = min(compton, cone_gap)
    if not (math.isfinite(ell) and ell > 0):
        ell = max(reach, 1.0)
    return ell


def _damped_integrals(kind, dispersion, t, x, etas):
    """Damped momentum integrals for each ``eta`` in ``etas``."""
    m = dispersion.m
    rate = abs(x) + abs(t) + 1e-300
    p_stop = DAMPING_DEPTH / min(etas)
    nodes, weights = _momentum_panels(p_stop, max(rate, 1.0 / p_stop), m)
    totals = np.zeros(len(etas), dtype=complex)
    for start in range(0, nodes.size, _CHUNK):
        p = nodes[start:start + _CHUNK]
        w = weights[start:start + _CHUNK]
        eps = dispersion.energy(p)
        if kind == "feynman":
            g = np.exp(-1j * eps * abs(t)) / eps
        elif m == 0:
            g = t * np.sinc(eps * t / math.pi)
        else:
            g = np.sin(eps * t) / eps
        base = w * np.cos(p * x) * g
        for i, eta in enumerate(etas):
            totals[i] += np.sum(base * np.exp(-eta * eps))
    return totals / (2 * math.pi), nodes.size


def propagator_result(kind: str, dispersion: Dispersion, t: float, x: float,
                      spec: QuadratureSpec = QuadratureSpec(),
                      length_scale: Optional[float] = None) -> QuadratureResult:
    """Propagator value together with its extrapolation error estimate.

    ``length_scale`` sets the unit of the damping parameter.  By default it
    is the smaller of the Compton length ``1/m`` and the distance
    ``||x| - |t||`` to the light-cone, floored at ``0.02 max(|t|, |x|)``.
    """
    _check_kind(kind)
    t = float(t)
    x = float(x)
    if not (math.isfinite(t) and math.isfinite(x)):
        raise InvalidParameter(f"propagator needs finite (t, x), got ({t}, {x})")
    if kind == "feynman" and dispersion.m == 0:
        raise InvalidParameter("the massless Feynman propagator diverges at p = 0 in one dimension")
    if kind == "retarded" and t <= 0:
        return QuadratureResult(0j, 0.0, 0, True, 0)
    ell = _damping_length(dispersion, t, x, length_scale)
    etas = [s * ell for s in DAMPING_STEPS]
    vals, n_eval = _damped_integrals(kind, dispersion, t, x, etas)
    value, err = _richardson(*vals)
    if kind == "retarded":
        value = complex(value.real, 0.0)
    if not np.isfinite(value):
        raise NonConvergence(f"propagator evaluation at (t={t}, x={x}) is not finite")
    scale = max(abs(value), spec.abs_tol)
    converged = err <= max(spec.abs_tol, 1e3 * spec.rel_tol * scale)
    return QuadratureResult(complex(value), float(err), 3, bool(converged), n_eval)


def propagator(kind: str, dispersion: Dispersion, t: float, x: float,
               spec: QuadratureSpec = QuadratureSpec(),
               length_scale: Optional[float] = None) -> complex:
    """Feynman or retarded propagator at the spacetime point ``(t, x)``.

    The retarded kernel is causal: it is zero for ``t <= 0`` and real.  The
    Feynman kernel depends on ``|t|`` and is complex.  A warning is issued
    when the extrapolation error estimate exceeds the tolerance; points on
    the light-cone itself, where the kernels are singular or discontinuous,
    typically trigger it.
    """
    res = propagator_result(kind, dispersion, t, x, spec, length_scale)
    if not res.converged:
        warnings.warn(f"{kind} propagator at (t={t}, x={x}): extrapolation error "
                      f"{res.error:.3g} exceeds tolerance", NonConvergenceWarning, stacklevel=2)
    return res.value


@dataclass(frozen=True)
class SpacetimeField:
    """Field values on a tensor product of times and positions (time-major)."""

    times: np.ndarray
    positions: np.ndarray
    values: np.ndarray
    kind: str = ""
    error: float = 0.0

    def __post_init__(self):
        shape = (np.size(self.times), np.size(self.positions))
        if np.shape(self.values) != shape:
            raise EngineError(f"field values have shape {np.shape(self.values)}, expected {shape}")
        if not np.all(np.isfinite(self.values)):
            raise EngineError("field contains non-finite values")

    def at(self, i: int, j: int) -> complex:
        return complex(self.values[i, j])

    @property
    def peak(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0


def _as_points(values) -> np.ndarray:
    if isinstance(values, Grid1D):
        return values.points
    arr = np.atleast_1d(np.asarray(values, dtype=float))
    if arr.ndim != 1 or not np.all(np.isfinite(arr)):
        raise InvalidParameter("grid points must be a finite one-dimensional array")
    return arr


def _time_kernel(kind, source: SourceProfile, eps, t):
    """Time convolution of the source profile with the kernel's time dependence.

    Feynman: ``int g(t') exp(-i eps |t - t'|) dt'``; retarded:
    ``int_{t' < t} g(t') sin(eps (t - t')) dt'``.
    """
    earlier_plus = source.time_transform(eps, hi=t)        # int_{t'<t} g e^{+i eps t'}
    phase = np.exp(-1j * eps * t)
    if kind == "feynman":
        later_minus = source.time_transform(-eps, lo=t)    # int_{t'>t} g e^{-i eps t'}
        return phase * earlier_plus + np.conj(phase) * later_minus
    earlier_minus = source.time_transform(-eps, hi=t)
    return (np.conj(phase) * earlier_minus - phase * earlier_plus) / 2j


def _source_field_values(kind, source, dispersion, times, positions, p_cut):
    m = dispersion.m
    reach = float(np.max(np.abs(positions))) + float(np.max(np.abs(times))) \
        + source.duration + source.width
    p_stop = TAPER_STRETCH * p_cut
    nodes, weights = _momentum_panels(p_stop, max(reach, 1.0 / p_stop), m if m > 0 else p_cut)
    eps = dispersion.energy(nodes)
    taper = smooth_taper(nodes, p_cut, p_stop)
    h_plus = source.space_transform(nodes)
    h_minus = source.space_transform(-nodes)
    base = weights * taper / (4 * math.pi * eps)
    out = np.empty((times.size, positions.size), dtype=complex)
    spatial = (np.exp(1j * np.outer(nodes, positions)) * h_plus[:, None]
               + np.exp(-1j * np.outer(nodes, positions)) * h_minus[:, None])
    for i, t in enumerate(times):
        g = _time_kernel(kind, source, eps, float(t))
        out[i] = (base * g) @ spatial
    if kind == "retarded":
        out = out.real.astype(complex)
    return out


def propagate_source(kind: str, source: SourceProfile, dispersion: Dispersion,
                     t_grid, x_points, spec: QuadratureSpec = QuadratureSpec()) -> SpacetimeField:
    r"""Field radiated by a classical source, propagated with the chosen kernel.

    Evaluates :math:`\int dt' dx'\, D(t - t', x - x') J(t', x')` for the
    separable source ``J = g(t) h(x)`` through the momentum representation
    :math:`\int dp/(4\pi\varepsilon_p)\, e^{ipx} \tilde h(p)\, G(\varepsilon_p, t)`
    in which the time convolution ``G`` is done in closed form.  The
    momentum integral converges absolutely and is tapered smoothly at a
    cutoff proportional to the source's momentum scale; the error estimate
    compares two cutoffs.
    """
    _check_kind(kind)
    m = dispersion.m
    if kind == "feynman" and m == 0:
        raise InvalidParameter("the massless Feynman propagator diverges at p = 0 in one dimension")
    times = _as_points(t_grid)
    positions = _as_points(x_points)
    scale = max(m, math.pi / source.duration,
                1.0 / source.width if source.width > 0 else 0.0)
    p_cut = spec.p_max if spec.p_max is not None else SOURCE_CUT * scale
    coarse = _source_field_values(kind, source, dispersion, times, positions, p_cut)
    fine = _source_field_values(kind, source, dispersion, times, positions, 1.6 * p_cut)
    err = float(np.max(np.abs(fine - coarse))) if fine.size else 0.0
    peak = float(np.max(np.abs(fine))) if fine.size else 0.0
    if err > max(spec.abs_tol, 1e3 * spec.rel_tol * peak):
        warnings.warn(f"{kind} source field: cutoff change moves values by {err:.3g}",
                      NonConvergenceWarning, stacklevel=2)
    return SpacetimeField(times, positions, fine, kind, err)
