import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import frozen
from reltoa.core import (
    Dispersion,
    Grid1D,
    QuadratureSpec,
    SampledComplex,
    gaussian_switching_identity_check,
    integrate_oscillatory,
    momentum_cutoff,
    phase_sweep,
    phase_sweep_2d,
    smooth_taper,
)
from reltoa.errors import InvalidDomain, InvalidParameter, NonConvergenceWarning

ADAPTIVE = QuadratureSpec()
GRID = QuadratureSpec(method="fft-grid")


def one(p):
    return np.ones_like(np.asarray(p, dtype=float))


def zero(p):
    return np.zeros_like(np.asarray(p, dtype=float))


# --------------------------------------------------------------------------
# dispersion and grids


@given(m=st.floats(0, 1e3), p=st.floats(-1e4, 1e4))
def test_dispersion_shell_relation(m, p):
    d = Dispersion(m)
    eps = float(d.energy(p))
    assert eps >= abs(p)
    assert eps * eps - p * p == pytest.approx(m * m, rel=1e-12, abs=1e-9 * max(eps, 1) ** 2)


@given(m=st.floats(1e-3, 1e3), p=st.floats(-1e4, 1e4))
def test_massive_velocity_below_light(m, p):
    v = float(Dispersion(m).velocity(p))
    assert -1 < v < 1 or abs(p) / m > 1e7


@given(p=st.floats(1e-6, 1e6))
def test_massless_velocity_is_one(p):
    d = Dispersion(0.0)
    assert float(d.energy(p)) == p
    assert float(d.velocity(p)) == 1.0
    assert float(d.velocity(-p)) == -1.0


@given(m=st.floats(1e-2, 1e2), p=st.floats(0, 1e3))
def test_kinetic_energy_without_cancellation(m, p):
    d = Dispersion(m)
    assert float(d.kinetic(p)) == pytest.approx(math.sqrt(p * p + m * m) - m,
                                                rel=1e-9, abs=1e-12 * m)


@given(m=st.floats(1e-2, 1e2), v=st.floats(0, 0.999))
def test_momentum_for_velocity_inverts_velocity(m, v):
    d = Dispersion(m)
    assert float(d.velocity(d.momentum_for_velocity(v))) == pytest.approx(v, abs=1e-12)


def test_dispersion_rejects_negative_mass():
    with pytest.raises(InvalidParameter):
        Dispersion(-1.0)


@given(lo=st.floats(-1e3, 1e3), width=st.floats(1e-3, 1e3), n=st.integers(2, 500))
def test_grid_points(lo, width, n):
    g = Grid1D(lo, lo + width, n)
    pts = g.points
    assert pts.size == n
    assert np.all(np.diff(pts) > 0)
    assert g.spacing == pytest.approx(width / (n - 1))
    assert pts[0] == lo


@pytest.mark.parametrize("args", [(0, 0, 5), (1, 0, 5), (0, 1, 1), (0, math.inf, 4)])
def test_grid_rejects_bad_bounds(args):
    with pytest.raises(InvalidDomain):
        Grid1D(*args)


def test_grid_trapezoid():
    g = Grid1D(0, 1, 1001)
    assert g.trapezoid(g.points ** 2) == pytest.approx(1 / 3, abs=1e-6)


def test_sampled_complex_checks_length():
    g = Grid1D(0, 1, 5)
    s = SampledComplex(g, np.arange(5) * (1 + 1j))
    assert s(0.5) == pytest.approx(2 + 2j)
    with pytest.raises(InvalidParameter):
        SampledComplex(g, np.zeros(4))


def test_quadrature_spec_validation():
    with pytest.raises(InvalidParameter):
        QuadratureSpec(rel_tol=0)
    with pytest.raises(InvalidParameter):
        QuadratureSpec(method="simpson")
    with pytest.raises(InvalidParameter):
        QuadratureSpec(max_subdivisions=0)
    with pytest.raises(InvalidParameter):
        QuadratureSpec(p_max=-1.0)


# --------------------------------------------------------------------------
# oscillatory integrals


@pytest.mark.parametrize("spec", [ADAPTIVE, GRID])
def test_constant_integrand(spec):
    res = integrate_oscillatory(one, zero, (0, 1), spec)
    assert res.value == pytest.approx(1.0, abs=1e-14)
    assert res.converged


@pytest.mark.parametrize("spec", [ADAPTIVE, GRID])
def test_linear_phase_antiderivative(spec):
    w = 50.0
    res = integrate_oscillatory(one, lambda p: w * p, (0, 1), spec)
    exact = (np.exp(1j * w) - 1) / (1j * w)
    assert abs(res.value - exact) <= max(spec.abs_tol, spec.rel_tol * abs(exact)) * 10


@pytest.mark.parametrize("spec", [ADAPTIVE, GRID])
def test_matches_dense_trapezoid_oracle(spec):
    d = Dispersion(1.0)
    res = integrate_oscillatory(np.sqrt, lambda p: 10 * p - 12 * d.energy(p), (0, 20), spec)
    ref = frozen.OSCILLATORY_TRAPEZOID
    assert abs(res.value - ref) <= 1e-6 * abs(ref)


def test_invalid_domain():
    with pytest.raises(InvalidDomain):
        integrate_oscillatory(one, zero, (1, 1))
    with pytest.raises(InvalidDomain):
        integrate_oscillatory(one, zero, (0, math.inf))


def test_nonconvergence_is_flagged_not_raised():
    spec = QuadratureSpec(rel_tol=1e-14, abs_tol=1e-300, max_subdivisions=1)
    with pytest.warns(NonConvergenceWarning):
        res = integrate_oscillatory(lambda p: np.abs(p - 0.3) ** 0.5, lambda p: 400 * p ** 2,
                                    (0, 1), spec)
    assert not res.converged
    assert math.isfinite(abs(res.value))


def _random_pair(seed):
    rng = np.random.default_rng(seed)
    a, b, c = rng.uniform(-2, 2, 3)
    w, k = rng.uniform(0, 40, 2)

    def f(p):
        return (a + b * p + c * p ** 2) * np.exp(-p) + 1j * np.cos(3 * p)

    def phase(p):
        return w * p + k * np.sqrt(1 + p * p)

    return f, phase


@pytest.mark.parametrize("seed", range(20))
def test_methods_agree_on_random_pairs(seed):
    f, phase = _random_pair(seed)
    r1 = integrate_oscillatory(f, phase, (0, 3), ADAPTIVE)
    r2 = integrate_oscillatory(f, phase, (0, 3), GRID)
    scale = max(abs(r1.value), 1.0)
    tol = ADAPTIVE.rel_tol * scale + GRID.rel_tol * scale + 2 * ADAPTIVE.abs_tol
    assert abs(r1.value - r2.value) <= tol


@given(a=st.floats(-5, 5), b=st.floats(-5, 5), seed=st.integers(0, 1000))
def test_linearity(a, b, seed):
    f1, phase = _random_pair(seed)
    f2, _ = _random_pair(seed + 1)
    lhs = integrate_oscillatory(lambda p: a * f1(p) + b * f2(p), phase, (0, 2)).value
    rhs = (a * integrate_oscillatory(f1, phase, (0, 2)).value
           + b * integrate_oscillatory(f2, phase, (0, 2)).value)
    assert abs(lhs - rhs) <= 1e-7 * max(1.0, abs(lhs))


@given(seed=st.integers(0, 1000))
def test_conjugation_symmetry(seed):
    f, phase = _random_pair(seed)
    direct = integrate_oscillatory(f, phase, (0, 2)).value
    mirrored = integrate_oscillatory(lambda p: np.conj(f(p)), lambda p: -phase(p), (0, 2)).value
    assert abs(mirrored - np.conj(direct)) <= 1e-7 * max(1.0, abs(direct))


# --------------------------------------------------------------------------
# sweeps and helpers


@pytest.mark.parametrize("sign", [-1, 1])
def test_phase_sweep_matches_direct_sum(sign):
    rng = np.random.default_rng(1)
    c = rng.normal(size=300) + 1j * rng.normal(size=300)
    w = rng.uniform(-80, 80, 300)
    g = Grid1D(-3.0, 7.0, 257)
    direct = np.exp(sign * 1j * np.outer(g.points, w)) @ c
    assert np.max(np.abs(phase_sweep(c, w, g, sign) - direct)) <= 1e-11 * np.abs(c).sum()


def test_phase_sweep_2d_matches_direct_sum():
    rng = np.random.default_rng(2)
    c = rng.normal(size=200) + 1j * rng.normal(size=200)
    fx = rng.uniform(-30, 30, 200)
    ft = rng.uniform(-50, 50, 200)
    gx = Grid1D(-1.0, 2.0, 33)
    gt = Grid1D(0.0, 5.0, 65)
    out = phase_sweep_2d(c, fx, gx, ft, gt, -1)
    direct = np.einsum("j,xj,tj->xt", c, np.exp(1j * np.outer(gx.points, fx)),
                       np.exp(-1j * np.outer(gt.points, ft)))
    assert out.shape == (33, 65)
    assert np.max(np.abs(out - direct)) <= 1e-11 * np.abs(c).sum()


def test_phase_sweep_is_deterministic():
    rng = np.random.default_rng(3)
    c = rng.normal(size=5000) + 0j
    w = rng.uniform(-10, 10, 5000)
    g = Grid1D(0, 10, 128)
    a = phase_sweep(c, w, g, chunk=1000)
    b = phase_sweep(c, w, g, chunk=1000)
    assert np.array_equal(a, b)


def test_smooth_taper_edges():
    assert smooth_taper(1.0, 2.0, 3.0) == pytest.approx(1.0, abs=1e-15)
    assert smooth_taper(3.0, 2.0, 3.0) < 1e-9
    vals = smooth_taper(np.linspace(0, 4, 200), 2.0, 3.0)
    assert np.all(np.diff(vals) <= 0)


def test_momentum_cutoff_gaussian():
    def dens(p):
        return np.exp(-p ** 2 / 2) / math.sqrt(2 * math.pi)

    cut = momentum_cutoff(dens, 1.0, 1.0, tol=1e-8, lower=None)
    from scipy.special import erfc

    assert erfc(cut / math.sqrt(2)) <= 1e-8
    assert erfc(0.9 * cut / math.sqrt(2)) > 1e-8


# --------------------------------------------------------------------------
# Gaussian switching identity


def test_switching_identity_at_origin():
    assert gaussian_switching_identity_check(1.0, 1.0, [[0, 0, 0, 0]]) == 0.0


def test_switching_identity_random_points():
    rng = np.random.default_rng(4)
    pts = rng.uniform(-3, 3, size=(100, 4))
    assert gaussian_switching_identity_check(1.0, 1.0, pts) <= 1e-12


def test_switching_identity_anisotropic_grid():
    axis = np.array([-1.0, 1.0])
    pts = np.array(np.meshgrid(axis, axis, axis, axis)).reshape(4, -1).T
    assert pts.shape == (16, 4)
    assert gaussian_switching_identity_check(0.5, 2.0, pts) <= 1e-12


@given(dt=st.floats(0.1, 10), dx=st.floats(0.1, 10), seed=st.integers(0, 10_000))
def test_switching_identity_property(dt, dx, seed):
    pts = np.random.default_rng(seed).uniform(-3, 3, size=(20, 4))
    assert gaussian_switching_identity_check(dt, dx, pts) <= 1e-12


def test_switching_identity_rejects_bad_width():
    with pytest.raises(InvalidParameter):
        gaussian_switching_identity_check(0.0, 1.0, [[0, 0, 0, 0]])


def test_no_warning_for_smooth_integral():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        integrate_oscillatory(np.exp, zero, (0, 1))
