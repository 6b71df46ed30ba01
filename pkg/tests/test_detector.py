import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import frozen
import oracles
from reltoa.core import Dispersion
from reltoa.detector import (
    DiscreteMixtureLocalization,
    GaussianLocalization,
    MaximalLocalization,
    absorption_from_kernel,
    as_localization,
    load_absorption_table,
    localization_spread,
    perfect_absorber,
    tabulated_absorption,
)
from reltoa.errors import GridTooNarrow, InvalidParameter, UnphysicalAbsorption, ZeroDetection
from reltoa.states import PureDensity, gaussian_state, post_select

M1 = Dispersion(1.0)
KERNELS = [MaximalLocalization(), GaussianLocalization(0.3), GaussianLocalization(2.0),
           DiscreteMixtureLocalization((0.5, 0.3, 0.2), (0.0, 0.7, 2.0))]


# --------------------------------------------------------------------------
# absorption


def test_perfect_absorber_from_kernel():
    alpha = absorption_from_kernel(lambda p, e: 2 * p, M1)
    p = np.linspace(0.01, 40, 50)
    assert np.allclose(alpha(p), 1.0)
    assert np.all(alpha(-p) == 0)


def test_half_absorber_from_kernel():
    alpha = absorption_from_kernel(lambda p, e: p, M1)
    assert np.allclose(alpha(np.linspace(0.01, 40, 50)), 0.5)


def test_dead_detector_from_kernel():
    alpha = absorption_from_kernel(lambda p, e: 0 * p, M1)
    assert np.all(alpha(np.linspace(0.01, 40, 50)) == 0)
    with pytest.raises(ZeroDetection):
        post_select(PureDensity(gaussian_state(3.0, 1.0, M1)), alpha)


def test_unphysical_absorption_rejected():
    with pytest.raises(UnphysicalAbsorption):
        absorption_from_kernel(lambda p, e: 3 * p, M1)


def test_perfect_absorber_values():
    alpha = perfect_absorber()
    assert list(alpha(np.array([-1.0, 0.0, 1e-9, 5.0]))) == [0.0, 0.0, 1.0, 1.0]


def test_tabulated_absorption(tmp_path):
    path = tmp_path / "alpha.csv"
    path.write_text("# p, alpha\n0, 0\n1, 0.5\n2, 1\n")
    alpha = load_absorption_table(path)
    assert alpha(np.array([0.5, 1.5, 5.0])) == pytest.approx([0.25, 0.75, 1.0])
    with pytest.raises(UnphysicalAbsorption):
        tabulated_absorption([0, 1], [0, 1.5])


# --------------------------------------------------------------------------
# localization kernel laws


@pytest.mark.parametrize("kernel", KERNELS, ids=lambda k: k.label)
def test_unit_diagonal(kernel):
    p = np.random.default_rng(0).uniform(-100, 100, 1000)
    assert np.all(kernel(p, p) == 1.0) or np.allclose(kernel(p, p), 1.0, rtol=0, atol=1e-15)


@pytest.mark.parametrize("kernel", KERNELS, ids=lambda k: k.label)
def test_bounds_and_cauchy_schwarz(kernel):
    rng = np.random.default_rng(1)
    p, q = rng.uniform(-20, 20, (2, 10_000))
    s = kernel(p, q)
    assert np.all(np.abs(s) <= 1 + 1e-15)
    assert np.all(s ** 2 <= kernel(p, p) * kernel(q, q) + 1e-15)


@pytest.mark.parametrize("kernel", KERNELS[:3], ids=lambda k: k.label)
def test_gaussian_and_maximal_are_nonnegative(kernel):
    rng = np.random.default_rng(2)
    p, q = rng.uniform(-20, 20, (2, 10_000))
    s = kernel(p, q)
    assert np.all(s >= 0) and np.all(s <= 1)
    assert np.array_equal(s, kernel(q, p))


@pytest.mark.parametrize("kernel", KERNELS, ids=lambda k: k.label)
def test_gram_matrix_positive(kernel):
    p = np.random.default_rng(3).uniform(-5, 5, 120)
    ev = np.linalg.eigvalsh(kernel(p[:, None], p[None, :]))
    assert ev.min() >= -1e-10 * ev.max()


@given(p=st.floats(-50, 50), q=st.floats(-50, 50), shift=st.floats(-50, 50))
def test_gaussian_translation_invariance(p, q, shift):
    k = GaussianLocalization(0.8)
    assert float(k(p + shift, q + shift)) == pytest.approx(float(k(p, q)), rel=1e-9, abs=1e-300)


@pytest.mark.parametrize("kernel", KERNELS[1:], ids=lambda k: k.label)
def test_mixture_reproduces_profile(kernel):
    bandwidth = 10.0
    w, y = kernel.mixture(bandwidth)
    q = np.linspace(-bandwidth, bandwidth, 301)
    approx = np.cos(np.outer(q, y)) @ w
    assert np.max(np.abs(approx - kernel.profile(q))) <= 1e-13
    assert np.all(w >= 0)


def test_invalid_kernels():
    with pytest.raises(InvalidParameter):
        GaussianLocalization(0.0)
    with pytest.raises(InvalidParameter):
        DiscreteMixtureLocalization((0.5, 0.6), (0.0, 1.0))
    with pytest.raises(InvalidParameter):
        DiscreteMixtureLocalization((1.5, -0.5), (0.0, 1.0))
    with pytest.raises(InvalidParameter):
        as_localization(lambda p, q: 1.0)
    assert isinstance(as_localization(0.0), MaximalLocalization)
    assert isinstance(as_localization(0.4), GaussianLocalization)


# --------------------------------------------------------------------------
# localization spread


@pytest.mark.parametrize("sigma", [0.25, 1.0, 3.0])
def test_gaussian_spread_closed_form(sigma):
    k = GaussianLocalization(sigma)
    x = np.linspace(-15 * sigma, 15 * sigma, 601)
    u = localization_spread(k, 1.7, x)
    assert np.max(np.abs(u - k.spread(x))) <= 1e-8
    assert np.sum(u) * (x[1] - x[0]) == pytest.approx(1.0, abs=1e-6)


def test_gaussian_spread_matches_numeric_oracle():
    k = GaussianLocalization(1.0)
    x = np.linspace(-14.0, 14.0, 41)
    assert 0.7 in np.round(x, 12)
    u = localization_spread(k, -3.0, x)
    i = int(np.argmin(np.abs(x - 0.7)))
    assert u[i] == pytest.approx(frozen.GAUSSIAN_SPREAD_AT_0_7, abs=1e-8)
    assert u[i] == pytest.approx(oracles.gaussian_spread_numeric(1.0, 0.7), abs=1e-8)


@given(p=st.floats(-100, 100))
def test_spread_independent_of_momentum(p):
    k = GaussianLocalization(0.6)
    x = np.linspace(-9, 9, 181)
    assert np.allclose(localization_spread(k, p, x), localization_spread(k, 0.0, x), atol=1e-12)


def test_spread_zero_mean():
    k = GaussianLocalization(1.0)
    x = np.linspace(-15, 15, 601)
    u = localization_spread(k, 2.3, x)
    assert abs(np.sum(x * u) * (x[1] - x[0])) <= 1e-8


def test_maximal_spread_is_discrete_delta():
    x = np.linspace(-1, 1, 21)
    u = localization_spread(MaximalLocalization(), 4.0, x)
    dx = x[1] - x[0]
    assert u[10] == pytest.approx(1 / dx)
    assert np.count_nonzero(u) == 1
    x_off = np.linspace(-1.03, 0.97, 21)
    u_off = localization_spread(MaximalLocalization(), 4.0, x_off)
    cell = int(np.argmin(np.abs(x_off)))
    assert u_off[cell] * dx == pytest.approx(1.0)


@pytest.mark.parametrize("kernel", KERNELS, ids=lambda k: k.label)
def test_bochner_nonnegativity_on_random_momenta(kernel):
    x = np.linspace(-40, 40, 1601)
    for p in np.random.default_rng(5).uniform(-30, 30, 10):
        u = localization_spread(kernel, p, x)
        assert u.min() >= -1e-10
        assert np.sum(u) * (x[1] - x[0]) == pytest.approx(1.0, abs=1e-6)


def test_narrow_grid_raises():
    with pytest.raises(GridTooNarrow):
        localization_spread(GaussianLocalization(2.0), 0.0, np.linspace(-1, 1, 101))
    with pytest.raises(GridTooNarrow):
        localization_spread(MaximalLocalization(), 0.0, np.linspace(1, 2, 11))
