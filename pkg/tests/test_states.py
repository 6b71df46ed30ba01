import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import frozen
import oracles
from reltoa.core import Dispersion, Grid1D
from reltoa.detector import Absorption, GaussianLocalization, MaximalLocalization, perfect_absorber
from reltoa.errors import InvalidParameter, NegativeDensity, ZeroDetection
from reltoa.states import (
    FULL,
    POSITIVE,
    LocalizedDensity,
    PointSinusoid,
    PureDensity,
    SampledDensity,
    SeparableSource,
    apply_localization,
    box_state,
    gaussian_state,
    post_select,
    source_state,
)

M1 = Dispersion(1.0)


# --------------------------------------------------------------------------
# box eigenstates


def test_box_at_zero_momentum():
    psi = box_state(1.0, 1, M1)
    assert psi(0.0) == pytest.approx(2 * math.sqrt(2) / math.pi, rel=1e-15)
    assert abs(psi(0.0) - frozen.BOX_AT_ZERO) < 1e-14


@pytest.mark.parametrize("offset", [0.0, 1e-9, -3e-4, 2e-3])
def test_box_near_pole_matches_direct_transform(offset):
    psi = box_state(1.0, 1, M1)
    p = math.pi + offset
    ref = frozen.BOX_AT_POLE if offset == 0 else oracles.box_transform_direct(p)
    assert abs(psi(p) - ref) <= 1e-8


@given(p=st.floats(-60, 60))
def test_box_matches_direct_transform_everywhere(p):
    psi = box_state(1.0, 1, M1)
    assert abs(psi(p) - oracles.box_transform_direct(p)) <= 1e-8


@pytest.mark.parametrize("n", [2, 3])
def test_higher_box_levels(n):
    psi = box_state(1.0, n, M1)
    for p in (0.3, n * math.pi, -n * math.pi + 1e-4, 17.0):
        assert abs(psi(p) - oracles.box_transform_direct(p, 1.0, n)) <= 1e-8


def test_box_inverse_transform_reproduces_sine():
    psi = box_state(1.0, 1, M1)
    x, psi_x = oracles.box_position_from_momentum(psi, 1.0, 4096)
    target = np.where((x >= 0) & (x <= 1), math.sqrt(2) * np.sin(math.pi * x), 0.0)
    err = math.sqrt(np.sum(np.abs(psi_x - target) ** 2) * (x[1] - x[0]))
    assert err <= 1e-4


def test_box_norm_parseval():
    assert box_state(1.0, 1, M1).norm() == pytest.approx(1.0, abs=1e-6)
    assert box_state(2.5, 3, Dispersion(4.0)).norm() == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("a,n", [(0.0, 1), (-1.0, 1), (1.0, 0), (1.0, 1.5)])
def test_box_rejects_invalid(a, n):
    with pytest.raises(InvalidParameter):
        box_state(a, n, M1)


# --------------------------------------------------------------------------
# source states


def test_source_closed_form_at_zero_momentum():
    psi = source_state(PointSinusoid(1.0), M1)
    closed = -math.pi * (1 + np.exp(-1j)) / (math.pi ** 2 - 1)
    assert psi(0.0) * math.sqrt(2.0) == pytest.approx(closed, rel=1e-14)
    assert abs(psi(0.0) - frozen.SOURCE_AT_ZERO) < 1e-14


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
@pytest.mark.parametrize("offset", [0.0, 1e-7, -5e-4, 3e-3])
def test_source_near_pole_matches_time_quadrature(offset):
    psi = source_state(PointSinusoid(1.0), M1)
    p = frozen.SOURCE_POLE_MOMENTUM + offset
    ref = frozen.SOURCE_AT_POLE if offset == 0 else oracles.source_amplitude_direct(p)
    assert abs(psi(p) - ref) <= 1e-8


@given(p=st.floats(0, 200))
def test_source_is_even(p):
    psi = source_state(PointSinusoid(1.3, 2.0), M1)
    assert psi(-p) == psi(p)


def test_source_has_negative_momentum_support():
    psi = source_state(PointSinusoid(1.0), M1)
    p = np.linspace(-50, 0, 5001)
    assert np.trapezoid(np.abs(psi(p)) ** 2, p) > 0


def test_source_amplitude_is_linear():
    p = np.linspace(-5, 5, 11)
    one = source_state(PointSinusoid(1.0, 1.0), M1)(p)
    two = source_state(PointSinusoid(1.0, 2.0), M1)(p)
    assert np.allclose(two, 2 * one, rtol=1e-15, atol=0)


def test_separable_source_factorizes():
    width = 0.4
    sep = SeparableSource(lambda t: np.sin(math.pi * t), lambda x: np.full(np.shape(x), 1 / width),
                          1.0, width)
    p = np.array([0.0, 0.7, 3.0, -5.0])
    a = source_state(sep, M1)(p)
    # uniform profile on [-w, 0]: int h e^{-ipx} dx = (e^{ipw} - 1) / (i p w)
    safe = np.where(p == 0, 1.0, p)
    h = np.where(p == 0, 1.0, (np.exp(1j * safe * width) - 1) / (1j * safe * width))
    b = source_state(PointSinusoid(1.0), M1)(p) * h
    assert np.allclose(a, b, rtol=1e-10, atol=1e-14)


def test_source_rejects_invalid():
    with pytest.raises(InvalidParameter):
        PointSinusoid(0.0)
    with pytest.raises(InvalidParameter):
        source_state(PointSinusoid(1.0), Dispersion(0.0))


# --------------------------------------------------------------------------
# post-selection


def test_transparent_detector_is_identity():
    rho = PureDensity(gaussian_state(3.0, 0.5, M1))
    out, p_tot = post_select(rho, 1.0)
    assert p_tot == pytest.approx(1.0, abs=1e-8)
    p = np.linspace(0, 6, 7)
    assert np.allclose(out.kernel(p[:, None], p[None, :]), rho.kernel(p[:, None], p[None, :]),
                       rtol=1e-8)


def test_post_selection_keeps_purity():
    rho = PureDensity(gaussian_state(5.0, 1.0, M1))
    out, _ = post_select(rho, perfect_absorber())
    g = Grid1D(0.01, 10, 200)
    mat = out.sample(g) * g.spacing
    ev = np.sort(np.linalg.eigvalsh(mat))[::-1]
    assert abs(ev[1]) <= 1e-10 * ev[0]


def test_detection_probability_matches_trapezoid_oracle():
    alpha = Absorption(lambda p: np.minimum(1.0, p / 20.0), True, "ramp")
    _, p_tot = post_select(PureDensity(gaussian_state(10.0, 1.0, M1)), alpha)
    assert p_tot == pytest.approx(frozen.GAUSSIAN_RAMP_DETECTION, abs=1e-8)


def test_post_selected_state_has_unit_trace():
    alpha = Absorption(lambda p: np.minimum(1.0, p / 20.0), True, "ramp")
    out, _ = post_select(PureDensity(gaussian_state(10.0, 1.0, M1)), alpha)
    assert out.support == POSITIVE
    assert out.psi.norm() == pytest.approx(1.0, abs=1e-8)


def test_dead_detector_raises():
    with pytest.raises(ZeroDetection):
        post_select(PureDensity(gaussian_state(3.0, 0.5, M1)), 0.0)


def test_negative_momentum_flag():
    rho = PureDensity(gaussian_state(0.0, 1.0, M1))
    out, _ = post_select(rho, 0.5)
    assert "negative-momentum-content" in out.flags
    out, _ = post_select(rho, perfect_absorber())
    assert "negative-momentum-content" not in out.flags


def test_box_state_detection_probability_is_half():
    _, p_tot = post_select(PureDensity(box_state(1.0, 1, Dispersion(100.0))), perfect_absorber())
    assert p_tot == pytest.approx(0.5, abs=1e-8)


# --------------------------------------------------------------------------
# localization


def test_maximal_localization_is_identity():
    rho = PureDensity(gaussian_state(3.0, 0.5, M1))
    assert apply_localization(rho, MaximalLocalization()) is rho
    assert apply_localization(rho, 0.0) is rho


def test_gaussian_localization_keeps_trace():
    rho = PureDensity(gaussian_state(3.0, 0.5, M1))
    loc = apply_localization(rho, GaussianLocalization(0.7))
    p = np.linspace(-2, 8, 101)
    assert np.allclose(loc.diagonal(p), rho.diagonal(p), rtol=1e-12, atol=0)
    assert isinstance(loc, LocalizedDensity)


def test_localized_gaussian_is_positive_on_256_points():
    rho = apply_localization(PureDensity(gaussian_state(5.0, 1.0, M1)), GaussianLocalization(1.0))
    g = Grid1D(-3.0, 13.0, 256)
    ev = np.linalg.eigvalsh(rho.sample(g) * g.spacing)
    assert ev.min() >= -1e-8 * ev.max()
    assert frozen.LOCALIZED_EIGEN_RATIO >= -1e-8


@given(sigma=st.floats(0.05, 3.0), seed=st.integers(0, 1000))
def test_post_selection_commutes_with_localization(sigma, seed):
    rng = np.random.default_rng(seed)
    alpha = Absorption(lambda p: np.minimum(1.0, p / 8.0), True, "ramp")
    rho = PureDensity(gaussian_state(4.0, 1.0, M1))
    S = GaussianLocalization(sigma)
    a, _ = post_select(apply_localization(rho, S), alpha)
    b = apply_localization(post_select(rho, alpha)[0], S)
    p = rng.uniform(0.1, 8, 20)
    ka = a.kernel(p[:, None], p[None, :])
    kb = b.kernel(p[:, None], p[None, :])
    assert np.max(np.abs(ka - kb)) <= 1e-12 * np.max(np.abs(ka))


def test_constructed_states_are_valid_density_matrices():
    g = Grid1D(-15, 15, 201)
    for psi in (gaussian_state(2.0, 1.0, M1), box_state(1.0, 1, M1)):
        mat = PureDensity(psi).sample(g) * g.spacing
        assert np.allclose(mat, mat.conj().T, atol=1e-14)
        ev = np.linalg.eigvalsh(mat)
        assert ev.min() >= -1e-8 * ev.max()
        assert psi.norm() == pytest.approx(1.0, abs=1e-6)


def test_sampled_density_checks():
    g = Grid1D(0, 1, 4)
    with pytest.raises(NegativeDensity):
        SampledDensity(g, np.diag([1.0, -1.0, 0.5, 0.5]), M1)
    with pytest.raises(NegativeDensity):
        SampledDensity(g, np.triu(np.ones((4, 4))), M1)
    ok = SampledDensity(g, np.eye(4) / 4, M1)
    assert ok.support == POSITIVE


def test_translation_multiplies_phase():
    psi = gaussian_state(2.0, 1.0, M1)
    moved = psi.translated(3.0)
    p = np.linspace(-3, 7, 9)
    assert np.allclose(moved(p), psi(p) * np.exp(3j * p))
    assert psi.support == FULL
