"""Recompute every frozen reference number from its oracle."""

import math

import numpy as np
import pytest

import frozen
import oracles


def test_dense_trapezoid_oracle():
    assert oracles.dense_trapezoid_oscillatory() == pytest.approx(
        frozen.OSCILLATORY_TRAPEZOID, rel=1e-14)


def test_box_transform_oracle():
    assert abs(oracles.box_transform_direct(math.pi) - frozen.BOX_AT_POLE) < 1e-15
    assert abs(oracles.box_transform_direct(0.0) - frozen.BOX_AT_ZERO) < 1e-15
    # at p = 0 the transform is 2 sqrt(2) / pi
    assert frozen.BOX_AT_ZERO.real == pytest.approx(2 * math.sqrt(2) / math.pi, rel=1e-14)


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
def test_source_amplitude_oracle():
    p = frozen.SOURCE_POLE_MOMENTUM
    assert math.sqrt(p * p + 1) == pytest.approx(math.pi, rel=1e-15)
    assert abs(oracles.source_amplitude_direct(p) - frozen.SOURCE_AT_POLE) < 1e-14
    assert abs(oracles.source_amplitude_direct(0.0) - frozen.SOURCE_AT_ZERO) < 1e-14


def test_detection_probability_oracle():
    assert oracles.gaussian_detection_probability() == pytest.approx(
        frozen.GAUSSIAN_RAMP_DETECTION, abs=1e-12)


def test_eigen_oracle():
    assert abs(oracles.localized_gaussian_min_eigen_ratio()) < 1e-14
    assert frozen.LOCALIZED_EIGEN_RATIO > -1e-8


def test_spread_oracle_matches_closed_form():
    val = oracles.gaussian_spread_numeric(1.0, 0.7)
    assert val == pytest.approx(frozen.GAUSSIAN_SPREAD_AT_0_7, rel=1e-13)
    assert val == pytest.approx(math.exp(-0.49 / 4) / math.sqrt(4 * math.pi), rel=1e-12)


def test_feynman_oracle():
    val = oracles.feynman_regulated_trapezoid()
    assert val == pytest.approx(frozen.FEYNMAN_T0_X2, rel=1e-12)
    assert val == pytest.approx(oracles.feynman_equal_time_closed(), rel=1e-9)


def test_source_field_oracles():
    assert oracles.source_feynman_spacelike() == pytest.approx(
        frozen.SOURCE_FEYNMAN_5_10, rel=1e-11)
    assert oracles.source_retarded_direct(12.0, 3.0) == pytest.approx(
        frozen.SOURCE_RETARDED_12_3, rel=1e-11)
    assert oracles.source_retarded_direct(5.0, 10.0) == 0.0


def test_vacuum_floor_oracle():
    assert oracles.vacuum_floor_closed(3.0) == pytest.approx(frozen.VACUUM_FLOOR_P3, rel=1e-15)


def test_fig3_contour_oracle():
    weight = oracles.source_total_weight()
    assert weight == pytest.approx(frozen.SOURCE_FIG3_WEIGHT, rel=1e-9)
    for t, value in frozen.FIG3_PRECONE.items():
        assert oracles.source_precone_contour(t) / weight == pytest.approx(value, rel=1e-8)


def test_gaussian_identity_oracle():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-3, 3, size=(100, 4))
    assert oracles.gaussian_identity_residual(1.0, 1.0, pts) <= 1e-12


def test_gaussian_density_oracle():
    t0 = frozen.GAUSSIAN_ARRIVAL
    assert t0 == pytest.approx(100 * math.sqrt(101) / 10, rel=1e-15)
    vals = oracles.gaussian_density_dense([t0 - 2, t0, t0 + 2], 100.0, 10.0, 1.0, 1.0)
    assert np.allclose(vals, frozen.GAUSSIAN_DENSITY, rtol=1e-8, atol=0)


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
def test_box_wigner_oracle():
    def psi(p):
        return oracles.box_psi_closed(p, 1.0, 2)

    val = oracles.wigner_direct(psi, 0.5, 0.0, 1600.0)
    assert val == pytest.approx(frozen.BOX2_WIGNER_CENTRE, rel=1e-12)
    assert val == pytest.approx(-1 / math.pi, rel=1e-5)
