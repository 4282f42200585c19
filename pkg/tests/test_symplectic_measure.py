import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from errors import NoCompactComponentError
from scalar_geometry import SurfaceParams, SurfacePoint, residual
from symplectic_measure import (
    PROPOSAL_MASS,
    chart_quadrature,
    chart_quadrature_moment,
    envelope_bound,
    export_sample_jsonl,
    jackknife_moments,
    moment_matrix,
    sample_symplectic,
    symplectic_moments,
    total_area,
)
from utils import read_jsonl
from vieta_group import Letter, apply_letter

CAYLEY = SurfaceParams(0, 0, 0, 4)
BOALCH_KLEIN = SurfaceParams(1, 1, 1, 0)
EMPTY = SurfaceParams(0, 0, 0, -1)


@pytest.fixture(scope="module")
def cayley_sample():
    return sample_symplectic(CAYLEY, 20_000, seed=1)


@pytest.fixture(scope="module")
def boalch_klein_sample():
    return sample_symplectic(BOALCH_KLEIN, 20_000, seed=2)


def test_cayley_envelope_is_flat():
    # the acceptance ratio is identically 1 on the Cayley cubic
    assert_allclose(envelope_bound(CAYLEY), 1 / 0.8, rtol=1e-9)


def test_cayley_total_area():
    area, se = total_area(CAYLEY, 10**6, seed=0)
    assert_allclose(area, 2 * math.pi**2, rtol=1e-2)
    # one proposal in three is valid, each with weight 6π²
    assert_allclose(se, PROPOSAL_MASS * math.sqrt(2 / 9) / 1000, rtol=0.05)


def test_cayley_acceptance_matches_valid_fraction(cayley_sample):
    assert len(cayley_sample) == 20_000
    assert abs(cayley_sample.n_valid / cayley_sample.n_proposals - 1 / 3) < 0.02
    assert abs(cayley_sample.acceptance_rate - 0.8 / 3) < 0.02


def test_samples_lie_on_the_compact_component(cayley_sample, boalch_klein_sample):
    for params, sample in ((CAYLEY, cayley_sample), (BOALCH_KLEIN, boalch_klein_sample)):
        pts = sample.points
        assert np.abs(pts).max() <= 2 + 1e-9
        x, y, z = pts.T
        A, B, C, D = params.as_tuple()
        res = x * x + y * y + z * z + x * y * z - A * x - B * y - C * z - D
        assert np.abs(res).max() < 1e-9
        assert set(np.unique(sample.charts)) <= {0, 1, 2}


def test_cayley_moments(cayley_sample):
    m = symplectic_moments(cayley_sample)
    mean, se = m.values, m.se
    assert abs(mean[3] - 2) < 5 * se[3]
    assert abs(mean[0]) < 5 * se[0]
    assert abs(mean[6]) < 5 * se[6]
    assert se[3] < 0.02


def test_cayley_quadrature():
    area, second = chart_quadrature(CAYLEY, [(0, 0, 0), (2, 0, 0)])
    assert_allclose(area, 2 * math.pi**2, rtol=2e-2)
    assert_allclose(second / area, 2.0, rtol=2e-2)
    assert_allclose(chart_quadrature_moment(CAYLEY, (2, 0, 0)), second / area, rtol=1e-12)


def test_boalch_klein_quadrature_is_symmetric():
    vals = chart_quadrature(BOALCH_KLEIN, [(1, 0, 0), (0, 1, 0), (0, 0, 1)])
    assert_allclose(vals, np.full(3, vals[0]), rtol=1e-6, atol=1e-9)


def test_boalch_klein_sample_is_symmetric(boalch_klein_sample):
    m = symplectic_moments(boalch_klein_sample)
    for i, j in ((0, 1), (1, 2), (0, 2)):
        assert abs(m.values[i] - m.values[j]) < 5 * math.hypot(m.se[i], m.se[j])


@pytest.mark.parametrize("letter", list(Letter))
def test_area_measure_is_invariant_under_involutions(boalch_klein_sample, letter):
    images = np.array([apply_letter(letter, BOALCH_KLEIN, p).as_tuple() for p in boalch_klein_sample.surface_points()])
    pushed = jackknife_moments(moment_matrix(images))
    for k, exponents in enumerate([(1, 0, 0), (0, 1, 0), (0, 0, 1), (2, 0, 0)]):
        exact = chart_quadrature_moment(BOALCH_KLEIN, exponents)
        assert abs(pushed.values[k] - exact) < 5 * pushed.se[k] + 2e-3


def test_single_point_moments_are_exact():
    m = jackknife_moments(moment_matrix([[1.0, 2.0, 3.0]]))
    assert_array_equal(m.values, [1, 2, 3, 1, 4, 9, 2, 6, 3])
    assert_array_equal(m.se, np.zeros(9))


def test_jackknife_rejects_empty_sample():
    with pytest.raises(ValueError):
        jackknife_moments(np.zeros((0, 9)))


def test_no_compact_component():
    # x² + y² + z² + xyz >= 0 on [-2, 2]³, so D = -1 has no point in the box
    assert residual(EMPTY, SurfacePoint(0, 0, 0)) == 1
    with pytest.raises(NoCompactComponentError):
        sample_symplectic(EMPTY, 10)
    with pytest.raises(NoCompactComponentError):
        total_area(EMPTY, 1000)
    with pytest.raises(NoCompactComponentError):
        chart_quadrature_moment(EMPTY, (1, 0, 0))


def test_sampling_is_deterministic_by_seed():
    a = sample_symplectic(BOALCH_KLEIN, 500, seed=7)
    b = sample_symplectic(BOALCH_KLEIN, 500, seed=7)
    c = sample_symplectic(BOALCH_KLEIN, 500, seed=8)
    assert_array_equal(a.points, b.points)
    assert not np.array_equal(a.points, c.points)


def test_stream_output_does_not_depend_on_workers():
    serial = sample_symplectic(BOALCH_KLEIN, 600, seed=3, streams=3, workers=1)
    parallel = sample_symplectic(BOALCH_KLEIN, 600, seed=3, streams=3, workers=3)
    assert_array_equal(serial.points, parallel.points)
    assert serial.n_proposals == parallel.n_proposals


def test_sample_size_must_be_positive():
    with pytest.raises(ValueError):
        sample_symplectic(CAYLEY, 0)


def test_export_sample_jsonl(tmp_path):
    sample = sample_symplectic(CAYLEY, 50, seed=0)
    path = tmp_path / "sample.jsonl"
    assert export_sample_jsonl(sample, str(path)) == 50
    header, rows = read_jsonl(str(path))
    assert header["n"] == 50
    assert header["params"]["D"] == 4
    assert len(rows) == 50
    assert set(rows[0]) == {"x", "y", "z"}


@pytest.mark.slow
def test_cayley_second_moment_at_full_size():
    sample = sample_symplectic(CAYLEY, 10**6, seed=0, streams=4)
    m = symplectic_moments(sample)
    assert abs(m.values[3] - 2) < 0.01
    assert abs(m.values[0]) < 4 * m.se[0] + 1e-12
