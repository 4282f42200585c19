import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from config import NumericPolicy
from errors import ParabolicBoundary, ToleranceCollision
from orbit_catalog import (
    BOALCH_KLEIN_POINTS,
    ExceedsCap,
    Finite,
    boalch_klein,
    cayley_rational_point,
    export_orbit_json,
    fiber_rotation_matrix,
    orbit_closure,
    orbit_stationary_distribution,
    origin_differentials,
    rational_scan,
    short_orbit_length2,
    stabilizer_words,
    verify_closure,
)
from scalar_geometry import SurfaceParams, SurfacePoint, residual, solve_fiber_z
from vieta_group import apply_word

CAYLEY = SurfaceParams(0, 0, 0, 4)


def test_boalch_klein_entry():
    params, points, witness = boalch_klein()
    assert params == SurfaceParams(1, 1, 1, 0)
    assert len(points) == 7
    assert {p.as_tuple() for p in points} == set(BOALCH_KLEIN_POINTS)
    assert_allclose(witness.d, 2 * math.cos(4 * math.pi / 7))


@pytest.mark.parametrize("start", BOALCH_KLEIN_POINTS)
def test_boalch_klein_orbit_from_every_point(start):
    params, _, _ = boalch_klein()
    orbit = orbit_closure(params, SurfacePoint(*start), cap=100)
    assert isinstance(orbit, Finite)
    assert orbit.exact
    assert orbit.point_set() == set(BOALCH_KLEIN_POINTS)
    assert len(orbit.edges) == 3 * 7


def test_cayley_four_point_orbit():
    orbit = orbit_closure(CAYLEY, SurfacePoint(1, 1, 1), cap=100)
    assert isinstance(orbit, Finite)
    assert orbit.point_set() == {(1, 1, 1), (-2, 1, 1), (1, -2, 1), (1, 1, -2)}


@pytest.mark.parametrize(
    "p, q, p2, q2, expected",
    [
        (1, 3, 1, 3, (1, 1, 1)),
        (1, 4, 1, 4, (0, 0, 2)),
        (1, 2, 1, 2, (2, 2, -2)),
    ],
)
def test_cayley_rational_points_snap_to_integers(p, q, p2, q2, expected):
    point = cayley_rational_point(p, q, p2, q2)
    assert point.as_tuple() == expected
    assert residual(CAYLEY, point) == 0


def test_cayley_rational_point_has_finite_orbit():
    start = cayley_rational_point(1, 5, 2, 5)
    assert abs(residual(CAYLEY, start)) < 1e-12
    orbit = orbit_closure(CAYLEY, start, cap=1000)
    assert isinstance(orbit, Finite)
    assert not orbit.exact
    assert verify_closure(CAYLEY, orbit.points, tol=1e-8)


def test_cayley_rational_point_rejects_zero_denominator():
    with pytest.raises(ValueError):
        cayley_rational_point(1, 0, 1, 3)


@pytest.mark.parametrize("x, x2", [(1, -1), (3, 5), (0.5, 2.25)])
def test_short_orbit_length2(x, x2):
    params, points = short_orbit_length2(x, x2)
    assert params.as_tuple() == (x + x2, 0, 0, -x * x2)
    orbit = orbit_closure(params, points[0], cap=10)
    assert isinstance(orbit, Finite)
    assert len(orbit) == 2


def test_short_orbit_length2_needs_distinct_points():
    with pytest.raises(ValueError):
        short_orbit_length2(2, 2)


def test_generic_start_exceeds_cap():
    params = SurfaceParams(1, 1, 1, 0)
    start = SurfacePoint(5.0, 5.0, solve_fiber_z(params, 5.0, 5.0)[0])
    result = orbit_closure(params, start, cap=50)
    assert isinstance(result, ExceedsCap)
    assert result.frontier_size > 0
    assert result.reason in {"cap", "escape"}


def test_float_orbit_closes_at_large_scale():
    params, points = short_orbit_length2(30000.1, -20000.3)
    orbit = orbit_closure(params, points[0], cap=10)
    assert isinstance(orbit, Finite)
    assert not orbit.exact
    assert len(orbit) == 2


def test_float_orbit_reports_near_collisions():
    params, points = short_orbit_length2(0.5, 0.5 + 5e-8)
    with pytest.raises(ToleranceCollision) as info:
        orbit_closure(params, points[0], cap=10)
    assert info.value.first.distance(info.value.second) < 1e-7


def test_float_boalch_klein_orbit_matches_exact_one():
    orbit = orbit_closure(SurfaceParams(1.0, 1.0, 1.0, 0.0), SurfacePoint(0.0, 0.0, 0.0), cap=20)
    assert isinstance(orbit, Finite)
    assert len(orbit) == 7
    assert {tuple(round(float(v)) for v in p.as_tuple()) for p in orbit.points} == {
        tuple(int(v) for v in p) for p in BOALCH_KLEIN_POINTS
    }


def test_verify_closure_detects_missing_points():
    params, points, _ = boalch_klein()
    assert verify_closure(params, points)
    assert not verify_closure(params, points[:-1])


def test_stabilizer_words_fix_the_origin():
    params, _, _ = boalch_klein()
    for w in stabilizer_words().values():
        assert apply_word(w, params, SurfacePoint(0, 0, 0)) == SurfacePoint(0, 0, 0)


def test_origin_differentials():
    f, g, h = origin_differentials()
    assert_array_equal(f, [[2, 1], [-1, 0]])
    assert_array_equal(g, [[1, 1], [0, 1]])
    assert_array_equal(h, [[1, 0], [-1, 1]])
    for m in (f, g, h):
        assert round(np.linalg.det(m)) == 1
    # f is parabolic, like g and h
    assert np.trace(f) == 2


@pytest.mark.parametrize("x0, angle", [(0.0, math.pi), (1.0, 2 * math.pi / 3), (math.sqrt(2), math.pi / 2)])
def test_fiber_rotation_matrix(x0, angle):
    params, _, _ = boalch_klein()
    rot = fiber_rotation_matrix(params, x0)
    assert_allclose(rot.matrix, [[-1, -x0], [x0, x0 * x0 - 1]], atol=1e-12)
    assert_allclose(rot.det, 1.0, atol=1e-12)
    assert_allclose(rot.trace, x0 * x0 - 2, atol=1e-12)
    assert_allclose(rot.angle, angle, atol=1e-12)


@pytest.mark.parametrize("x0", [2.0, -2.0, 3.0])
def test_fiber_rotation_rejects_parabolic_and_hyperbolic_fibers(x0):
    params, _, _ = boalch_klein()
    with pytest.raises(ParabolicBoundary):
        fiber_rotation_matrix(params, x0)


def test_fiber_rotation_margin_excludes_near_parabolic_fibers():
    params, _, _ = boalch_klein()
    assert fiber_rotation_matrix(params, 1.99).angle > 0
    with pytest.raises(ParabolicBoundary):
        fiber_rotation_matrix(params, 1.99, NumericPolicy(parabolic_margin=0.1))


@pytest.mark.parametrize("mu", [(1, 1, 1), (1, 2, 3)])
def test_stationary_distribution_on_boalch_klein_is_uniform(mu):
    params, points, _ = boalch_klein()
    orbit = orbit_closure(params, points[0], cap=100)
    assert_allclose(orbit_stationary_distribution(orbit, mu), np.full(7, 1 / 7), atol=1e-12)


def test_export_orbit_json():
    params, points, _ = boalch_klein()
    data = export_orbit_json(params, orbit_closure(params, points[0], cap=100))
    assert data["params"] == {"A": 1, "B": 1, "C": 1, "D": 0}
    assert data["exact"] is True
    assert len(data["points"]) == 7
    assert {e[1] for e in data["edges"]} == {"x", "y", "z"}


def test_rational_scan_finds_only_boalch_klein():
    report = rational_scan(n_starts=6, seed=0, cap=200)
    assert report.n_starts == 6
    assert len(report.finite_orbits) + report.exceeded == 6
    assert report.only_boalch_klein
