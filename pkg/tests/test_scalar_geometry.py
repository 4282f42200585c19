import math
from fractions import Fraction

import numpy as np
import pytest
from numpy.testing import assert_allclose

from errors import NonRealInputError, SingularPointError
from scalar_geometry import (
    SurfaceParams,
    SurfacePoint,
    TraceParams,
    cayley_torus_point,
    classify_real_topology,
    discriminant,
    discriminant_expanded,
    gradient,
    in_compact_component,
    is_on_surface,
    is_singular_surface,
    pi_jacobian_determinant,
    pi_map,
    q_group_images,
    residual,
    singular_points,
    solve_fiber_z,
    tangent_frame,
)
from vieta_group import LETTERS, apply_letter

CAYLEY = SurfaceParams(0, 0, 0, 4)
BOALCH_KLEIN = SurfaceParams(1, 1, 1, 0)


@pytest.mark.parametrize(
    "params, point, expected",
    [
        (BOALCH_KLEIN, SurfacePoint(0, 0, 0), 0),
        (BOALCH_KLEIN, SurfacePoint(1, 1, 0), 0),
        (CAYLEY, SurfacePoint(1, 1, 1), 0),
        (CAYLEY, SurfacePoint(0, 0, 0), -4),
        (SurfaceParams(0, 0, 0, 0), SurfacePoint(1, 2, 3), 20),
    ],
)
def test_residual_exact(params, point, expected):
    assert residual(params, point) == expected


def test_gradient_at_origin_is_minus_linear_coefficients():
    assert gradient(SurfaceParams(1, 2, 3, 5), SurfacePoint(0, 0, 0)) == (-1, -2, -3)


@pytest.mark.parametrize(
    "traces, params",
    [
        ((0, 0, 0, 0), (0, 0, 0, 4)),
        ((0, 0, 0, 1), (0, 0, 0, 3)),
        ((2, 2, 2, 2), (8, 8, 8, -28)),
        ((1, 2, 3, 4), (14, 10, 11, -50)),
    ],
)
def test_pi_map_values(traces, params):
    assert pi_map(TraceParams(*traces)).as_tuple() == params


def test_boalch_klein_trace_witness():
    t, d = 2 * math.cos(2 * math.pi / 7), 2 * math.cos(4 * math.pi / 7)
    assert_allclose(pi_map(TraceParams(t, t, t, d)).as_tuple(), (1, 1, 1, 0), atol=1e-12)


@pytest.mark.parametrize(
    "traces, expected",
    [
        ((0, 0, 0, 0), 0),
        ((0, 0, 0, 1), 4),
        ((2, 0, 0, 0), 64),
    ],
)
def test_discriminant_values(traces, expected):
    assert discriminant(TraceParams(*traces)) == expected


def test_discriminant_expanded_form_agrees():
    rng = np.random.default_rng(3)
    for row in rng.uniform(-3, 3, size=(50, 4)):
        t = TraceParams(*row)
        assert_allclose(discriminant_expanded(t), discriminant(t), rtol=1e-10, atol=1e-9)
    t = TraceParams(Fraction(1, 3), 2, Fraction(-5, 2), 7)
    assert discriminant_expanded(t) == discriminant(t)


@pytest.mark.parametrize("traces, expected", [((0, 0, 0, 1), -2.0), ((2, 0, 0, 0), -32.0)])
def test_pi_jacobian_known_values(traces, expected):
    assert_allclose(pi_jacobian_determinant(TraceParams(*traces)), expected, atol=1e-9)


def test_pi_jacobian_is_minus_half_discriminant():
    rng = np.random.default_rng(11)
    for row in rng.uniform(-2.5, 2.5, size=(25, 4)):
        t = TraceParams(*row)
        assert_allclose(pi_jacobian_determinant(t), -discriminant(t) / 2, rtol=1e-8, atol=1e-8)


def test_pi_map_constant_on_q_orbit():
    t = TraceParams(0.3, -1.1, 1.7, 0.4)
    images = q_group_images(t)
    assert len(images) == 8
    assert len({img.as_tuple() for img in images}) == 8
    base = pi_map(t).as_tuple()
    for img in images:
        assert_allclose(pi_map(img).as_tuple(), base, atol=1e-12)


@pytest.mark.parametrize(
    "traces, singular",
    [
        ((0, 0, 0, 0), True),
        ((2, 1, 1, 1), True),
        ((1, 1, -2, 0.5), True),
        ((0, 0, 0, 1), False),
    ],
)
def test_is_singular_surface(traces, singular):
    assert is_singular_surface(TraceParams(*traces)) is singular


@pytest.mark.parametrize(
    "traces, case_id, n, compact",
    [
        ((3, 3, 3, -3), 1, 0, False),
        ((3, 3, 3, 3), 2, 0, False),
        ((3, 3, 3, 0), 3, 1, False),
        ((3, 3, 0, 0), 4, 2, False),
        ((3, 0, 0, 0), 5, 3, False),
        ((0, 0, 0, 1), 6, 4, True),
    ],
)
def test_classify_real_topology(traces, case_id, n, compact):
    topo = classify_real_topology(TraceParams(*traces))
    assert topo.case_id == case_id
    assert topo.n == n
    assert topo.has_compact_component is compact
    assert topo.euler_characteristic == 2 * n - 2


def test_classify_flags_singular_surfaces():
    topo = classify_real_topology(TraceParams(0, 0, 0, 0))
    assert topo.case_id == 6
    assert topo.singular


def test_classify_rejects_complex_traces():
    with pytest.raises(NonRealInputError):
        classify_real_topology(TraceParams(1j, 0, 0, 1))


def test_cayley_singular_points():
    points = singular_points(CAYLEY)
    expected = sorted([(-2, -2, -2), (-2, 2, 2), (2, -2, 2), (2, 2, -2)])
    assert len(points) == 4
    assert_allclose([p.as_tuple() for p in points], expected, atol=1e-8)


@pytest.mark.parametrize("params", [BOALCH_KLEIN, pi_map(TraceParams(0, 0, 0, 1))])
def test_smooth_surfaces_have_no_singular_points(params):
    assert singular_points(params) == []


def test_singular_points_of_a_nodal_surface():
    # Π(2,1,1,1) = (3,3,3,-5) has a node at (1,1,1)
    params = pi_map(TraceParams(2, 1, 1, 1))
    assert params.as_tuple() == (3, 3, 3, -5)
    points = singular_points(params)
    assert any(p.distance(SurfacePoint(1, 1, 1)) < 1e-8 for p in points)
    for p in points:
        assert abs(residual(params, p)) < 1e-8
        assert_allclose(gradient(params, p), 0, atol=1e-8)


def test_singular_points_are_fixed_by_every_involution():
    for p in singular_points(CAYLEY):
        for l in LETTERS:
            assert apply_letter(l, CAYLEY, p).distance(p) < 1e-8


def test_solve_fiber_exact_roots():
    assert sorted(solve_fiber_z(BOALCH_KLEIN, 0, 0)) == [0, 1]
    assert solve_fiber_z(CAYLEY, 2, 0) == [0]


def test_solve_fiber_larger_root_first():
    roots = solve_fiber_z(BOALCH_KLEIN, 5, 5)
    assert_allclose(roots[0], -12 - math.sqrt(104), rtol=1e-14)
    assert_allclose(roots[1], -12 + math.sqrt(104), rtol=1e-12)
    for z in roots:
        assert is_on_surface(BOALCH_KLEIN, SurfacePoint(5, 5, z))


def test_solve_fiber_stable_when_roots_differ_in_scale():
    # z² - 1e8·z + 1 = 0 on S_(0,0,1e8,-1) over x = y = 0
    roots = solve_fiber_z(SurfaceParams(0, 0, 1e8, -1), 0.0, 0.0)
    assert_allclose(roots[0], 1e8, rtol=1e-15)
    assert_allclose(roots[1], 1e-8, rtol=1e-12)


def test_solve_fiber_complex_mode():
    params = SurfaceParams(0, 0, 0, -1)
    assert solve_fiber_z(params, 0.0, 0.0) == []
    roots = solve_fiber_z(params, 0.0, 0.0, allow_complex=True)
    assert_allclose(sorted(roots, key=lambda r: r.imag), [-1j, 1j], atol=1e-15)


def test_in_compact_component():
    assert in_compact_component(BOALCH_KLEIN, SurfacePoint(0, 0, 0))
    assert not in_compact_component(BOALCH_KLEIN, SurfacePoint(5, 5, -12 - math.sqrt(104)))
    assert not in_compact_component(BOALCH_KLEIN, SurfacePoint(0.1, 0, 0))
    with pytest.raises(NonRealInputError):
        in_compact_component(BOALCH_KLEIN, SurfacePoint(1j, 0, 0))


def _compact_points(params, n, seed):
    rng = np.random.default_rng(seed)
    points = []
    while len(points) < n:
        x, y = rng.uniform(-2, 2, size=2)
        for z in solve_fiber_z(params, float(x), float(y)):
            p = SurfacePoint(float(x), float(y), z)
            if in_compact_component(params, p):
                points.append(p)
    return points[:n]


@pytest.mark.parametrize(
    "params, points",
    [
        (CAYLEY, [cayley_torus_point(t, f) for t, f in np.random.default_rng(8).uniform(0, 2 * math.pi, size=(10_000, 2))]),
        (BOALCH_KLEIN, _compact_points(BOALCH_KLEIN, 10_000, seed=9)),
    ],
    ids=["cayley", "boalch-klein"],
)
def test_involutions_keep_the_compact_component(params, points):
    assert len(points) == 10_000
    for p in points:
        for l in LETTERS:
            assert in_compact_component(params, apply_letter(l, params, p))


def test_cayley_torus_parametrization_lies_on_surface():
    rng = np.random.default_rng(5)
    for theta, phi in rng.uniform(0, 2 * math.pi, size=(100, 2)):
        p = cayley_torus_point(theta, phi)
        assert abs(residual(CAYLEY, p)) < 1e-12
        assert p.max_abs() <= 2 + 1e-12


@pytest.mark.parametrize(
    "params, point",
    [
        (BOALCH_KLEIN, SurfacePoint(0.0, 0.0, 1.0)),
        (BOALCH_KLEIN, SurfacePoint(5.0, 5.0, -12 - math.sqrt(104))),
        (CAYLEY, SurfacePoint(1.0, 1.0, 1.0)),
    ],
)
def test_tangent_frame_is_orthonormal_and_tangent(params, point):
    frame = tangent_frame(params, point)
    m = frame.matrix()
    assert_allclose(m.T @ m, np.eye(2), atol=1e-12)
    assert_allclose(frame.g @ m, np.zeros(2), atol=1e-10 * np.linalg.norm(frame.g))


def test_tangent_frame_complex_point_is_hermitian_orthonormal():
    params = SurfaceParams(0, 0, 0, -1)
    z = solve_fiber_z(params, 0.5, 0.25, allow_complex=True)[0]
    frame = tangent_frame(params, SurfacePoint(0.5, 0.25, z))
    m = frame.matrix()
    assert_allclose(m.conj().T @ m, np.eye(2), atol=1e-12)
    assert_allclose(frame.g @ m, np.zeros(2), atol=1e-10)


def test_tangent_frame_rejects_singular_point():
    with pytest.raises(SingularPointError):
        tangent_frame(CAYLEY, SurfacePoint(-2.0, -2.0, -2.0))


@pytest.mark.parametrize("bad", [float("nan"), float("inf")])
def test_value_types_reject_non_finite_entries(bad):
    with pytest.raises(ValueError):
        SurfaceParams(1, 1, bad, 0)
    with pytest.raises(ValueError):
        SurfacePoint(bad, 0, 0)


def test_json_dicts_preserve_exact_and_complex_values():
    params = SurfaceParams(Fraction(1, 3), 2, 0.5, 1 + 2j)
    assert SurfaceParams.from_json_dict(params.to_json_dict()) == params
