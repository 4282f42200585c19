from fractions import Fraction

import numpy as np
import pytest
from numpy.testing import assert_allclose

from errors import FrameMismatchError, SingularPointError
from scalar_geometry import SurfaceParams, SurfacePoint, gradient, residual, solve_fiber_z, tangent_frame
from vieta_group import (
    LETTERS,
    Letter,
    ambient_jacobian,
    apply_letter,
    apply_word,
    area_form,
    area_normalized_determinant,
    compose_jacobian,
    det3,
    frame_area,
    is_reduced,
    reduce,
    restricted_differential,
    word_from_string,
    word_to_string,
)

BOALCH_KLEIN = SurfaceParams(1, 1, 1, 0)


def _surface_points(params, n, seed):
    rng = np.random.default_rng(seed)
    points = []
    while len(points) < n:
        x, y = rng.uniform(-1.5, 1.5, size=2)
        roots = solve_fiber_z(params, x, y)
        if roots:
            points.append(SurfacePoint(x, y, roots[int(rng.integers(len(roots)))]))
    return points


@pytest.mark.parametrize("letter", LETTERS)
def test_involution_law_exact(letter):
    params = SurfaceParams(Fraction(1, 2), 3, -1, Fraction(7, 3))
    p = SurfacePoint(Fraction(2, 3), -5, Fraction(1, 7))
    assert apply_letter(letter, params, apply_letter(letter, params, p)) == p


@pytest.mark.parametrize("letter", LETTERS)
def test_involutions_preserve_the_surface(letter):
    for p in _surface_points(BOALCH_KLEIN, 20, seed=1):
        image = apply_letter(letter, BOALCH_KLEIN, p)
        assert abs(residual(BOALCH_KLEIN, image)) < 1e-12


def test_letter_moves_only_its_coordinate():
    p = SurfacePoint(1, 2, 3)
    assert apply_letter(Letter.X, BOALCH_KLEIN, p) == SurfacePoint(-1 - 6 + 1, 2, 3)
    assert apply_letter(Letter.Y, BOALCH_KLEIN, p) == SurfacePoint(1, -2 - 3 + 1, 3)
    assert apply_letter(Letter.Z, BOALCH_KLEIN, p) == SurfacePoint(1, 2, -3 - 2 + 1)


def test_apply_word_acts_first_letter_first():
    p = SurfacePoint(0, 0, 0)
    w = word_from_string("xy")
    expected = apply_letter(Letter.Y, BOALCH_KLEIN, apply_letter(Letter.X, BOALCH_KLEIN, p))
    assert apply_word(w, BOALCH_KLEIN, p) == expected
    assert apply_word((), BOALCH_KLEIN, p) == p


@pytest.mark.parametrize(
    "word, reduced",
    [
        ("", ""),
        ("xx", ""),
        ("xxy", "y"),
        ("xyyx", ""),
        ("xyzzyz", "xz"),
        ("xyzxyz", "xyzxyz"),
    ],
)
def test_reduce(word, reduced):
    w = reduce(word_from_string(word))
    assert word_to_string(w) == reduced
    assert is_reduced(w)


def test_reduced_word_acts_like_the_original():
    p = SurfacePoint(Fraction(1, 3), Fraction(1, 2), 0)
    w = word_from_string("xyzzyxzxyyxz")
    assert apply_word(w, BOALCH_KLEIN, p) == apply_word(reduce(w), BOALCH_KLEIN, p)


def test_word_from_string_rejects_other_letters():
    with pytest.raises(ValueError):
        word_from_string("xyw")


@pytest.mark.parametrize("letter", LETTERS)
def test_ambient_jacobian_has_determinant_minus_one(letter):
    assert det3(ambient_jacobian(letter, BOALCH_KLEIN, SurfacePoint(2, -3, 5))) == -1


def test_compose_jacobian_of_square_is_identity():
    p = SurfacePoint(Fraction(1, 2), 3, -2)
    for l in LETTERS:
        jac, image = compose_jacobian((l, l), BOALCH_KLEIN, p)
        assert image == p
        assert (jac == np.eye(3, dtype=int)).all()


@pytest.mark.parametrize("letter", LETTERS)
def test_involutions_reverse_area(letter):
    for p in _surface_points(BOALCH_KLEIN, 10, seed=2):
        image = apply_letter(letter, BOALCH_KLEIN, p)
        frame_p = tangent_frame(BOALCH_KLEIN, p)
        frame_img = tangent_frame(BOALCH_KLEIN, image)
        m = restricted_differential(letter, BOALCH_KLEIN, p, frame_p, frame_img)
        assert_allclose(area_normalized_determinant(m, BOALCH_KLEIN, frame_p, frame_img), -1.0, atol=1e-9)


def test_involutions_reverse_area_on_random_surfaces():
    rng = np.random.default_rng(12)
    checked = 0
    for coeffs in rng.uniform(-2, 2, size=(10, 4)):
        params = SurfaceParams(*(float(c) for c in coeffs))
        for x, y in rng.uniform(-1.5, 1.5, size=(100, 2)):
            for z in solve_fiber_z(params, float(x), float(y)):
                p = SurfacePoint(float(x), float(y), z)
                for letter in LETTERS:
                    image = apply_letter(letter, params, p)
                    if min(np.linalg.norm(gradient(params, q)) for q in (p, image)) < 1e-3:
                        continue
                    frame_p = tangent_frame(params, p)
                    frame_img = tangent_frame(params, image)
                    m = restricted_differential(letter, params, p, frame_p, frame_img)
                    assert_allclose(area_normalized_determinant(m, params, frame_p, frame_img), -1.0, atol=1e-7)
                    checked += 1
    assert checked > 500


def test_area_form_charts_agree_on_tangent_vectors():
    p = _surface_points(BOALCH_KLEIN, 1, seed=4)[0]
    frame = tangent_frame(BOALCH_KLEIN, p)
    value = frame_area(BOALCH_KLEIN, frame)
    assert value != 0
    assert_allclose(area_form(BOALCH_KLEIN, p, frame.e2, frame.e1), -value, rtol=1e-12)


def test_area_form_detects_non_tangent_vectors():
    p = SurfacePoint(0.0, 0.0, 1.0)
    # gradient (-1, -1, 1): every chart is active
    with pytest.raises(FrameMismatchError):
        area_form(BOALCH_KLEIN, p, (1.0, 0.0, 0.0), (0.0, 1.0, 0.0))


def test_area_form_undefined_at_singular_point():
    with pytest.raises(SingularPointError):
        area_form(SurfaceParams(0, 0, 0, 4), SurfacePoint(-2, -2, -2), (1, 0, 0), (0, 1, 0))


def test_restricted_differential_rejects_mismatched_frames():
    p, q = _surface_points(BOALCH_KLEIN, 2, seed=6)
    with pytest.raises(FrameMismatchError):
        restricted_differential(Letter.X, BOALCH_KLEIN, p, tangent_frame(BOALCH_KLEIN, p), tangent_frame(BOALCH_KLEIN, q))
