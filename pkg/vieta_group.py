"""
vieta_group.py: Γ = Z/2 * Z/2 * Z/2 acting by the Vieta involutions

    s_x(x,y,z) = (-x - yz + A, y, z)
    s_y(x,y,z) = (x, -y - zx + B, z)
    s_z(x,y,z) = (x, y, -z - xy + C)

Point maps, word algebra, ambient and restricted differentials, and the area 2-form.
Rational inputs stay rational all the way through.
"""

import logging
from enum import Enum
from fractions import Fraction
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from config import NumericPolicy, default_policy
from errors import FrameMismatchError, SingularPointError
from scalar_geometry import Scalar, SurfaceParams, SurfacePoint, TangentFrame, gradient

logger = logging.getLogger(__name__)


class Letter(str, Enum):
    X = "x"
    Y = "y"
    Z = "z"

    @property
    def index(self) -> int:
        return "xyz".index(self.value)


LETTERS: Tuple[Letter, Letter, Letter] = (Letter.X, Letter.Y, Letter.Z)

Word = Tuple[Letter, ...]
ReducedWord = Tuple[Letter, ...]


def word_from_string(s: str) -> Word:
    try:
        return tuple(Letter(ch) for ch in s.strip().lower())
    except ValueError as e:
        raise ValueError(f"words use the alphabet 'xyz', got {s!r}") from e


def word_to_string(w: Iterable[Letter]) -> str:
    return "".join(Letter(l).value for l in w)


def is_reduced(w: Sequence[Letter]) -> bool:
    return all(a != b for a, b in zip(w, w[1:]))


def involution(index: int, coeffs: Sequence[Scalar], x: Scalar, y: Scalar, z: Scalar) -> Tuple[Scalar, Scalar, Scalar]:
    """Raw coordinate kernel shared by the point API and the walk loops."""
    if index == 0:
        return (-x - y * z + coeffs[0], y, z)
    if index == 1:
        return (x, -y - z * x + coeffs[1], z)
    return (x, y, -z - x * y + coeffs[2])


def apply_letter(l: Letter, params: SurfaceParams, p: SurfacePoint) -> SurfacePoint:
    return SurfacePoint(*involution(Letter(l).index, params.as_tuple(), p.x, p.y, p.z))


def apply_word(w: Iterable[Letter], params: SurfaceParams, p: SurfacePoint) -> SurfacePoint:
    coeffs = params.as_tuple()
    x, y, z = p.as_tuple()
    for l in w:
        x, y, z = involution(Letter(l).index, coeffs, x, y, z)
    return SurfacePoint(x, y, z)


def reduce(w: Iterable[Letter]) -> ReducedWord:
    stack: List[Letter] = []
    for l in w:
        if stack and stack[-1] == l:
            stack.pop()
        else:
            stack.append(Letter(l))
    return tuple(stack)


def _matrix(rows: List[List[Scalar]]) -> np.ndarray:
    if all(isinstance(v, (int, Fraction)) for row in rows for v in row):
        return np.array(rows, dtype=object)
    return np.array(rows)


def ambient_jacobian(l: Letter, params: SurfaceParams, p: SurfacePoint) -> np.ndarray:
    x, y, z = p.as_tuple()
    l = Letter(l)
    if l is Letter.X:
        rows = [[-1, -z, -y], [0, 1, 0], [0, 0, 1]]
    elif l is Letter.Y:
        rows = [[1, 0, 0], [-z, -1, -x], [0, 0, 1]]
    else:
        rows = [[1, 0, 0], [0, 1, 0], [-y, -x, -1]]
    return _matrix(rows)


def det3(m: np.ndarray) -> Scalar:
    """Cofactor expansion; exact on integer and Fraction entries."""
    return (
        m[0, 0] * (m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1])
        - m[0, 1] * (m[1, 0] * m[2, 2] - m[1, 2] * m[2, 0])
        + m[0, 2] * (m[1, 0] * m[2, 1] - m[1, 1] * m[2, 0])
    )


def compose_jacobian(w: Sequence[Letter], params: SurfaceParams, p: SurfacePoint) -> Tuple[np.ndarray, SurfacePoint]:
    """Chain rule along w: returns (D(w)(p), w(p)), letters acting first-to-last."""
    total = _matrix([[1, 0, 0], [0, 1, 0], [0, 0, 1]])
    current = p
    for l in w:
        total = ambient_jacobian(l, params, current).dot(total)
        current = apply_letter(l, params, current)
    return total, current


def _cross(v: Sequence[Scalar], w: Sequence[Scalar]) -> Tuple[Scalar, Scalar, Scalar]:
    return (v[1] * w[2] - v[2] * w[1], v[2] * w[0] - v[0] * w[2], v[0] * w[1] - v[1] * w[0])


def area_form(
    params: SurfaceParams,
    p: SurfacePoint,
    v: Sequence[Scalar],
    w: Sequence[Scalar],
    policy: NumericPolicy = default_policy,
) -> Scalar:
    """
    dy∧dz/(2x+yz-A) = dz∧dx/(2y+zx-B) = dx∧dy/(2z+xy-C) evaluated on (v, w).

    The chart with the largest |denominator| is used; every other chart whose
    denominator exceeds 0.1·max must agree with it.
    """
    g = gradient(params, p)
    mags = [abs(c) for c in g]
    top = max(mags)
    if top == 0:
        raise SingularPointError(f"area form undefined at singular point {p.as_tuple()}", point=p)

    cross = _cross(v, w)
    i = mags.index(top)
    value = cross[i] / g[i]

    scale = float(np.linalg.norm(np.asarray(v, dtype=complex)) * np.linalg.norm(np.asarray(w, dtype=complex))) / top
    for j in range(3):
        if j != i and mags[j] >= 0.1 * top:
            other = cross[j] / g[j]
            if abs(other - value) > policy.area_agreement_tol * max(abs(value), scale):
                raise FrameMismatchError(
                    f"area form charts {i} and {j} disagree at {p.as_tuple()} ({value} vs {other}); "
                    "vectors are not tangent",
                    residual=float(abs(other - value)),
                )
    return value


def frame_area(params: SurfaceParams, frame: TangentFrame, policy: NumericPolicy = default_policy) -> Scalar:
    return area_form(params, frame.base, frame.e1, frame.e2, policy)


def restricted_differential(
    l: Letter,
    params: SurfaceParams,
    p: SurfacePoint,
    frame_at_p: TangentFrame,
    frame_at_image: TangentFrame,
    policy: NumericPolicy = default_policy,
) -> np.ndarray:
    jac = np.asarray(ambient_jacobian(l, params, p), dtype=frame_at_p.e1.dtype)
    images = jac @ frame_at_p.matrix()
    target = frame_at_image.matrix()
    coeffs, _, _, _ = np.linalg.lstsq(target, images, rcond=None)
    miss = float(np.linalg.norm(target @ coeffs - images))
    if miss > policy.lstsq_residual_tol * (1 + float(np.linalg.norm(images))):
        raise FrameMismatchError(
            f"differential of s_{Letter(l).value} at {p.as_tuple()} leaves the target tangent plane (residual {miss:.3e})",
            residual=miss,
        )
    return coeffs


def area_normalized_determinant(
    matrix: np.ndarray,
    params: SurfaceParams,
    frame_at_p: TangentFrame,
    frame_at_image: TangentFrame,
    policy: NumericPolicy = default_policy,
) -> Scalar:
    """det(M) measured against Area: -1 for every Vieta involution."""
    return np.linalg.det(matrix) * frame_area(params, frame_at_image, policy) / frame_area(params, frame_at_p, policy)
