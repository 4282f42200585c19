"""
scalar_geometry.py: the family S_(A,B,C,D): x² + y² + z² + xyz = Ax + By + Cz + D.

Parameter records, the trace map (a,b,c,d) -> (A,B,C,D), discriminant and
singularities, real topology, fiber solving and tangent frames.
"""

import cmath
import itertools
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from numbers import Number
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from config import NumericPolicy, default_policy
from errors import NonRealInputError, SingularPointError
from utils import decode_scalar, encode_scalar

logger = logging.getLogger(__name__)

Scalar = Union[int, float, complex, Fraction]
Vector3 = Tuple[Scalar, Scalar, Scalar]


def _is_finite(v: Any) -> bool:
    if isinstance(v, (int, Fraction)):
        return True
    if not isinstance(v, Number):
        return False
    return cmath.isfinite(complex(v))


def _check_entries(name: str, values: Tuple[Any, ...]) -> None:
    for v in values:
        if not _is_finite(v):
            raise ValueError(f"{name} entries must be finite numbers, got {values}")


def is_real_scalar(v: Scalar) -> bool:
    return getattr(v, "imag", 0) == 0


def real_part(v: Scalar) -> Scalar:
    if isinstance(v, (int, Fraction)):
        return v
    return v.real if isinstance(v, complex) else v


@dataclass(frozen=True)
class SurfaceParams:
    A: Scalar
    B: Scalar
    C: Scalar
    D: Scalar

    def __post_init__(self) -> None:
        _check_entries("SurfaceParams", self.as_tuple())

    def as_tuple(self) -> Tuple[Scalar, Scalar, Scalar, Scalar]:
        return (self.A, self.B, self.C, self.D)

    @property
    def is_real(self) -> bool:
        return all(is_real_scalar(v) for v in self.as_tuple())

    @property
    def is_rational(self) -> bool:
        return all(isinstance(v, (int, Fraction)) for v in self.as_tuple())

    def to_json_dict(self) -> Dict[str, Any]:
        return {k: encode_scalar(v) for k, v in zip("ABCD", self.as_tuple())}

    @classmethod
    def from_json_dict(cls, data: Dict[str, Any]) -> "SurfaceParams":
        return cls(*(decode_scalar(data[k]) for k in "ABCD"))


@dataclass(frozen=True)
class TraceParams:
    a: Scalar
    b: Scalar
    c: Scalar
    d: Scalar

    def __post_init__(self) -> None:
        _check_entries("TraceParams", self.as_tuple())

    def as_tuple(self) -> Tuple[Scalar, Scalar, Scalar, Scalar]:
        return (self.a, self.b, self.c, self.d)

    @property
    def is_real(self) -> bool:
        return all(is_real_scalar(v) for v in self.as_tuple())

    def to_json_dict(self) -> Dict[str, Any]:
        return {k: encode_scalar(v) for k, v in zip("abcd", self.as_tuple())}

    @classmethod
    def from_json_dict(cls, data: Dict[str, Any]) -> "TraceParams":
        return cls(*(decode_scalar(data[k]) for k in "abcd"))


@dataclass(frozen=True)
class SurfacePoint:
    x: Scalar
    y: Scalar
    z: Scalar

    def __post_init__(self) -> None:
        _check_entries("SurfacePoint", self.as_tuple())

    def as_tuple(self) -> Vector3:
        return (self.x, self.y, self.z)

    def as_array(self) -> np.ndarray:
        dtype = float if self.is_real else complex
        return np.array([complex(v) if dtype is complex else float(v) for v in self.as_tuple()], dtype=dtype)

    @property
    def is_real(self) -> bool:
        return all(is_real_scalar(v) for v in self.as_tuple())

    @property
    def is_rational(self) -> bool:
        return all(isinstance(v, (int, Fraction)) for v in self.as_tuple())

    def max_abs(self) -> float:
        return max(abs(v) for v in self.as_tuple())

    def distance(self, other: "SurfacePoint") -> float:
        return max(abs(u - v) for u, v in zip(self.as_tuple(), other.as_tuple()))

    def to_json_dict(self) -> Dict[str, Any]:
        return {k: encode_scalar(v) for k, v in zip("xyz", self.as_tuple())}

    @classmethod
    def from_json_dict(cls, data: Dict[str, Any]) -> "SurfacePoint":
        return cls(*(decode_scalar(data[k]) for k in "xyz"))


TOPOLOGY_CASES = {
    1: "quadruply punctured sphere",
    2: "triply punctured torus and a disk",
    3: "triply punctured sphere and a disk",
    4: "annulus and two disks",
    5: "four disks",
    6: "four disks and a sphere",
}


@dataclass(frozen=True)
class TopologyClass:
    case_id: int
    n: int
    singular: bool
    has_compact_component: bool

    @property
    def description(self) -> str:
        return TOPOLOGY_CASES[self.case_id]

    @property
    def euler_characteristic(self) -> int:
        return 2 * self.n - 2


@dataclass(frozen=True)
class TangentFrame:
    base: SurfacePoint
    e1: np.ndarray
    e2: np.ndarray
    g: np.ndarray

    def matrix(self) -> np.ndarray:
        return np.column_stack([self.e1, self.e2])


def residual(params: SurfaceParams, p: SurfacePoint) -> Scalar:
    x, y, z = p.as_tuple()
    A, B, C, D = params.as_tuple()
    return x * x + y * y + z * z + x * y * z - A * x - B * y - C * z - D


def gradient(params: SurfaceParams, p: SurfacePoint) -> Vector3:
    x, y, z = p.as_tuple()
    return (2 * x + y * z - params.A, 2 * y + z * x - params.B, 2 * z + x * y - params.C)


def is_on_surface(params: SurfaceParams, p: SurfacePoint, policy: NumericPolicy = default_policy) -> bool:
    return abs(residual(params, p)) <= policy.on_surface_tol


def pi_map(t: TraceParams) -> SurfaceParams:
    a, b, c, d = t.as_tuple()
    return SurfaceParams(
        a * b + c * d,
        b * c + a * d,
        a * c + b * d,
        4 - (a * a + b * b + c * c + d * d) - a * b * c * d,
    )


def discriminant(t: TraceParams) -> Scalar:
    a, b, c, d = t.as_tuple()
    s = a * a + b * b + c * c + d * d
    return (2 * s - a * b * c * d - 16) ** 2 - (4 - a * a) * (4 - b * b) * (4 - c * c) * (4 - d * d)


def discriminant_expanded(t: TraceParams) -> Scalar:
    # Same polynomial, written through the elementary symmetric functions of the squared traces.
    sq = [v * v for v in t.as_tuple()]
    s = sum(sq)
    p = t.a * t.b * t.c * t.d
    e2 = sum(u * v for u, v in itertools.combinations(sq, 2))
    e3 = sum(u * v * w for u, v, w in itertools.combinations(sq, 3))
    return 4 * s * s - 4 * s * p + 32 * p - 16 * e2 + 4 * e3


def pi_jacobian_determinant(t: TraceParams) -> Scalar:
    a, b, c, d = (complex(v) for v in t.as_tuple())
    jac = np.array(
        [
            [b, a, d, c],
            [d, c, b, a],
            [c, d, a, b],
            [-2 * a - b * c * d, -2 * b - a * c * d, -2 * c - a * b * d, -2 * d - a * b * c],
        ]
    )
    det = complex(np.linalg.det(jac))
    return det.real if t.is_real else det


def q_group_images(t: TraceParams) -> List[TraceParams]:
    a, b, c, d = t.as_tuple()
    perms = [(a, b, c, d), (b, a, d, c), (c, d, a, b), (d, c, b, a)]
    images = [TraceParams(*p) for p in perms]
    images += [TraceParams(*(-v for v in p)) for p in perms]
    return images


def is_singular_surface(t: TraceParams, policy: NumericPolicy = default_policy) -> bool:
    if any(abs(v - 2) <= policy.singular_trace_tol or abs(v + 2) <= policy.singular_trace_tol for v in t.as_tuple()):
        return True
    a, b, c, d = t.as_tuple()
    s = a * a + b * b + c * c + d * d
    scale = 1 + abs(2 * s - a * b * c * d - 16) ** 2 + abs((4 - a * a) * (4 - b * b) * (4 - c * c) * (4 - d * d))
    return abs(discriminant(t)) <= policy.discriminant_tol * scale


def classify_real_topology(t: TraceParams, policy: NumericPolicy = default_policy) -> TopologyClass:
    if not t.is_real:
        raise NonRealInputError(f"Topology classification needs real traces, got {t}")
    traces = [float(real_part(v)) for v in t.as_tuple()]
    n = sum(1 for v in traces if -2 < v < 2)
    if n == 0:
        case_id = 1 if math.prod(traces) < 0 else 2
    else:
        case_id = n + 2
    return TopologyClass(
        case_id=case_id,
        n=n,
        singular=is_singular_surface(t, policy),
        has_compact_component=case_id == 6,
    )


def cayley_torus_point(theta: float, phi: float) -> SurfacePoint:
    return SurfacePoint(-2 * math.cos(theta), -2 * math.cos(phi), -2 * math.cos(theta + phi))


_NEWTON_DIVERGED = 1e6


def _hessians(pts: np.ndarray) -> np.ndarray:
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    two = np.full_like(x, 2.0)
    return np.stack(
        [np.stack([two, z, y], axis=-1), np.stack([z, two, x], axis=-1), np.stack([y, x, two], axis=-1)], axis=1
    )


def _gradients(params: Tuple[float, ...], pts: np.ndarray) -> np.ndarray:
    A, B, C, _ = params
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    return np.stack([2 * x + y * z - A, 2 * y + z * x - B, 2 * z + x * y - C], axis=-1)


def singular_points(params: SurfaceParams, policy: NumericPolicy = default_policy) -> List[SurfacePoint]:
    """
    Real solutions of ∇F = 0 ∧ F = 0.

    Newton runs on ∇F = 0 from every node of a regular grid over [-R, R]³ at once;
    converged critical points are kept only when F vanishes there as well.
    """
    if not params.is_real:
        raise NonRealInputError("singular_points works on real parameters only")
    coeffs = tuple(float(real_part(v)) for v in params.as_tuple())
    axis = np.linspace(-policy.newton_grid_radius, policy.newton_grid_radius, policy.newton_grid_starts)
    pts = np.array(list(itertools.product(axis, axis, axis)), dtype=float)

    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(policy.newton_max_iter):
            # starts that ran off to infinity are dropped before the next pseudo-inverse
            live = np.all(np.isfinite(pts), axis=1) & (np.max(np.abs(pts), axis=1) <= _NEWTON_DIVERGED)
            pts[~live] = np.nan
            if not live.any():
                break
            step = np.einsum("nij,nj->ni", np.linalg.pinv(_hessians(pts[live])), _gradients(coeffs, pts[live]))
            pts[live] = pts[live] - step
            settled = ~np.all(np.isfinite(step), axis=1) | (np.max(np.abs(step), axis=1) <= policy.newton_tol)
            if np.all(settled):
                break
        g = _gradients(coeffs, pts)

    finite = np.all(np.isfinite(pts), axis=1)
    converged = finite & (np.linalg.norm(np.where(np.isfinite(g), g, np.inf), axis=1) <= policy.root_verify_tol)
    logger.debug(
        f"singular_points: {int(converged.sum())}/{len(pts)} starts converged to critical points, "
        f"{int((~finite).sum())} diverged"
    )

    found: List[SurfacePoint] = []
    for row in pts[converged]:
        cand = SurfacePoint(*(float(v) for v in row))
        if any(cand.distance(q) <= policy.dedup_dist for q in found):
            continue
        grad_norm = math.sqrt(sum(abs(v) ** 2 for v in gradient(params, cand)))
        if abs(residual(params, cand)) <= policy.root_verify_tol and grad_norm <= policy.root_verify_tol:
            found.append(cand)
    found.sort(key=lambda q: q.as_tuple())
    return found


def _exact_sqrt(q: Fraction) -> Optional[Fraction]:
    if q < 0:
        return None
    num, den = math.isqrt(q.numerator), math.isqrt(q.denominator)
    if num * num == q.numerator and den * den == q.denominator:
        return Fraction(num, den)
    return None


def solve_fiber_z(params: SurfaceParams, x: Scalar, y: Scalar, allow_complex: bool = False) -> List[Scalar]:
    """
    Roots z of z² + (xy - C) z + (x² + y² - Ax - By - D) = 0.

    The larger-magnitude root is formed first; the other comes from the product of roots.
    Rational inputs with a square discriminant give exact Fraction roots.
    """
    b = x * y - params.C
    c = x * x + y * y - params.A * x - params.B * y - params.D
    disc = b * b - 4 * c

    if all(isinstance(v, (int, Fraction)) for v in (b, c)):
        root = _exact_sqrt(Fraction(disc))
        if root is not None:
            if root == 0:
                return [Fraction(-b, 2)]
            big = -(Fraction(b) + (root if b >= 0 else -root)) / 2
            return [big, Fraction(c) / big] if big != 0 else [Fraction(0)]

    real_input = is_real_scalar(b) and is_real_scalar(c)
    if real_input and not allow_complex:
        b, c, disc = float(real_part(b)), float(real_part(c)), float(real_part(disc))
        if disc < 0:
            return []
        if disc == 0:
            return [-b / 2]
        sq = math.sqrt(disc)
        big = -(b + math.copysign(sq, b)) / 2
        return [big, c / big]

    b, c = complex(b), complex(c)
    sq = cmath.sqrt(b * b - 4 * c)
    if (b.conjugate() * sq).real < 0:
        sq = -sq
    big = -(b + sq) / 2
    if big == 0:
        return [0j]
    return [big, c / big] if sq != 0 else [big]


def in_compact_component(params: SurfaceParams, p: SurfacePoint, policy: NumericPolicy = default_policy) -> bool:
    if not (params.is_real and p.is_real):
        raise NonRealInputError("compact-component membership is a real test")
    if abs(residual(params, p)) > policy.on_surface_tol * (1 + p.max_abs()) ** 3:
        return False
    return p.max_abs() <= 2 + policy.box_tol


def tangent_frame(params: SurfaceParams, p: SurfacePoint, policy: NumericPolicy = default_policy) -> TangentFrame:
    """
    Hermitian-orthonormal basis of ker(v -> ∇F·v).

    Seeded by the coordinate axis least aligned with ∇F and one orthogonalization pass.
    """
    complex_mode = not (params.is_real and p.is_real)
    dtype = complex if complex_mode else float
    g = np.array([complex(v) if complex_mode else float(v) for v in gradient(params, p)], dtype=dtype)
    g_norm = float(np.linalg.norm(g))
    if g_norm < policy.gradient_floor:
        raise SingularPointError(f"gradient vanishes at {p.as_tuple()} (|∇F| = {g_norm:.3e})", point=p)

    n = np.conj(g) / g_norm
    k = int(np.argmin(np.abs(g)))
    seed = np.zeros(3, dtype=dtype)
    seed[k] = 1.0
    e1 = seed - n * np.vdot(n, seed)
    e1 = e1 / np.linalg.norm(e1)
    e2 = np.conj(np.cross(n, e1))
    e2 = e2 / np.linalg.norm(e2)

    frame = TangentFrame(base=p, e1=e1, e2=e2, g=g)
    smallest = np.linalg.svd(frame.matrix(), compute_uv=False)[-1]
    if smallest < policy.frame_independence_tol:
        raise SingularPointError(f"degenerate tangent frame at {p.as_tuple()}", point=p)
    return frame
