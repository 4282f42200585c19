"""
orbit_catalog.py: finite orbits of Γ and the expansion data at the origin of S_(1,1,1,0).

BFS closure (exact on rational input), the 7-point Boalch-Klein orbit, rational points
on the Cayley cubic, length-2 orbits, the differentials of f, g, h at the origin and
the rotation matrices on the fibers x = x0.
"""

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from tqdm import tqdm

from config import NumericPolicy, default_policy
from errors import CatalogAssertionError, ParabolicBoundary, ToleranceCollision
from scalar_geometry import Scalar, SurfaceParams, SurfacePoint, TraceParams, pi_map, residual
from utils import make_rng
from vieta_group import LETTERS, Letter, Word, apply_letter, compose_jacobian, involution, word_from_string

logger = logging.getLogger(__name__)

Edge = Tuple[int, Letter, int]
# float orbits are abandoned once a coordinate passes this size
OVERFLOW_LIMIT = 1e250


@dataclass(frozen=True)
class Finite:
    points: List[SurfacePoint]
    edges: List[Edge]
    exact: bool = False

    def __len__(self) -> int:
        return len(self.points)

    def point_set(self) -> set:
        return {p.as_tuple() for p in self.points}


@dataclass(frozen=True)
class ExceedsCap:
    cap: int
    frontier_size: int
    reason: str = "cap"


OrbitResult = Union[Finite, ExceedsCap]


class _PointIndex:
    """
    Spatial hash for float orbits. Two points match when they lie within tol·(1 + m)² in max-norm,
    m the larger max-modulus of the two: the rounding error of s_x grows with |yz|.

    Points are bucketed by octave of 1 + m, and each octave hashes real parts on a grid coarse
    enough that every point within the collision band of a query sits in an adjacent cell of
    the query's own octave or of a neighbouring one.
    """

    def __init__(self, tol: float) -> None:
        self.tol = tol
        # beyond this size the matching band is no longer small against the point itself
        self.limit = 1 / (40 * tol)
        self.cells: Dict[Tuple[int, int, int, int], List[int]] = {}
        self.points: List[SurfacePoint] = []
        self.sizes: List[float] = []

    def resolves(self, p: SurfacePoint) -> bool:
        return 1 + _size(p) < self.limit

    def _cell(self, octave: int) -> float:
        return 10 * self.tol * 4.0 ** (octave + 2)

    def _key(self, p: SurfacePoint, octave: int) -> Tuple[int, int, int]:
        cell = self._cell(octave)
        return tuple(math.floor(float(getattr(v, "real", v)) / cell) for v in p.as_tuple())

    def find_or_add(self, p: SurfacePoint) -> Tuple[int, bool]:
        size = _size(p)
        octave = int(math.floor(math.log2(1 + size)))
        for o in (octave - 1, octave, octave + 1):
            kx, ky, kz = self._key(p, o)
            for dx in (-1, 0, 1):
                for dy in (-1, 0, 1):
                    for dz in (-1, 0, 1):
                        for idx in self.cells.get((o, kx + dx, ky + dy, kz + dz), ()):
                            dist = p.distance(self.points[idx])
                            band = self.tol * (1 + max(size, self.sizes[idx])) ** 2
                            if dist <= band:
                                return idx, False
                            if dist <= 10 * band:
                                raise ToleranceCollision(
                                    f"points {p.as_tuple()} and {self.points[idx].as_tuple()} are {dist:.2e} apart "
                                    f"against a match band of {band:.2e}; tighten arithmetic or the match tolerance",
                                    first=self.points[idx],
                                    second=p,
                                )
        self.points.append(p)
        self.sizes.append(size)
        self.cells.setdefault((octave, *self._key(p, octave)), []).append(len(self.points) - 1)
        return len(self.points) - 1, True


def _size(p: SurfacePoint) -> float:
    return max(abs(v) for v in p.as_tuple())


class _ExactIndex:
    def __init__(self) -> None:
        self.lookup: Dict[Tuple[Scalar, Scalar, Scalar], int] = {}
        self.points: List[SurfacePoint] = []

    def find_or_add(self, p: SurfacePoint) -> Tuple[int, bool]:
        key = p.as_tuple()
        if key in self.lookup:
            return self.lookup[key], False
        self.points.append(p)
        self.lookup[key] = len(self.points) - 1
        return len(self.points) - 1, True


def orbit_closure(
    params: SurfaceParams,
    q: SurfacePoint,
    cap: int = 10_000,
    tol: Optional[float] = None,
    policy: NumericPolicy = default_policy,
) -> OrbitResult:
    """
    Breadth-first closure of q under s_x, s_y, s_z.

    Rational params and start run in exact arithmetic; otherwise points are identified
    within tol·(1 + |p|)² in max-norm. Returns Finite when the frontier empties, ExceedsCap otherwise;
    a float orbit that grows past the resolvable range stops with reason "escape".
    """
    if cap > 1_000_000:
        raise ValueError(f"cap must be at most 10^6, got {cap}")
    exact = params.is_rational and q.is_rational
    index = _ExactIndex() if exact else _PointIndex(tol if tol is not None else policy.orbit_match_tol)
    coeffs = params.as_tuple()
    index.find_or_add(q)
    edges: List[Edge] = []
    frontier = deque([0])

    while frontier:
        i = frontier.popleft()
        p = index.points[i]
        for l in LETTERS:
            coords = involution(l.index, coeffs, p.x, p.y, p.z)
            if not exact and not max(abs(v) for v in coords) < OVERFLOW_LIMIT:
                logger.debug(f"orbit_closure: overflow after {len(index.points)} points")
                return ExceedsCap(cap=cap, frontier_size=len(frontier) + 1, reason="overflow")
            img = SurfacePoint(*coords)
            if not exact and not index.resolves(img):
                logger.debug(f"orbit_closure: left the resolvable range after {len(index.points)} points")
                return ExceedsCap(cap=cap, frontier_size=len(frontier) + 1, reason="escape")
            j, is_new = index.find_or_add(img)
            edges.append((i, l, j))
            if is_new:
                if len(index.points) > cap:
                    return ExceedsCap(cap=cap, frontier_size=len(frontier) + 1)
                frontier.append(j)

    return Finite(points=list(index.points), edges=edges, exact=exact)


def verify_closure(
    params: SurfaceParams, points: Sequence[SurfacePoint], tol: float = 0.0
) -> bool:
    for p in points:
        for l in LETTERS:
            img = apply_letter(l, params, p)
            if not any(img.distance(q) <= tol for q in points):
                return False
    return True


def _catalog_check(condition: bool, message: str) -> None:
    if not condition:
        raise CatalogAssertionError(message)


BOALCH_KLEIN_POINTS = ((0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1), (1, 1, 0), (1, 0, 1), (0, 1, 1))


@lru_cache(maxsize=None)
def boalch_klein() -> Tuple[SurfaceParams, List[SurfacePoint], TraceParams]:
    params = SurfaceParams(1, 1, 1, 0)
    points = [SurfacePoint(*p) for p in BOALCH_KLEIN_POINTS]
    t, d = 2 * math.cos(2 * math.pi / 7), 2 * math.cos(4 * math.pi / 7)
    witness = TraceParams(t, t, t, d)

    _catalog_check(all(residual(params, p) == 0 for p in points), "Boalch-Klein points off the surface")
    orbit = orbit_closure(params, points[0], cap=100)
    _catalog_check(
        isinstance(orbit, Finite) and orbit.point_set() == {p.as_tuple() for p in points},
        "Boalch-Klein orbit closure mismatch",
    )
    _catalog_check(verify_closure(params, points), "Boalch-Klein orbit not closed")
    image = pi_map(witness)
    _catalog_check(
        max(abs(u - v) for u, v in zip(image.as_tuple(), params.as_tuple())) <= 1e-12,
        f"trace witness maps to {image.as_tuple()}",
    )
    return params, points, witness


def _snap_integer(v: float) -> Scalar:
    nearest = round(v)
    return int(nearest) if abs(v - nearest) < 1e-12 else v


def cayley_rational_point(p: int, q: int, p2: int, q2: int) -> SurfacePoint:
    """(-2cos(2πp/q), -2cos(2πp'/q'), -2cos(2π(p/q + p'/q'))) on the Cayley cubic; integer values are snapped exactly."""
    if q == 0 or q2 == 0:
        raise ValueError("denominators must be nonzero")
    s, t = Fraction(p, q), Fraction(p2, q2)
    coords = [-2 * math.cos(2 * math.pi * float(r)) for r in (s, t, s + t)]
    return SurfacePoint(*(_snap_integer(v) for v in coords))


def short_orbit_length2(x: Scalar, x2: Scalar, policy: NumericPolicy = default_policy) -> Tuple[SurfaceParams, List[SurfacePoint]]:
    """Orbit {(x,0,0), (x',0,0)} on S_(x+x', 0, 0, -x·x'): s_x swaps the two points, s_y and s_z fix them."""
    if x == x2:
        raise ValueError("a length-2 orbit needs x != x'")
    params = SurfaceParams(x + x2, 0, 0, -x * x2)
    points = [SurfacePoint(x, 0, 0), SurfacePoint(x2, 0, 0)]
    tol = policy.orbit_match_tol * (1 + abs(x) + abs(x2)) ** 2
    exact = params.is_rational

    def same(u: SurfacePoint, v: SurfacePoint) -> bool:
        return u == v if exact else u.distance(v) <= tol

    _catalog_check(all(abs(residual(params, p)) <= (0 if exact else tol) for p in points), "length-2 points off surface")
    _catalog_check(same(apply_letter(Letter.X, params, points[0]), points[1]), "s_x does not swap the pair")
    _catalog_check(same(apply_letter(Letter.X, params, points[1]), points[0]), "s_x does not swap the pair")
    for l in (Letter.Y, Letter.Z):
        _catalog_check(all(same(apply_letter(l, params, p), p) for p in points), f"s_{l.value} moves the pair")
    return params, points


STABILIZER_WORDS = {"f": "xyxy", "g": "zxzx", "h": "yzyz"}
ORIGIN_DIFFERENTIALS = {
    "f": ((2, 1), (-1, 0)),
    "g": ((1, 1), (0, 1)),
    "h": ((1, 0), (-1, 1)),
}


def stabilizer_words() -> Dict[str, Word]:
    """f = (s_y∘s_x)², g = (s_x∘s_z)², h = (s_z∘s_y)² as words acting first-to-last; each fixes the origin."""
    params, _, _ = boalch_klein()
    origin = SurfacePoint(0, 0, 0)
    words = {name: word_from_string(s) for name, s in STABILIZER_WORDS.items()}
    for name, w in words.items():
        _, image = compose_jacobian(w, params, origin)
        _catalog_check(image == origin, f"{name} does not fix the origin")
    return words


@lru_cache(maxsize=None)
def origin_differentials() -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Df_o, Dg_o, Dh_o on T_o S_(1,1,1,0) in the basis e1 = (1,0,-1), e2 = (0,1,-1).

    Recomputed exactly through the ambient chain rule and compared with the catalog.
    """
    params, _, _ = boalch_klein()
    origin = SurfacePoint(0, 0, 0)
    basis = np.array([[1, 0], [0, 1], [-1, -1]], dtype=object)
    mats = []
    for name, w in stabilizer_words().items():
        jac, _ = compose_jacobian(w, params, origin)
        pushed = jac.dot(basis)
        _catalog_check(
            all(pushed[2, k] == -(pushed[0, k] + pushed[1, k]) for k in range(2)),
            f"D{name} leaves the tangent plane at the origin",
        )
        coords = tuple(tuple(int(v) for v in row) for row in pushed[:2, :])
        _catalog_check(coords == ORIGIN_DIFFERENTIALS[name], f"D{name} = {coords}, expected {ORIGIN_DIFFERENTIALS[name]}")
        mats.append(np.array(coords, dtype=int))
    return tuple(mats)


@dataclass(frozen=True)
class FiberRotation:
    matrix: np.ndarray
    trace: float
    det: float
    angle: float


def fiber_rotation_matrix(params: SurfaceParams, x0: float, policy: NumericPolicy = default_policy) -> FiberRotation:
    """
    Linear part of s_z∘s_y on the fiber {x = x0}, read off the composed ambient Jacobians.

    M = [[-1, -x0], [x0, x0² - 1]], trace x0² - 2, det 1, rotation angle arccos((x0² - 2)/2).

    The trace never drops below -2, so the only guard is on the other side: fibers with
    trace >= 2 - policy.parabolic_margin (parabolic at |x0| = 2, hyperbolic beyond) raise
    ParabolicBoundary. The margin keeps near-parabolic fibers, whose angle is ill-conditioned, out.
    """
    trace = x0 * x0 - 2
    if trace >= 2 - policy.parabolic_margin:
        raise ParabolicBoundary(f"s_z∘s_y is not elliptic on the fiber x = {x0} (trace {trace})")
    jac, _ = compose_jacobian((Letter.Y, Letter.Z), params, SurfacePoint(x0, 0.0, 0.0))
    block = np.array(jac[1:, 1:], dtype=float)
    det = float(np.linalg.det(block))
    angle = math.acos(max(-1.0, min(1.0, trace / 2)))
    return FiberRotation(matrix=block, trace=float(np.trace(block)), det=det, angle=angle)


def orbit_stationary_distribution(orbit: Finite, mu: Sequence[float]) -> np.ndarray:
    """Stationary vector of the μ-walk restricted to a finite orbit (left Perron eigenvector)."""
    n = len(orbit.points)
    weights = np.asarray(mu, dtype=float) / float(np.sum(mu))
    transition = np.zeros((n, n))
    for i, l, j in orbit.edges:
        transition[i, j] += weights[Letter(l).index]
    vals, vecs = np.linalg.eig(transition.T)
    k = int(np.argmin(np.abs(vals - 1)))
    pi = np.real(vecs[:, k])
    return pi / pi.sum()


def export_orbit_json(params: SurfaceParams, orbit: Finite) -> dict:
    return {
        "params": params.to_json_dict(),
        "exact": orbit.exact,
        "points": [p.to_json_dict() for p in orbit.points],
        "edges": [[i, Letter(l).value, j] for i, l, j in orbit.edges],
    }


def random_rational_point(rng: np.random.Generator, max_height: int = 50) -> SurfacePoint:
    """
    Rational point of S_(1,1,1,0) on one of the fibers x = 0 or x = 1.

    Both fibers are conics through (y, z) = (0, 0); the line z = t·y cuts them again at a rational point.
    """
    t = Fraction(int(rng.integers(-max_height, max_height + 1)), int(rng.integers(1, max_height + 1)))
    if rng.integers(2) == 0:
        y = (1 + t) / (1 + t * t)
        return SurfacePoint(0, y, t * y)
    y = (1 + t) / (1 + t + t * t)
    return SurfacePoint(1, y, t * y)


def _scan_one(seed: int, index: int, cap: int) -> Tuple[Tuple, OrbitResult]:
    params, _, _ = boalch_klein()
    start = random_rational_point(make_rng(seed, index))
    return start.as_tuple(), orbit_closure(params, start, cap=cap)


@dataclass
class ScanReport:
    n_starts: int
    finite_orbits: List[List[Tuple]] = field(default_factory=list)
    exceeded: int = 0

    @property
    def only_boalch_klein(self) -> bool:
        target = set(BOALCH_KLEIN_POINTS)
        return all(set(orbit) == target for orbit in self.finite_orbits)


def rational_scan(n_starts: int, seed: int = 0, cap: int = 2000, workers: int = 1) -> ScanReport:
    results = Parallel(n_jobs=workers)(
        delayed(_scan_one)(seed, i, cap) for i in tqdm(range(n_starts), desc="Rational scan", leave=False)
    )
    report = ScanReport(n_starts=n_starts)
    for start, res in results:
        if isinstance(res, Finite):
            report.finite_orbits.append([p.as_tuple() for p in res.points])
            logger.info(f"Finite orbit of size {len(res)} from rational start {start}")
        else:
            report.exceeded += 1
    return report
