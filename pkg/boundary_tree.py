"""
boundary_tree.py: the Cayley tree of Γ seen from its boundary.

Reflections of the ideal triangle as integer 2x2 matrices, normalized products and
their rank-one limits, initial letters of reduced streams, and the subdivision cycles C_m.
"""

import logging
import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from errors import EmptyReduction
from vieta_group import LETTERS, Letter, ReducedWord, reduce

logger = logging.getLogger(__name__)

REFLECTIONS = {
    Letter.X: ((-1, 2), (0, 1)),
    Letter.Y: ((1, 0), (2, -1)),
    Letter.Z: ((1, 0), (0, -1)),
}

# integer products switch to floating renormalization above this entry size
EXACT_ENTRY_LIMIT = 2**120

IntMatrix = Tuple[Tuple[int, int], Tuple[int, int]]


def reflection_matrix(l: Letter) -> np.ndarray:
    return np.array(REFLECTIONS[Letter(l)], dtype=np.int64)


def mobius_reflection(l: Letter, z: complex) -> complex:
    """Anti-holomorphic action z -> (a·z̄ + b)/(c·z̄ + d) of a reflection on the upper half-plane."""
    (a, b), (c, d) = REFLECTIONS[Letter(l)]
    zc = complex(z).conjugate()
    return (a * zc + b) / (c * zc + d)


def cayley_to_disk(z: complex) -> complex:
    return (z - 1j) / (z + 1j)


def _int_mul(m: IntMatrix, n: IntMatrix) -> IntMatrix:
    return (
        (m[0][0] * n[0][0] + m[0][1] * n[1][0], m[0][0] * n[0][1] + m[0][1] * n[1][1]),
        (m[1][0] * n[0][0] + m[1][1] * n[1][0], m[1][0] * n[0][1] + m[1][1] * n[1][1]),
    )


def exact_product(w: Iterable[Letter]) -> IntMatrix:
    m: IntMatrix = ((1, 0), (0, 1))
    for l in w:
        m = _int_mul(m, REFLECTIONS[Letter(l)])
    return m


def singular_values(m: np.ndarray) -> Tuple[float, float]:
    a, b, c, d = (float(v) for v in np.asarray(m, dtype=float).ravel())
    frob = a * a + b * b + c * c + d * d
    det = abs(a * d - b * c)
    s1 = math.sqrt((frob + math.sqrt(max(frob * frob - 4 * det * det, 0.0))) / 2)
    s2 = det / s1 if s1 > 0 else 0.0
    return s1, s2


def rank_one_defect(m: np.ndarray) -> float:
    s1, s2 = singular_values(m)
    if s1 == 0:
        raise ValueError("rank_one_defect of the zero matrix")
    return s2 / s1


@dataclass(frozen=True)
class NormalizedProduct:
    matrix: np.ndarray
    log_norm: float
    length: int
    exact: Optional[IntMatrix] = None

    @property
    def defect(self) -> float:
        # every generator has |det| = 1, so σ2/σ1 of the raw product is exp(-2·log‖·‖)
        return math.exp(-2 * self.log_norm)


class ProductAccumulator:
    """Right-multiplies generators, exactly while entries stay small, then with per-step renormalization."""

    def __init__(self) -> None:
        self.exact: Optional[IntMatrix] = ((1, 0), (0, 1))
        self.floating: Optional[np.ndarray] = None
        self.log_scale = 0.0
        self.length = 0

    def push(self, l: Letter) -> None:
        self.length += 1
        if self.exact is not None:
            self.exact = _int_mul(self.exact, REFLECTIONS[Letter(l)])
            if max(abs(v) for row in self.exact for v in row) < EXACT_ENTRY_LIMIT:
                return
            s1, _ = singular_values(np.array(self.exact, dtype=float))
            self.floating = np.array(self.exact, dtype=float) / s1
            self.log_scale = math.log(s1)
            self.exact = None
            return
        self.floating = self.floating @ np.array(REFLECTIONS[Letter(l)], dtype=float)
        s1, _ = singular_values(self.floating)
        self.floating /= s1
        self.log_scale += math.log(s1)

    def snapshot(self) -> NormalizedProduct:
        if self.exact is not None:
            raw = np.array(self.exact, dtype=float)
            s1, _ = singular_values(raw)
            return NormalizedProduct(matrix=raw / s1, log_norm=math.log(s1), length=self.length, exact=self.exact)
        return NormalizedProduct(matrix=self.floating.copy(), log_norm=self.log_scale, length=self.length)


def normalized_product(w: Iterable[Letter]) -> NormalizedProduct:
    acc = ProductAccumulator()
    for l in w:
        acc.push(l)
    return acc.snapshot()


@dataclass(frozen=True)
class FurstenbergDirection:
    angle: float
    defect: float
    log_norm: float
    generic: bool


def _image_angle(m: np.ndarray) -> float:
    u, _, _ = np.linalg.svd(m)
    return math.atan2(u[1, 0], u[0, 0]) % math.pi


def furstenberg_direction(letter_stream: Sequence[Letter], n: int) -> FurstenbergDirection:
    """Top left-singular direction of σ̂_{i1}⋯σ̂_{in}, as an angle in [0, π), with its rank-one defect."""
    if n < 1:
        raise ValueError("n must be at least 1")
    prod = normalized_product(letter_stream[:n])
    defect = prod.defect
    reduced_len = len(reduce(letter_stream[:n]))
    return FurstenbergDirection(
        angle=_image_angle(prod.matrix),
        defect=defect,
        log_norm=prod.log_norm,
        generic=reduced_len > 1,
    )


def angle_distance(a: float, b: float) -> float:
    d = abs(a - b) % math.pi
    return min(d, math.pi - d)


def direction_series(letter_stream: Sequence[Letter], checkpoints: Sequence[int]) -> pd.DataFrame:
    acc = ProductAccumulator()
    targets = sorted(set(int(c) for c in checkpoints if c >= 1))
    rows = []
    k = 0
    for i, l in enumerate(letter_stream, 1):
        acc.push(l)
        while k < len(targets) and targets[k] == i:
            snap = acc.snapshot()
            rows.append(
                {
                    "n": i,
                    "angle": _image_angle(snap.matrix),
                    "defect": snap.defect,
                    "lognorm": snap.log_norm,
                }
            )
            k += 1
        if k == len(targets):
            break
    return pd.DataFrame(rows, columns=["n", "angle", "defect", "lognorm"])


@dataclass(frozen=True)
class InitialLetter:
    letter: Letter
    stabilization_index: int
    depth: int
    stabilized: bool


def initial_letter(letter_stream: Sequence[Letter], n: int) -> InitialLetter:
    """
    First letter of the reduced word of the first n letters.

    stabilization_index is the step at which the current bottom letter was pushed;
    the stream counts as stabilized when that happened in the first half of the window.
    """
    stack: List[Letter] = []
    since = 0
    for i, l in enumerate(letter_stream[:n], 1):
        if stack and stack[-1] == l:
            stack.pop()
        else:
            if not stack:
                since = i
            stack.append(Letter(l))
    if not stack:
        raise EmptyReduction(f"the first {n} letters reduce to the identity")
    return InitialLetter(letter=stack[0], stabilization_index=since, depth=len(stack), stabilized=since <= n // 2)


def enumerate_reduced_words(max_len: int) -> List[ReducedWord]:
    words: List[ReducedWord] = [()]
    layer: List[ReducedWord] = [()]
    for _ in range(max_len):
        layer = [w + (l,) for w in layer for l in LETTERS if not w or w[-1] != l]
        words.extend(layer)
    return words


def signed_key(m: IntMatrix) -> IntMatrix:
    """Representative of ±m with the first nonzero entry positive."""
    flat = [v for row in m for v in row]
    first = next(v for v in flat if v != 0)
    if first < 0:
        return tuple(tuple(-v for v in row) for row in m)
    return m


@dataclass(frozen=True)
class SubdivisionCycle:
    m: int
    depths: List[int]

    def __len__(self) -> int:
        return len(self.depths)

    def histogram(self) -> List[int]:
        return [self.depths.count(k) for k in range(self.m + 1)]


def subdivision_cycle(m: int) -> SubdivisionCycle:
    """C_m: the triangle cycle with m rounds of barycentric insertion; a vertex inserted at round k has depth k."""
    if not 0 <= m <= 20:
        raise ValueError(f"subdivision depth must lie in [0, 20], got {m}")
    depths = [0, 0, 0]
    for k in range(1, m + 1):
        refined: List[int] = []
        for d in depths:
            refined.extend((d, k))
        depths = refined
    return SubdivisionCycle(m=m, depths=depths)
