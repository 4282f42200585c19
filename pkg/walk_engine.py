"""
walk_engine.py: seeded random compositions f_{n-1}∘…∘f_0 of Vieta involutions.

Letter streams, trajectories with escape detection, empirical measures along orbits, seed farms,
and Lyapunov exponents of the derivative cocycle on invariant compact sets.
"""

import hashlib
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from tqdm import tqdm

from config import NumericPolicy, default_policy
from errors import EscapeError, FrameMismatchError, NonRealInputError, SingularPointError
from orbit_catalog import Finite
from scalar_geometry import Scalar, SurfaceParams, SurfacePoint, gradient, in_compact_component, tangent_frame
from symplectic_measure import MOMENT_NAMES, MomentVector, jackknife_moments, moment_matrix
from utils import make_rng
from vieta_group import LETTERS, Letter, Word, ambient_jacobian, involution, restricted_differential

logger = logging.getLogger(__name__)

DEFAULT_RADII = (4.0, 16.0, 256.0)
LETTER_STREAM = 0
BOOTSTRAP_STREAM = 2


@dataclass(frozen=True)
class StepDistribution:
    p_x: float
    p_y: float
    p_z: float

    def __post_init__(self) -> None:
        probs = self.as_tuple()
        if not all(math.isfinite(p) and p > 0 for p in probs):
            raise ValueError(f"every letter needs positive probability, got {probs}")
        if abs(sum(probs) - 1) > 1e-12:
            raise ValueError(f"step probabilities must sum to 1, got {sum(probs)!r}")

    @classmethod
    def from_weights(cls, weights: Sequence[float]) -> "StepDistribution":
        if len(weights) != 3 or not all(w > 0 for w in weights):
            raise ValueError(f"expected three positive weights, got {weights}")
        total = float(sum(weights))
        p_x, p_y = weights[0] / total, weights[1] / total
        return cls(p_x, p_y, 1.0 - p_x - p_y)

    @classmethod
    def uniform(cls) -> "StepDistribution":
        return cls.from_weights((1.0, 1.0, 1.0))

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.p_x, self.p_y, self.p_z)

    def cumulative(self) -> np.ndarray:
        return np.array([self.p_x, self.p_x + self.p_y])


def letter_indices(mu: StepDistribution, seed: int, n: int, stream: int = LETTER_STREAM) -> np.ndarray:
    """Indices 0, 1, 2 for x, y, z; the i-th entry depends only on (seed, stream, i)."""
    u = make_rng(seed, stream).random(n)
    return np.searchsorted(mu.cumulative(), u, side="right").astype(np.int8)


def sample_letters(mu: StepDistribution, seed: int, n: int) -> Word:
    return tuple(LETTERS[i] for i in letter_indices(mu, seed, n))


def _as_number(v: Scalar) -> Scalar:
    if isinstance(v, (int, Fraction)):
        return float(v)
    return v


@dataclass
class TrajectoryRecord:
    params: SurfaceParams
    start: SurfacePoint
    seed: int
    N: int
    thin: int
    mu: StepDistribution
    samples: np.ndarray
    sample_steps: np.ndarray
    letters: str
    letters_digest: str
    escaped: bool
    escape_step: Optional[int]
    max_log_norm: float
    visited: int
    moment_sums: np.ndarray
    box_count: int
    radius_counts: Dict[float, int]

    def to_json_dict(self) -> dict:
        return {
            "params": self.params.to_json_dict(),
            "start": self.start.to_json_dict(),
            "seed": self.seed,
            "N": self.N,
            "thin": self.thin,
            "mu": list(self.mu.as_tuple()),
            "letters_digest": self.letters_digest,
            "escaped": self.escaped,
            "escape_step": self.escape_step,
            "max_log_norm": self.max_log_norm,
            "visited": self.visited,
            "box_count": self.box_count,
            "radius_counts": {str(r): c for r, c in self.radius_counts.items()},
        }

    def sample_rows(self) -> Iterator[dict]:
        for step, p in zip(self.sample_steps, self.samples):
            yield {"step": int(step), "x": p[0], "y": p[1], "z": p[2]}


def run_trajectory(
    params: SurfaceParams,
    q: SurfacePoint,
    mu: StepDistribution,
    N: int,
    seed: int,
    thin: int = 1,
    radii: Sequence[float] = DEFAULT_RADII,
    policy: NumericPolicy = default_policy,
) -> TrajectoryRecord:
    """
    Visits f^j(q) for j = 0..N-1, stopping at the first point whose max coordinate modulus
    exceeds the escape radius; that step becomes the escape step and is not counted as visited.

    The radius test is the only check made while walking. Whether the norm grows monotonically after
    some step is decided afterwards, from the stored letters, by infinity_charts.certify_escape.
    """
    if N < 1 or thin < 1:
        raise ValueError("N and thin must be at least 1")
    coeffs = tuple(_as_number(c) for c in params.as_tuple())
    x, y, z = (_as_number(c) for c in q.as_tuple())
    idx = letter_indices(mu, seed, N)
    box = 2 + policy.box_tol
    radius = policy.escape_radius

    samples: List[Tuple[Scalar, Scalar, Scalar]] = []
    sample_steps: List[int] = []
    sums = [0.0] * 9
    box_count = 0
    radius_counts = {float(r): 0 for r in radii}
    max_log = -math.inf
    escape_step: Optional[int] = None

    for j in range(N):
        m = max(abs(x), abs(y), abs(z))
        if m > 0:
            max_log = max(max_log, math.log(m))
        if m > radius or not math.isfinite(m):
            escape_step = j
            break
        sums[0] += x
        sums[1] += y
        sums[2] += z
        sums[3] += x * x
        sums[4] += y * y
        sums[5] += z * z
        sums[6] += x * y
        sums[7] += y * z
        sums[8] += z * x
        if m <= box:
            box_count += 1
        norm = math.sqrt(abs(x) ** 2 + abs(y) ** 2 + abs(z) ** 2)
        for r in radius_counts:
            if norm <= r:
                radius_counts[r] += 1
        if j % thin == 0:
            samples.append((x, y, z))
            sample_steps.append(j)
        x, y, z = involution(int(idx[j]), coeffs, x, y, z)

    steps = N if escape_step is None else escape_step
    letters = "".join("xyz"[i] for i in idx[:steps])
    if escape_step is not None:
        logger.debug(f"seed {seed}: escaped at step {escape_step}")
    return TrajectoryRecord(
        params=params,
        start=q,
        seed=seed,
        N=N,
        thin=thin,
        mu=mu,
        samples=np.array(samples).reshape(-1, 3),
        sample_steps=np.array(sample_steps, dtype=int),
        letters=letters,
        letters_digest=hashlib.sha256(letters.encode()).hexdigest(),
        escaped=escape_step is not None,
        escape_step=escape_step,
        max_log_norm=max_log,
        visited=steps,
        moment_sums=np.array(sums),
        box_count=box_count,
        radius_counts=radius_counts,
    )


def replay_points(traj: TrajectoryRecord) -> Iterator[Tuple[Scalar, Scalar, Scalar]]:
    """Every visited point, recomputed from the stored letters."""
    coeffs = tuple(_as_number(c) for c in traj.params.as_tuple())
    x, y, z = (_as_number(c) for c in traj.start.as_tuple())
    for ch in traj.letters:
        yield (x, y, z)
        x, y, z = involution("xyz".index(ch), coeffs, x, y, z)


@dataclass
class EmpiricalSummary:
    """ν_N along one or more orbits; steps after an escape count as mass at infinity."""

    N: int
    visited: int
    moment_sums: np.ndarray
    box_count: int
    radius_counts: Dict[float, int]
    escaped_runs: int = 0
    runs: int = 1

    @property
    def moments(self) -> np.ndarray:
        if self.visited == 0:
            return np.full(9, np.nan)
        return self.moment_sums / self.visited

    @property
    def box_fraction(self) -> float:
        return self.box_count / self.N

    @property
    def escaped_fraction(self) -> float:
        return (self.N - self.visited) / self.N

    def radius_fractions(self) -> Dict[float, float]:
        return {r: c / self.N for r, c in self.radius_counts.items()}

    def merge(self, other: "EmpiricalSummary") -> "EmpiricalSummary":
        return EmpiricalSummary(
            N=self.N + other.N,
            visited=self.visited + other.visited,
            moment_sums=self.moment_sums + other.moment_sums,
            box_count=self.box_count + other.box_count,
            radius_counts={r: self.radius_counts.get(r, 0) + other.radius_counts.get(r, 0) for r in self.radius_counts},
            escaped_runs=self.escaped_runs + other.escaped_runs,
            runs=self.runs + other.runs,
        )

    def to_json_dict(self) -> dict:
        return {
            "N": self.N,
            "visited": self.visited,
            "runs": self.runs,
            "escaped_runs": self.escaped_runs,
            "moments": dict(zip(MOMENT_NAMES, self.moments.tolist())),
            "box_fraction": self.box_fraction,
            "escaped_fraction": self.escaped_fraction,
            "radius_fractions": {str(r): v for r, v in self.radius_fractions().items()},
        }


def empirical_summary(traj: TrajectoryRecord) -> EmpiricalSummary:
    return EmpiricalSummary(
        N=traj.N,
        visited=traj.visited,
        moment_sums=traj.moment_sums.copy(),
        box_count=traj.box_count,
        radius_counts=dict(traj.radius_counts),
        escaped_runs=int(traj.escaped),
    )


def merge_summaries(summaries: Iterable[EmpiricalSummary]) -> EmpiricalSummary:
    it = iter(summaries)
    total = next(it)
    for s in it:
        total = total.merge(s)
    return total


def batch_moment_means(traj: TrajectoryRecord, batches: int) -> np.ndarray:
    """Moment means over `batches` consecutive stretches of equal length; a short remainder is dropped."""
    size = traj.visited // batches
    rows: List[np.ndarray] = []
    if size == 0:
        return np.empty((0, 9))
    stretch: List[Tuple[Scalar, Scalar, Scalar]] = []
    for p in replay_points(traj):
        stretch.append(p)
        if len(stretch) == size:
            rows.append(moment_matrix(stretch).mean(axis=0))
            stretch = []
            if len(rows) == batches:
                break
    return np.array(rows).reshape(-1, 9)


def walk_moments(records: Sequence[TrajectoryRecord], batches: int = 20) -> MomentVector:
    """
    Moments of the pooled walk with a batch-means standard error: every trajectory is cut into
    `batches` stretches and the stretch means of all trajectories are treated as one sample.
    """
    rows = [batch_moment_means(r, batches) for r in records if r.visited >= batches]
    if not rows:
        raise ValueError(f"no trajectory visited at least {batches} points")
    matrix = np.vstack(rows)
    return jackknife_moments(matrix, blocks=len(matrix))


def run_farm(
    params: SurfaceParams,
    q: SurfacePoint,
    mu: StepDistribution,
    N: int,
    seeds: Sequence[int],
    thin: int = 1,
    workers: int = 1,
    radii: Sequence[float] = DEFAULT_RADII,
    policy: NumericPolicy = default_policy,
) -> List[TrajectoryRecord]:
    """One trajectory per seed, returned in seed order whatever the worker count."""
    records = Parallel(n_jobs=workers)(
        delayed(run_trajectory)(params, q, mu, N, s, thin, radii, policy) for s in tqdm(seeds, desc="Trajectories", leave=False)
    )
    escaped = sum(r.escaped for r in records)
    logger.info(f"Farm of {len(records)} trajectories on {params.as_tuple()}: {escaped} escaped")
    return records


@dataclass
class DiagonalRecord:
    records: List[TrajectoryRecord]

    @property
    def escaped(self) -> List[bool]:
        return [r.escaped for r in self.records]

    @property
    def letters_digest(self) -> str:
        return self.records[0].letters_digest if self.records else ""


def run_diagonal_trajectory(
    params_list: Sequence[SurfaceParams],
    starts: Sequence[SurfacePoint],
    mu: StepDistribution,
    N: int,
    seed: int,
    thin: int = 1,
    policy: NumericPolicy = default_policy,
) -> DiagonalRecord:
    """The same letter stream applied to every factor of S_1 × … × S_m; escape is flagged per factor."""
    if len(params_list) != len(starts) or not params_list:
        raise ValueError("need one start point per surface")
    return DiagonalRecord([run_trajectory(p, q, mu, N, seed, thin, policy=policy) for p, q in zip(params_list, starts)])


def _orbit_lookup(orbit: Finite, point: Tuple[Scalar, Scalar, Scalar], tol: float) -> Optional[int]:
    for i, p in enumerate(orbit.points):
        if max(abs(_as_number(u) - v) for u, v in zip(p.as_tuple(), point)) <= tol:
            return i
    return None


def orbit_visit_frequencies(traj: TrajectoryRecord, orbit: Finite, policy: NumericPolicy = default_policy) -> np.ndarray:
    counts = np.zeros(len(orbit.points))
    for point in replay_points(traj):
        i = _orbit_lookup(orbit, point, policy.orbit_match_tol)
        if i is None:
            raise ValueError(f"trajectory leaves the orbit at {point}")
        counts[i] += 1
    return counts / max(traj.visited, 1)


def stationary_decomposition(
    traj: TrajectoryRecord, orbit: Finite, policy: NumericPolicy = default_policy
) -> Dict[str, float]:
    """
    Empirical split of ν_N into mass on the finite orbit, mass elsewhere in the compact box,
    mass outside the box and mass at infinity. Reported as data.
    """
    on_orbit = in_box = 0
    box = 2 + policy.box_tol
    for point in replay_points(traj):
        if _orbit_lookup(orbit, point, policy.orbit_match_tol) is not None:
            on_orbit += 1
        elif max(abs(v) for v in point) <= box:
            in_box += 1
    n = traj.N
    return {
        "orbit": on_orbit / n,
        "compact": in_box / n,
        "outside": (traj.visited - on_orbit - in_box) / n,
        "infinity": (n - traj.visited) / n,
    }


# ---------------------------------------------------------------------------
# Lyapunov exponents
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LyapunovEstimate:
    lam_plus: float
    lam_minus: float
    steps: int
    cadence: int
    se_plus: float
    se_minus: float
    block_plus: Tuple[float, ...] = field(default_factory=tuple)
    block_minus: Tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lam_plus) and math.isfinite(self.lam_minus)):
            raise ValueError("Lyapunov exponents must be finite")
        if self.lam_plus < self.lam_minus:
            raise ValueError(f"λ+ = {self.lam_plus} lies below λ- = {self.lam_minus}")

    @property
    def exponent_sum(self) -> float:
        return self.lam_plus + self.lam_minus

    def to_json_dict(self) -> dict:
        return {
            "lambda_plus": self.lam_plus,
            "lambda_minus": self.lam_minus,
            "se_plus": self.se_plus,
            "se_minus": self.se_minus,
            "steps": self.steps,
            "cadence": self.cadence,
        }


class _QRCocycle:
    """Accumulates a 2x2 cocycle with a QR re-orthonormalization every `cadence` pushes."""

    def __init__(self, cadence: int, edges: np.ndarray) -> None:
        self.cadence = cadence
        self.edges = edges
        self.basis = np.eye(2)
        self.pending = 0
        self.pushed = 0
        self.log_sums = np.zeros((len(edges) - 1, 2))

    def push(self, matrix: np.ndarray) -> None:
        self.basis = matrix @ self.basis
        self.pushed += 1
        self.pending += 1
        if self.pending == self.cadence:
            self.flush()

    def flush(self) -> None:
        if not self.pending:
            return
        q, r = np.linalg.qr(self.basis)
        block = min(int(np.searchsorted(self.edges, self.pushed - 1, side="right")) - 1, len(self.log_sums) - 1)
        self.log_sums[block] += np.log(np.abs(np.diag(r)))
        self.basis = q
        self.pending = 0

    def totals(self) -> np.ndarray:
        return self.log_sums.sum(axis=0)


def _bootstrap_se(block_sums: np.ndarray, block_steps: np.ndarray, seed: int, resamples: int = 200) -> np.ndarray:
    k = len(block_sums)
    if k < 2:
        return np.zeros(2)
    rng = make_rng(seed, BOOTSTRAP_STREAM)
    picks = rng.integers(k, size=(resamples, k))
    estimates = block_sums[picks].sum(axis=1) / block_steps[picks].sum(axis=1)[:, None]
    return estimates.std(axis=0, ddof=1)


def estimate_lyapunov(
    params: SurfaceParams,
    q: SurfacePoint,
    mu: StepDistribution,
    N: int,
    seed: int,
    cadence: int = 8,
    blocks: int = 20,
    policy: NumericPolicy = default_policy,
) -> LyapunovEstimate:
    """
    λ± of the restricted-differential cocycle along the walk from q, in nats per step.

    Only walks confined to the compact box are accepted: a start outside the compact component
    or a step leaving the box raises EscapeError.
    """
    if not (params.is_real and q.is_real):
        raise NonRealInputError("Lyapunov exponents are estimated on real compact components")
    if not in_compact_component(params, q, policy):
        raise EscapeError(f"start {q.as_tuple()} is not on the compact component", step=0)
    n_blocks = max(1, min(blocks, N // cadence))
    edges = np.linspace(0, N, n_blocks + 1).astype(int)
    cocycle = _QRCocycle(cadence, edges)

    coeffs = tuple(float(c) for c in params.as_tuple())
    p = SurfacePoint(*(float(v) for v in q.as_tuple()))
    idx = letter_indices(mu, seed, N)
    box = 2 + policy.box_tol

    def partial(step: int) -> dict:
        totals = cocycle.totals()
        return {"step": step, "log_sums": totals.tolist()}

    try:
        frame = tangent_frame(params, p, policy)
        for j in tqdm(range(N), desc="Lyapunov", leave=False, disable=N < 100_000):
            letter = LETTERS[int(idx[j])]
            image = SurfacePoint(*involution(letter.index, coeffs, p.x, p.y, p.z))
            if image.max_abs() > box:
                cocycle.flush()
                raise EscapeError(f"walk left the compact box at step {j + 1}", step=j + 1, partial=partial(j + 1))
            next_frame = tangent_frame(params, image, policy)
            cocycle.push(restricted_differential(letter, params, p, frame, next_frame, policy))
            p, frame = image, next_frame
    except SingularPointError as e:
        cocycle.flush()
        raise SingularPointError(str(e), point=e.point, partial=partial(cocycle.pushed)) from e
    cocycle.flush()

    block_steps = np.diff(edges).astype(float)
    lam = cocycle.totals() / N
    se = _bootstrap_se(cocycle.log_sums, block_steps, seed)
    per_block = cocycle.log_sums / block_steps[:, None]
    # QR diagonals of a short run need not come out in decreasing order
    order = [0, 1] if lam[0] >= lam[1] else [1, 0]
    lam, se, per_block = lam[order], se[order], per_block[:, order]
    logger.info(f"Lyapunov estimate over {N} steps: λ+ = {lam[0]:.5f} ± {se[0]:.1e}, λ- = {lam[1]:.5f} ± {se[1]:.1e}")
    return LyapunovEstimate(
        lam_plus=float(lam[0]),
        lam_minus=float(lam[1]),
        steps=N,
        cadence=cadence,
        se_plus=float(se[0]),
        se_minus=float(se[1]),
        block_plus=tuple(per_block[:, 0].tolist()),
        block_minus=tuple(per_block[:, 1].tolist()),
    )


def matrix_cocycle_lyapunov(matrices: Iterable[np.ndarray], cadence: int = 8) -> float:
    """Top exponent (1/n)·log‖M_n⋯M_1‖ of a product of 2x2 matrices, with QR renormalization."""
    cocycle = _QRCocycle(cadence, np.array([0, 1]))
    for m in matrices:
        cocycle.push(np.asarray(m, dtype=float))
    cocycle.flush()
    if cocycle.pushed == 0:
        raise ValueError("no matrices to multiply")
    return float(cocycle.totals()[0] / cocycle.pushed)


def _ratio(a: Scalar, b: Scalar) -> Scalar:
    if isinstance(a, (int, Fraction)) and isinstance(b, (int, Fraction)):
        return Fraction(a) / Fraction(b)
    return a / b


def coordinate_tangent_basis(params: SurfaceParams, p: SurfacePoint) -> Tuple[int, np.ndarray]:
    """
    Tangent basis e_i - (g_i/g_k)·e_k, i != k, where k is the last index of the largest |g_k|.

    Exact on rational points; at the origin of S_(1,1,1,0) it is (1,0,-1), (0,1,-1).
    """
    g = gradient(params, p)
    mags = [abs(v) for v in g]
    top = max(mags)
    if top == 0:
        raise SingularPointError(f"no tangent plane at the singular point {p.as_tuple()}", point=p)
    k = max(i for i in range(3) if mags[i] == top)
    cols = []
    for i in range(3):
        if i == k:
            continue
        col = [0, 0, 0]
        col[i] = 1
        col[k] = -_ratio(g[i], g[k])
        cols.append(col)
    return k, np.array([[cols[0][r], cols[1][r]] for r in range(3)], dtype=object)


def finite_orbit_cocycle(params: SurfaceParams, orbit: Finite) -> Dict[Tuple[int, Letter], Tuple[int, np.ndarray]]:
    """(point index, letter) -> (image index, 2x2 differential in the coordinate tangent bases)."""
    bases = [coordinate_tangent_basis(params, p) for p in orbit.points]
    table = {}
    for i, l, j in orbit.edges:
        pushed = ambient_jacobian(l, params, orbit.points[i]).dot(bases[i][1])
        k, target = bases[j]
        rows = [r for r in range(3) if r != k]
        coords = pushed[rows, :]
        miss = pushed[k, :] - target[k, :].dot(coords)
        if any(abs(v) > 1e-9 for v in miss):
            raise FrameMismatchError(f"differential of s_{Letter(l).value} leaves the tangent plane", residual=float(max(abs(v) for v in miss)))
        table[(i, Letter(l))] = (j, coords)
    return table


def orbit_cocycle_matrices(
    table: Dict[Tuple[int, Letter], Tuple[int, np.ndarray]], start: int, indices: Iterable[int]
) -> Iterator[np.ndarray]:
    i = start
    for k in indices:
        i, m = table[(i, LETTERS[int(k)])]
        yield m
