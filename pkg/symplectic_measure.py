"""
symplectic_measure.py: i.i.d. sampling from the normalized area measure on the compact component.

The compact component is split into three chart regions by the largest |∂F/∂c| (ties broken z, x, y).
On the c-chart the area density with respect to the two free coordinates is 1/|∂F/∂c|. Free
coordinates are proposed from the product arcsine law on [-2, 2]², which leaves the bounded ratio

    ρ = √((4 - s²)(4 - t²)) / |∂F/∂c|

to be accepted against a grid-calibrated envelope.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy.special import roots_legendre

from config import NumericPolicy, default_policy
from errors import EnvelopeViolation, NoCompactComponentError, NonRealInputError
from scalar_geometry import SurfaceParams, SurfacePoint
from utils import make_rng, write_jsonl

logger = logging.getLogger(__name__)

# claim order for ties between gradient components
CHART_ORDER = (2, 0, 1)
MOMENT_NAMES = ("x", "y", "z", "xx", "yy", "zz", "xy", "yz", "zx")
PROPOSAL_MASS = 6 * math.pi ** 2


@dataclass
class SymplecticSample:
    params: SurfaceParams
    points: np.ndarray
    charts: np.ndarray
    seed: int
    n_proposals: int
    n_valid: int
    area: float
    area_se: float
    envelope: float

    @property
    def acceptance_rate(self) -> float:
        return len(self.points) / self.n_proposals if self.n_proposals else 0.0

    def __len__(self) -> int:
        return len(self.points)

    def surface_points(self) -> List[SurfacePoint]:
        return [SurfacePoint(*map(float, row)) for row in self.points]


@dataclass(frozen=True)
class MomentVector:
    values: np.ndarray
    se: np.ndarray

    def as_dict(self) -> Dict[str, Dict[str, float]]:
        return {name: {"mean": float(v), "se": float(s)} for name, v, s in zip(MOMENT_NAMES, self.values, self.se)}


def _real_coeffs(params: SurfaceParams) -> Tuple[float, float, float, float]:
    if not params.is_real:
        raise NonRealInputError("the symplectic measure lives on real surfaces")
    return tuple(float(v) for v in params.as_tuple())


def _chart_candidates(
    coeffs: Sequence[float], chart: int, s: np.ndarray, t: np.ndarray, root: np.ndarray, policy: NumericPolicy
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Points over (s, t) on the chosen fiber root, their acceptance ratio and validity mask.

    (s, t) are the coordinates following `chart` cyclically: (x, y) for z, (y, z) for x, (z, x) for y.
    """
    K, L, M, D = coeffs[chart], coeffs[(chart + 1) % 3], coeffs[(chart + 2) % 3], coeffs[3]
    b = s * t - K
    c = s * s + t * t - L * s - M * t - D
    disc = b * b - 4 * c
    real = disc >= 0
    sq = np.sqrt(np.where(real, disc, 0.0))
    val = (-b + np.where(root == 0, sq, -sq)) / 2

    pts = np.empty(s.shape + (3,))
    pts[..., chart] = val
    pts[..., (chart + 1) % 3] = s
    pts[..., (chart + 2) % 3] = t

    x, y, z = pts[..., 0], pts[..., 1], pts[..., 2]
    grads = np.abs(np.stack([2 * x + y * z - coeffs[0], 2 * y + z * x - coeffs[1], 2 * z + x * y - coeffs[2]], axis=-1))
    top = grads.max(axis=-1)
    claimed_by = np.select([grads[..., k] == top for k in CHART_ORDER], [np.full(top.shape, k) for k in CHART_ORDER])
    # |∂F/∂c| equals √disc on either root
    g_c = grads[..., chart]
    in_box = np.abs(pts).max(axis=-1) <= 2 + policy.box_tol
    valid = real & in_box & (claimed_by == chart) & (g_c > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.where(valid, np.sqrt(np.clip((4 - s * s) * (4 - t * t), 0, None)) / np.where(g_c > 0, g_c, 1.0), 0.0)
    return pts, rho, valid


def envelope_bound(params: SurfaceParams, policy: NumericPolicy = default_policy) -> float:
    """Grid prepass: the largest acceptance ratio seen on a midpoint grid, divided by the safety factor."""
    coeffs = _real_coeffs(params)
    n = policy.envelope_grid
    mids = -2 + (np.arange(n) + 0.5) * 4 / n
    s, t = np.meshgrid(mids, mids, indexing="ij")
    best = 0.0
    hits = 0
    for chart in CHART_ORDER:
        for root in (0, 1):
            _, rho, valid = _chart_candidates(coeffs, chart, s, t, np.full(s.shape, root), policy)
            hits += int(valid.sum())
            if valid.any():
                best = max(best, float(rho[valid].max()))
    if hits == 0 or best == 0:
        raise NoCompactComponentError(f"grid prepass found no compact-component points on {params.as_tuple()}")
    logger.debug(f"Envelope prepass: {hits} grid hits, max ratio {best:.6g}")
    return best / policy.envelope_safety


def _propose(rng: np.random.Generator, size: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    chart = rng.integers(3, size=size)
    root = rng.integers(2, size=size)
    s = 2 * np.cos(math.pi * rng.random(size))
    t = 2 * np.cos(math.pi * rng.random(size))
    return chart, root, s, t


def _stream(coeffs, n_target: int, n_proposals: Optional[int], seed: int, stream: int, bound: float, policy: NumericPolicy):
    """One seeded stream: accept until n_target points (or exactly n_proposals proposals when given)."""
    rng = make_rng(seed, stream + 1)
    accepted: List[np.ndarray] = []
    charts: List[np.ndarray] = []
    weights_sum = weights_sq = 0.0
    proposals = valid_count = n_acc = 0
    batch = 4096
    while (n_proposals is None and n_acc < n_target) or (n_proposals is not None and proposals < n_proposals):
        size = batch if n_proposals is None else min(batch, n_proposals - proposals)
        chart, root, s, t = _propose(rng, size)
        u = rng.random(size)
        pts = np.zeros((size, 3))
        rho = np.zeros(size)
        valid = np.zeros(size, dtype=bool)
        for c in range(3):
            sel = chart == c
            if sel.any():
                pts[sel], rho[sel], valid[sel] = _chart_candidates(coeffs, c, s[sel], t[sel], root[sel], policy)
        if (rho > bound).any():
            i = int(np.argmax(rho))
            raise EnvelopeViolation(
                f"acceptance ratio {rho[i]:.6g} exceeds envelope {bound:.6g}", point=tuple(pts[i]), ratio=float(rho[i]), bound=bound
            )
        keep = valid & (u * bound < rho)
        if n_proposals is None:
            room = n_target - n_acc
            idx = np.flatnonzero(keep)[:room]
            # proposals beyond the last needed acceptance are not counted
            used = size if len(idx) < room else int(idx[-1]) + 1
        else:
            idx = np.flatnonzero(keep)
            used = size
        w = PROPOSAL_MASS * rho[:used]
        weights_sum += float(w.sum())
        weights_sq += float((w * w).sum())
        valid_count += int(valid[:used].sum())
        proposals += used
        accepted.append(pts[idx])
        charts.append(chart[idx])
        n_acc += len(idx)
    return (
        np.concatenate(accepted) if accepted else np.zeros((0, 3)),
        np.concatenate(charts) if charts else np.zeros(0, dtype=int),
        proposals,
        valid_count,
        weights_sum,
        weights_sq,
    )


def _merge_streams(params, results, seed, bound) -> SymplecticSample:
    points = np.concatenate([r[0] for r in results])
    charts = np.concatenate([r[1] for r in results])
    proposals = sum(r[2] for r in results)
    total, total_sq = sum(r[4] for r in results), sum(r[5] for r in results)
    area = total / proposals
    var = max(total_sq / proposals - area * area, 0.0)
    return SymplecticSample(
        params=params,
        points=points,
        charts=charts,
        seed=seed,
        n_proposals=proposals,
        n_valid=sum(r[3] for r in results),
        area=area,
        area_se=math.sqrt(var / proposals),
        envelope=bound,
    )


def sample_symplectic(
    params: SurfaceParams,
    n: int,
    seed: int = 0,
    streams: int = 1,
    workers: int = 1,
    policy: NumericPolicy = default_policy,
) -> SymplecticSample:
    """
    n independent draws from the area measure on the compact component.

    Streams are seeded (seed, stream) and concatenated in stream order, so the output depends on
    the stream count but not on the worker count.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    coeffs = _real_coeffs(params)
    bound = envelope_bound(params, policy)
    shares = [n // streams + (1 if k < n % streams else 0) for k in range(streams)]
    results = Parallel(n_jobs=workers)(
        delayed(_stream)(coeffs, share, None, seed, k, bound, policy) for k, share in enumerate(shares)
    )
    sample = _merge_streams(params, results, seed, bound)
    logger.info(
        f"Sampled {len(sample)} points on {params.as_tuple()}: acceptance {sample.acceptance_rate:.3f}, "
        f"area {sample.area:.6g} ± {sample.area_se:.2g}"
    )
    return sample


def total_area(
    params: SurfaceParams, n: int, seed: int = 0, policy: NumericPolicy = default_policy
) -> Tuple[float, float]:
    """Importance estimate of the compact area from n proposals: 6π²·E[1{valid}·ρ]."""
    coeffs = _real_coeffs(params)
    bound = envelope_bound(params, policy)
    result = _stream(coeffs, 0, n, seed, 0, bound, policy)
    sample = _merge_streams(params, [result], seed, bound)
    if sample.area < policy.area_floor:
        logger.warning(f"Compact area {sample.area:.3g} below {policy.area_floor}; the component may be a single point")
    return sample.area, sample.area_se


def moment_matrix(points: np.ndarray) -> np.ndarray:
    p = np.atleast_2d(np.asarray(points, dtype=float))
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    return np.column_stack([x, y, z, x * x, y * y, z * z, x * y, y * z, z * x])


def jackknife_moments(values: np.ndarray, blocks: int = 50) -> MomentVector:
    """Means with delete-one-block jackknife standard errors."""
    n = len(values)
    if n == 0:
        raise ValueError("moments of an empty sample")
    mean = values.mean(axis=0)
    k = min(blocks, n)
    if k < 2:
        return MomentVector(mean, np.zeros_like(mean))
    edges = np.linspace(0, n, k + 1).astype(int)
    sums = np.array([values[a:b].sum(axis=0) for a, b in zip(edges[:-1], edges[1:])])
    sizes = np.diff(edges)
    total = values.sum(axis=0)
    leave_out = (total - sums) / (n - sizes)[:, None]
    var = (k - 1) / k * ((leave_out - leave_out.mean(axis=0)) ** 2).sum(axis=0)
    return MomentVector(mean, np.sqrt(var))


def symplectic_moments(sample: SymplecticSample, policy: NumericPolicy = default_policy) -> MomentVector:
    if len(sample) == 0:
        raise ValueError("empty symplectic sample")
    return jackknife_moments(moment_matrix(sample.points), policy.jackknife_blocks)


def export_sample_jsonl(sample: SymplecticSample, path: str) -> int:
    header = {
        "params": sample.params,
        "seed": sample.seed,
        "n": len(sample),
        "acceptance_rate": sample.acceptance_rate,
        "area": sample.area,
        "area_se": sample.area_se,
    }
    return write_jsonl(path, header, ({"x": p[0], "y": p[1], "z": p[2]} for p in sample.points))


def _gauss_nodes(panels: int, order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Composite Gauss–Legendre rule on [0, π]."""
    x, w = roots_legendre(order)
    width = math.pi / panels
    left = np.arange(panels) * width
    nodes = (left[:, None] + (x[None, :] + 1) * width / 2).ravel()
    weights = np.tile(w * width / 2, panels)
    return nodes, weights


def chart_quadrature(
    params: SurfaceParams,
    exponents: Sequence[Tuple[int, int, int]] = ((0, 0, 0),),
    panels: int = 60,
    order: int = 8,
    policy: NumericPolicy = default_policy,
) -> np.ndarray:
    """
    ∫ x^i y^j z^k dArea over the compact component for each exponent triple.

    With s = 2cos θ, t = 2cos φ the chart density becomes ρ dθ dφ on [0, π]².
    """
    coeffs = _real_coeffs(params)
    nodes, weights = _gauss_nodes(panels, order)
    th, ph = np.meshgrid(nodes, nodes, indexing="ij")
    w2 = np.outer(weights, weights)
    s, t = 2 * np.cos(th), 2 * np.cos(ph)
    out = np.zeros(len(exponents))
    for chart in CHART_ORDER:
        for root in (0, 1):
            pts, rho, valid = _chart_candidates(coeffs, chart, s, t, np.full(s.shape, root), policy)
            dens = np.where(valid, rho, 0.0) * w2
            for k, (i, j, l) in enumerate(exponents):
                out[k] += float((dens * pts[..., 0] ** i * pts[..., 1] ** j * pts[..., 2] ** l).sum())
    return out


def chart_quadrature_moment(
    params: SurfaceParams, exponents: Tuple[int, int, int], policy: NumericPolicy = default_policy, **kwargs
) -> float:
    """Normalized moment E[x^i y^j z^k] under the symplectic probability measure, by quadrature."""
    area, raw = chart_quadrature(params, [(0, 0, 0), tuple(exponents)], policy=policy, **kwargs)
    if area < policy.area_floor:
        raise NoCompactComponentError(f"quadrature area {area:.3g} is below {policy.area_floor}")
    return raw / area
