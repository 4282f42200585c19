"""
infinity_charts.py: dynamics near the triangle at infinity.

Local charts at the vertices p1 = [1:0:0:0], p2 = [0:1:0:0], p3 = [0:0:1:0] with the cyclic convention

    P1: (u, v) = (y/x, z/x)    P2: (u, v) = (z/y, x/y)    P3: (u, v) = (x/z, y/z),

the local height w = 1/(dominant coordinate) as the graph of the chart cubic, the monomial
shadow A = [[0,1],[1,1]], B = [[1,1],[1,0]] acting on (α, β) = (-log|u|, -log|v|), a brute-force
harness for the growth lemmas of the <A, B> semigroup, and escape certificates for walks.
"""

import hashlib
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.optimize import brentq

from config import NumericPolicy, default_policy
from errors import CertificateFailure, GrowthLemmaViolation, IndeterminacyError, NewtonDivergence, NotNearInfinity
from scalar_geometry import Scalar, SurfaceParams, SurfacePoint
from utils import make_rng
from vieta_group import LETTERS, Letter, involution

logger = logging.getLogger(__name__)


class ChartId(Enum):
    P1 = 0
    P2 = 1
    P3 = 2

    @property
    def index(self) -> int:
        return self.value


# first maximal coordinate wins in this order
CHART_PRIORITY = (2, 0, 1)


@dataclass(frozen=True)
class ChartCoords:
    chart: ChartId
    u: Scalar
    v: Scalar


@dataclass(frozen=True)
class LogCoords:
    alpha: float
    beta: float

    @property
    def l1(self) -> float:
        return self.alpha + self.beta

    def as_tuple(self) -> Tuple[float, float]:
        return (self.alpha, self.beta)


MON_MATRICES = {"A": np.array([[0, 1], [1, 1]]), "B": np.array([[1, 1], [1, 0]])}


def indeterminacy_vertex(l: Letter) -> ChartId:
    return ChartId(Letter(l).index)


def destination_vertex(l: Letter) -> ChartId:
    """s_l contracts the boundary minus its indeterminacy vertex onto this same vertex."""
    return indeterminacy_vertex(l)


def _chart_terms(chart: ChartId, params: SurfaceParams) -> Tuple[Scalar, Scalar, Scalar, Scalar]:
    k = chart.index
    coeffs = params.as_tuple()
    return coeffs[k], coeffs[(k + 1) % 3], coeffs[(k + 2) % 3], params.D


def _dominant_index(coords: Sequence[Scalar]) -> int:
    mags = [abs(c) for c in coords]
    top = max(mags)
    return next(k for k in CHART_PRIORITY if mags[k] == top)


def to_chart(p: SurfacePoint, policy: NumericPolicy = default_policy) -> ChartCoords:
    coords = p.as_tuple()
    k = _dominant_index(coords)
    if abs(coords[k]) < policy.chart_threshold:
        raise NotNearInfinity(f"{coords} is inside the threshold {policy.chart_threshold}")
    return ChartCoords(ChartId(k), coords[(k + 1) % 3] / coords[k], coords[(k + 2) % 3] / coords[k])


def log_coords(c: ChartCoords) -> LogCoords:
    if c.u == 0 or c.v == 0:
        raise NotNearInfinity("a chart point on the boundary has infinite log-coordinates")
    return LogCoords(-math.log(abs(c.u)), -math.log(abs(c.v)))


def graph_height(
    chart: ChartId, params: SurfaceParams, u: Scalar, v: Scalar, policy: NumericPolicy = default_policy
) -> Scalar:
    """
    Root w near 0 of (1 + u² + v²) w + uv = (K + L·u + M·v) w² + D w³.

    (K; L, M) is (C; A, B) at P3 and its cyclic shift elsewhere. Newton from -uv/(1 + u² + v²).
    """
    if abs(u) > policy.chart_region or abs(v) > policy.chart_region:
        raise NotNearInfinity(f"({u}, {v}) is outside the chart region {policy.chart_region}")
    K, L, M, D = _chart_terms(chart, params)
    lin = 1 + u * u + v * v
    quad = K + L * u + M * v
    w = -u * v / lin
    iterates = [w]
    for _ in range(policy.height_max_iter):
        g = lin * w + u * v - quad * w * w - D * w ** 3
        dg = lin - 2 * quad * w - 3 * D * w * w
        step = g / dg
        w = w - step
        iterates.append(w)
        if abs(step) <= policy.height_tol * abs(w) or g == 0:
            return w
    raise NewtonDivergence(f"graph height did not converge at ({u}, {v}) in chart {chart.name}", iterates=iterates)


def phi_taylor(chart: ChartId, params: SurfaceParams, u: Scalar, v: Scalar, quartic_d_sign: int = -1) -> Scalar:
    """
    Truncated expansion of the chart height:

        -uv·[1 - (u² + K·uv + v²) - (L·u + M·v)·uv + (u⁴ + 3K·u³v + (2 ∓ D + 2K²)·u²v² + 3K·uv³ + v⁴)]

    quartic_d_sign = -1 gives the 2 - D + 2K² form; +1 gives 2 + D + 2K², which is what the
    chart cubic itself produces when expanded by hand.
    """
    K, L, M, D = _chart_terms(chart, params)
    uv = u * v
    quartic = u ** 4 + 3 * K * u ** 3 * v + (2 + quartic_d_sign * D + 2 * K * K) * uv * uv + 3 * K * u * v ** 3 + v ** 4
    return -uv * (1 - (u * u + K * uv + v * v) - (L * u + M * v) * uv + quartic)


def phi3_taylor(params: SurfaceParams, u: Scalar, v: Scalar) -> Scalar:
    return phi_taylor(ChartId.P3, params, u, v)


def _homogeneous(chart: ChartId, u: Scalar, v: Scalar, w: Scalar) -> List[Scalar]:
    k = chart.index
    coords = [0, 0, 0]
    coords[k], coords[(k + 1) % 3], coords[(k + 2) % 3] = 1, u, v
    return coords + [w]


def from_chart(params: SurfaceParams, c: ChartCoords, policy: NumericPolicy = default_policy) -> SurfacePoint:
    w = graph_height(c.chart, params, c.u, c.v, policy)
    if w == 0:
        raise NotNearInfinity("chart point lies on the boundary triangle")
    x, y, z, _ = _homogeneous(c.chart, c.u, c.v, w)
    return SurfacePoint(x / w, y / w, z / w)


def _projective_letter(l: Letter, params: SurfaceParams, hom: Sequence[Scalar]) -> List[Scalar]:
    """[x:y:z:w] -> image, e.g. s_x[x:y:z:w] = [-xw - yz + A w² : yw : zw : w²]."""
    i = Letter(l).index
    w = hom[3]
    out = [hom[0] * w, hom[1] * w, hom[2] * w, w * w]
    j, k = (i + 1) % 3, (i + 2) % 3
    out[i] = -hom[i] * w - hom[j] * hom[k] + params.as_tuple()[i] * w * w
    return out


def chart_transition(
    l: Letter, params: SurfaceParams, c: ChartCoords, policy: NumericPolicy = default_policy
) -> ChartCoords:
    l = Letter(l)
    if indeterminacy_vertex(l) == c.chart:
        raise IndeterminacyError(f"s_{l.value} is not defined at the vertex {c.chart.name}", letter=l, chart=c.chart)
    w = graph_height(c.chart, params, c.u, c.v, policy)
    image = _projective_letter(l, params, _homogeneous(c.chart, c.u, c.v, w))
    k = _dominant_index(image[:3])
    dominant = image[k]
    if dominant == 0 or abs(image[3]) > abs(dominant) / policy.chart_threshold:
        raise NotNearInfinity(f"image of {c} under s_{l.value} leaves the neighbourhood of infinity")
    return ChartCoords(ChartId(k), image[(k + 1) % 3] / dominant, image[(k + 2) % 3] / dominant)


def monomial_shadow(l: Letter, source: ChartId) -> Tuple[str, ChartId]:
    """
    (X,P2)->(A,P1)  (X,P3)->(B,P1)  (Y,P3)->(A,P2)  (Y,P1)->(B,P2)  (Z,P1)->(A,P3)  (Z,P2)->(B,P3)
    """
    l = Letter(l)
    i = l.index
    if source.index == i:
        raise IndeterminacyError(f"s_{l.value} has its indeterminacy point at {source.name}", letter=l, chart=source)
    name = "A" if source.index == (i + 1) % 3 else "B"
    return name, ChartId(i)


def apply_mon(name: str, alpha: float, beta: float) -> Tuple[float, float]:
    if name == "A":
        return beta, alpha + beta
    return alpha + beta, alpha


def semigroup_apply(word: Sequence[str], lc: LogCoords) -> LogCoords:
    """Folds A(α,β) = (β, α+β) and B(α,β) = (α+β, α) over the word, first letter acting first."""
    if lc.alpha < 0 or lc.beta < 0:
        raise ValueError(f"log-coordinates must be nonnegative, got {lc}")
    alpha, beta = lc.alpha, lc.beta
    for name in word:
        if name not in MON_MATRICES:
            raise ValueError(f"semigroup words use the letters A and B, got {name!r}")
        alpha, beta = apply_mon(name, alpha, beta)
    return LogCoords(alpha, beta)


def shadow_weight(alpha: float, beta: float) -> float:
    return math.exp(-2 * min(alpha, beta))


def solve_growth_radius(C: float) -> float:
    """Smallest R > 0 with R >= 2C·exp(-2R)."""
    if C <= 0:
        return 0.0
    return brentq(lambda r: r - 2 * C * math.exp(-2 * r), 0.0, max(1.0, 2 * C))


# ---------------------------------------------------------------------------
# calibration of the shadow constants
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Calibration:
    C_cal: float
    R_cal: float
    R_root: float
    sup_l1_weighted: float
    samples: int


def shadow_errors(
    params: SurfaceParams,
    n_samples: int,
    seed: int = 0,
    span: float = 5.0,
    policy: NumericPolicy = default_policy,
) -> pd.DataFrame:
    """Chart points with α, β in [R_edge, R_edge + span], random admissible letters, and their shadow errors."""
    rng = make_rng(seed, 7)
    edge = -math.log(policy.chart_region)
    rows = []
    for _ in range(n_samples):
        chart = ChartId(int(rng.integers(3)))
        letter = [l for l in LETTERS if l.index != chart.index][int(rng.integers(2))]
        alpha, beta = edge + span * rng.random(), edge + span * rng.random()
        su, sv = rng.choice([-1.0, 1.0], size=2)
        c = ChartCoords(chart, su * math.exp(-alpha), sv * math.exp(-beta))
        image = chart_transition(letter, params, c, policy)
        name, dest = monomial_shadow(letter, chart)
        pa, pb = apply_mon(name, alpha, beta)
        obs = log_coords(image)
        err = abs(obs.alpha - pa) + abs(obs.beta - pb)
        rows.append(
            {
                "chart": chart.name,
                "letter": letter.value,
                "alpha": alpha,
                "beta": beta,
                "dest_ok": image.chart == dest,
                "error": err,
                "scaled_min": err / shadow_weight(alpha, beta),
                "scaled_l1": err * math.exp(2 * (alpha + beta)),
            }
        )
    return pd.DataFrame(rows)


def calibrate(
    params: SurfaceParams,
    n_samples: int = 1000,
    seed: int = 0,
    span: float = 5.0,
    policy: NumericPolicy = default_policy,
) -> Calibration:
    """
    C_cal = sup of shadow error · exp(2·min(α, β)) over the sample; R_cal is the smallest R with
    R >= 2·C_cal·exp(-2R), raised to the chart edge -log(region) and to 1.
    """
    errors = shadow_errors(params, n_samples, seed, span, policy)
    if not errors["dest_ok"].all():
        bad = errors[~errors["dest_ok"]].iloc[0].to_dict()
        raise CertificateFailure(f"chart transition landed outside the shadow destination: {bad}")
    c_cal = float(errors["scaled_min"].max())
    r_root = solve_growth_radius(c_cal)
    r_cal = max(r_root, -math.log(policy.chart_region), 1.0)
    logger.info(f"Calibrated shadow constants: C_cal={c_cal:.4g}, R_cal={r_cal:.4g} (root {r_root:.4g})")
    return Calibration(
        C_cal=c_cal,
        R_cal=r_cal,
        R_root=r_root,
        sup_l1_weighted=float(errors["scaled_l1"].max()),
        samples=n_samples,
    )


# ---------------------------------------------------------------------------
# growth lemmas of the <A, B> semigroup
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    max_value: float = 5.0
    step: float = 0.25

    def values(self) -> np.ndarray:
        n = int(round(self.max_value / self.step))
        return np.arange(n + 1) * self.step


@dataclass
class GrowthReport:
    words: int = 0
    checks: Dict[str, int] = field(default_factory=lambda: {"single_step": 0, "trichotomy": 0, "min_growth": 0, "perturbed": 0})
    violations: Dict[str, int] = field(default_factory=lambda: {"single_step": 0, "trichotomy": 0, "min_growth": 0, "perturbed": 0})
    worst_slack: Dict[str, float] = field(default_factory=dict)
    witnesses: List[dict] = field(default_factory=list)
    C: float = 0.0
    R: float = 0.0

    @property
    def total_violations(self) -> int:
        return sum(self.violations.values())

    def record(self, kind: str, checks: int, slacks: np.ndarray, failed: np.ndarray, witness: Dict[str, Any]) -> None:
        self.checks[kind] += checks
        n_bad = int(np.count_nonzero(failed))
        self.violations[kind] += n_bad
        if slacks.size:
            worst = float(np.min(slacks))
            self.worst_slack[kind] = min(self.worst_slack.get(kind, math.inf), worst)
        if n_bad and len(self.witnesses) < 20:
            self.witnesses.append({"check": kind, **witness})

    def merge(self, other: "GrowthReport") -> "GrowthReport":
        merged = GrowthReport(words=self.words + other.words, C=self.C, R=self.R)
        for kind in merged.checks:
            merged.checks[kind] = self.checks[kind] + other.checks[kind]
            merged.violations[kind] = self.violations[kind] + other.violations[kind]
        for kind in set(self.worst_slack) | set(other.worst_slack):
            merged.worst_slack[kind] = min(self.worst_slack.get(kind, math.inf), other.worst_slack.get(kind, math.inf))
        merged.witnesses = (self.witnesses + other.witnesses)[:20]
        return merged

    def summary(self) -> Dict[str, Any]:
        return {
            "words": self.words,
            "C": self.C,
            "R": self.R,
            "checks": dict(self.checks),
            "violations": dict(self.violations),
            "total_violations": self.total_violations,
            "worst_slack": dict(self.worst_slack),
            "witnesses": list(self.witnesses),
        }

    def slack_table(self) -> pd.DataFrame:
        return pd.DataFrame(
            [{"check": k, "checks": self.checks[k], "violations": self.violations[k], "worst_slack": self.worst_slack.get(k)} for k in self.checks]
        )


def _word_id(word: str) -> int:
    return int("1" + word.replace("A", "0").replace("B", "1"), 2)


def _boundary_predicted(word: str, alpha0: np.ndarray, beta0: np.ndarray) -> np.ndarray:
    """Orbits staying on the boundary of R²₊: α = 0 with B,A,B,A,... or β = 0 with A,B,A,B,..."""
    alt_b = all(ch == ("B" if i % 2 == 0 else "A") for i, ch in enumerate(word))
    alt_a = all(ch == ("A" if i % 2 == 0 else "B") for i, ch in enumerate(word))
    origin = (alpha0 == 0) & (beta0 == 0)
    return origin | ((alpha0 == 0) & alt_b) | ((beta0 == 0) & alt_a)


def _growth_block(
    first: str, max_len: int, grid: GridSpec, C: float, R: float, perturbations: int, seed: int
) -> GrowthReport:
    report = GrowthReport(C=C, R=R)
    vals = grid.values()
    a0, b0 = (arr.ravel() for arr in np.meshgrid(vals, vals, indexing="ij"))
    interior = (a0 > 0) & (b0 > 0)

    start_rng = make_rng(seed, 0)
    eligible = np.flatnonzero((a0 >= R) & (b0 >= R))
    if eligible.size:
        picks = eligible[start_rng.integers(eligible.size, size=perturbations)]
        pa0, pb0 = a0[picks].copy(), b0[picks].copy()
    else:
        pa0 = pb0 = np.zeros(0)
    tol = 1e-9

    def visit(word: str, alpha, beta, on_boundary, kept_prev, prev_letter, pa, pb):
        name = word[-1]
        # (i) single-step bound ‖U(α,β)‖₁ >= ‖(α,β)‖₁ + min(α,β); A adds β and B adds α
        na, nb = apply_mon(name, alpha, beta)
        slack = (na + nb) - (alpha + beta) - np.minimum(alpha, beta)
        bad = slack < -tol
        report.record("single_step", slack.size, slack, bad, {"word": word, "point": _first(bad, a0, b0)})

        # (ii) boundary orbits happen only in the alternating cases
        on_boundary = on_boundary & (np.minimum(na, nb) == 0)
        predicted = _boundary_predicted(word, a0, b0)
        bad = on_boundary != predicted
        report.record("trichotomy", bad.size, np.where(bad, -1.0, 0.0), bad, {"word": word, "point": _first(bad, a0, b0)})

        # min(α,β) never decreases and stays put only along alternating letters
        old_min, new_min = np.minimum(alpha, beta), np.minimum(na, nb)
        kept = interior & (np.abs(new_min - old_min) <= tol)
        bad = interior & ((new_min < old_min - tol) | (kept & kept_prev & (prev_letter == name)))
        report.record(
            "min_growth", int(interior.sum()), (new_min - old_min)[interior], bad, {"word": word, "point": _first(bad, a0, b0)}
        )

        # (iii) perturbed growth ‖w_n(α,β)‖₁ >= ‖(α,β)‖₁ + (R/2)·n under adversarial shrinking
        if pa.size:
            rng = make_rng(seed, _word_id(word))
            bound = C * np.exp(-2 * (pa + pb))
            size = bound * np.where(rng.random(pa.size) < 0.5, 1.0, rng.uniform(0.5, 1.0, pa.size))
            split = rng.random(pa.size)
            qa, qb = apply_mon(name, pa, pb)
            pa, pb = qa - size * split, qb - size * (1 - split)
            slack = (pa + pb) - (pa0 + pb0) - (R / 2) * len(word)
            bad = slack < -tol
            report.record("perturbed", pa.size, slack, bad, {"word": word, "trial": int(np.argmax(bad)) if bad.any() else None})

        report.words += 1
        if len(word) < max_len:
            for nxt in "AB":
                visit(word + nxt, na, nb, on_boundary, kept, name, pa, pb)

    visit(first, a0, b0, np.ones_like(a0, dtype=bool), np.zeros_like(a0, dtype=bool), "", pa0, pb0)
    return report


def _first(mask: np.ndarray, a0: np.ndarray, b0: np.ndarray) -> Optional[Tuple[float, float]]:
    if not mask.any():
        return None
    i = int(np.argmax(mask))
    return (float(a0[i]), float(b0[i]))


def verify_growth_lemmas(
    max_len: int = 12,
    grid_spec: GridSpec = GridSpec(),
    C: float = 1.0,
    R: Optional[float] = None,
    perturbations: int = 1000,
    seed: int = 0,
    workers: int = 1,
    raise_on_violation: bool = False,
) -> GrowthReport:
    """
    Exhaustive check over all A/B words of length 1..max_len and all grid points of

      (i)   ‖U(α,β)‖₁ >= ‖(α,β)‖₁ + min(α,β) for U in {A, B};
      (ii)  orbits stay on the boundary of R²₊ exactly in the alternating cases, and for
            αβ > 0 the minimum coordinate never decreases and stalls only along alternating letters;
      (iii) with ‖P‖₁ <= C·exp(-2‖(α,β)‖₁) perturbations chosen to shrink the norm, starts with
            α, β >= R grow by at least R/2 per step.
    """
    if not 0 <= max_len <= 20:
        raise ValueError(f"max_len must lie in [0, 20], got {max_len}")
    R = solve_growth_radius(C) if R is None else R
    if R < 2 * C * math.exp(-2 * R) - 1e-12:
        raise ValueError(f"R = {R} violates R >= 2C·exp(-2R) for C = {C}")
    if max_len == 0:
        return GrowthReport(C=C, R=R)

    blocks = Parallel(n_jobs=workers)(
        delayed(_growth_block)(first, max_len, grid_spec, C, R, perturbations, seed) for first in "AB"
    )
    report = blocks[0].merge(blocks[1])
    report.C, report.R = C, R
    logger.info(f"Growth lemmas: {report.words} words, violations {report.violations}")
    if raise_on_violation and report.total_violations:
        raise GrowthLemmaViolation(f"{report.total_violations} violations", witness=report.witnesses[0])
    return report


# ---------------------------------------------------------------------------
# escape certificates
# ---------------------------------------------------------------------------


@dataclass
class EscapeCertificate:
    entry_step: int
    R_cal: float
    C_cal: float
    itinerary: List[str]
    steps: List[dict]
    letters_digest: str

    @property
    def min_growth_slack(self) -> float:
        return min(s["growth_slack"] for s in self.steps)

    def slope(self) -> float:
        """Average ℓ₁ log-growth per shadow step."""
        grown = [s for s in self.steps if s["kind"] == "shadow"]
        return sum(s["l1_after"] - s["l1_before"] for s in grown) / len(grown)

    def to_json_dict(self) -> Dict[str, Any]:
        return {
            "entry_step": self.entry_step,
            "R_cal": self.R_cal,
            "C_cal": self.C_cal,
            "itinerary": self.itinerary,
            "steps": self.steps,
            "letters_digest": self.letters_digest,
        }


def _chart_state(p: Tuple[float, float, float], policy: NumericPolicy) -> Optional[Tuple[ChartCoords, LogCoords]]:
    try:
        c = to_chart(SurfacePoint(*p), policy)
        return c, log_coords(c)
    except NotNearInfinity:
        return None


def _check_from(
    entry: int,
    points: List[Tuple[float, float, float]],
    letters: str,
    calibration: Calibration,
    policy: NumericPolicy,
) -> Tuple[Optional[List[dict]], List[dict], Optional[int]]:
    """Shadow check of the stack of non-cancelling steps from `entry`; returns (steps, trace, failing step)."""
    state = _chart_state(points[entry], policy)
    stack: List[Tuple[Letter, ChartCoords, LogCoords]] = []
    current = state
    steps: List[dict] = []
    trace: List[dict] = []
    for j in range(entry, len(points) - 1):
        letter = Letter(letters[j])
        chart, lc = current
        nxt = _chart_state(points[j + 1], policy)
        if stack and stack[-1][0] == letter:
            _, prev_chart, prev_lc = stack.pop()
            ok = nxt is not None and nxt[0].chart == prev_chart.chart and (
                abs(nxt[1].alpha - prev_lc.alpha) + abs(nxt[1].beta - prev_lc.beta) <= 1e-6 * (1 + prev_lc.l1)
            )
            trace.append({"step": j, "kind": "cancel", "ok": ok})
            if not ok:
                return None, trace, j
            steps.append({"step": j, "kind": "cancel", "letter": letter.value, "chart": prev_chart.chart.name, "growth_slack": math.inf})
            current = nxt
            continue
        try:
            name, dest = monomial_shadow(letter, chart.chart)
        except IndeterminacyError as e:
            trace.append({"step": j, "kind": "indeterminacy", "error": type(e).__name__, "chart": chart.chart.name, "letter": letter.value})
            return None, trace, j
        if nxt is None:
            trace.append({"step": j, "kind": "left_charts"})
            return None, trace, j
        predicted = apply_mon(name, lc.alpha, lc.beta)
        error = abs(nxt[1].alpha - predicted[0]) + abs(nxt[1].beta - predicted[1])
        bound = calibration.C_cal * shadow_weight(lc.alpha, lc.beta)
        growth = nxt[1].l1 - lc.l1
        entry_row = {
            "step": j,
            "kind": "shadow",
            "letter": letter.value,
            "chart": chart.chart.name,
            "dest": nxt[0].chart.name,
            "matrix": name,
            "l1_before": lc.l1,
            "l1_after": nxt[1].l1,
            "shadow_error": error,
            "shadow_slack": bound - error,
            "growth_slack": growth - calibration.R_cal / 2,
        }
        trace.append(entry_row)
        if nxt[0].chart != dest or error > bound or growth < calibration.R_cal / 2:
            return None, trace, j
        steps.append(entry_row)
        stack.append((letter, chart, lc))
        current = nxt
    if not any(s["kind"] == "shadow" for s in steps):
        return None, trace, entry
    return steps, trace, None


def certify_escape(traj: Any, params: SurfaceParams, calibration: Calibration, policy: NumericPolicy = default_policy) -> EscapeCertificate:
    """
    Replays an escaped trajectory from its stored letters and finds the first step from which every
    move is either an exact cancellation or tracks the monomial shadow within C_cal·exp(-2·min(α,β))
    while growing ‖(α,β)‖₁ by at least R_cal/2.
    """
    if not traj.escaped:
        raise ValueError("certify_escape needs an escaped trajectory")
    letters = traj.letters[: traj.escape_step]
    if hashlib.sha256(traj.letters.encode()).hexdigest() != traj.letters_digest:
        raise CertificateFailure("stored letters do not match their digest")

    coeffs = tuple(params.as_tuple())
    points = [tuple(traj.start.as_tuple())]
    x, y, z = points[0]
    for ch in letters:
        x, y, z = involution("xyz".index(ch), coeffs, x, y, z)
        points.append((x, y, z))

    last_trace: List[dict] = []
    last_fail: Optional[int] = None
    for entry in range(len(points) - 1):
        state = _chart_state(points[entry], policy)
        if state is None or min(state[1].alpha, state[1].beta) < calibration.R_cal:
            continue
        steps, trace, failed = _check_from(entry, points, letters, calibration, policy)
        if steps is not None:
            itinerary = [ChartId(_dominant_index(p)).name for p in points[entry:]]
            return EscapeCertificate(
                entry_step=entry,
                R_cal=calibration.R_cal,
                C_cal=calibration.C_cal,
                itinerary=itinerary,
                steps=steps,
                letters_digest=traj.letters_digest,
            )
        last_trace, last_fail = trace, failed
    raise CertificateFailure("no entry step yields a valid certificate", step=last_fail, trace=last_trace)
