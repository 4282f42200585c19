# run_experiment.py
import argparse
import logging
import math
import os
import sys
import time
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from boundary_tree import angle_distance, direction_series, initial_letter, subdivision_cycle
from config import MasterConfig
from errors import ConfigError, EmptyReduction, MarkovDynamicsError
from infinity_charts import GridSpec, calibrate, certify_escape, verify_growth_lemmas
from orbit_catalog import (
    Finite,
    boalch_klein,
    export_orbit_json,
    fiber_rotation_matrix,
    orbit_closure,
    orbit_stationary_distribution,
    origin_differentials,
    short_orbit_length2,
)
from plots import (
    plot_direction_series,
    plot_growth_slacks,
    plot_lyapunov_blocks,
    plot_moment_comparison,
    plot_visit_histogram,
)
from scalar_geometry import SurfaceParams, SurfacePoint, TraceParams, pi_map, solve_fiber_z
from symplectic_measure import MOMENT_NAMES, export_sample_jsonl, sample_symplectic, symplectic_moments
from utils import (
    apply_policy_file,
    code_version,
    load_config,
    model_to_dict,
    set_random_seed,
    setup_logging,
    write_csv,
    write_json,
    write_jsonl,
)
from vieta_group import LETTERS
from walk_engine import (
    StepDistribution,
    TrajectoryRecord,
    empirical_summary,
    estimate_lyapunov,
    merge_summaries,
    orbit_visit_frequencies,
    run_farm,
    sample_letters,
    walk_moments,
)

EXIT_OK = 0
EXIT_ASSERTION = 1
EXIT_CONFIG = 2
POLICY_ENV = "MARKOV_POLICY_FILE"

ExperimentResult = Tuple[Dict[str, Any], bool, Optional[dict], List[str]]


def _exact(v: float) -> Any:
    return int(v) if float(v).is_integer() else float(v)


def resolve_params(cfg: MasterConfig) -> Tuple[SurfaceParams, Dict[str, Any]]:
    """Traces win over params; the derived params are recorded."""
    exp = cfg.experiment
    if exp.traces is not None:
        traces = TraceParams(*(_exact(v) for v in exp.traces))
        params = pi_map(traces)
        if exp.params is not None:
            logging.warning("Both params and traces given; params derived from traces")
        return params, {"source": "traces", "traces": traces.to_json_dict(), "params": params.to_json_dict()}
    if exp.params is None:
        raise ConfigError("params or traces are required for this experiment", field="experiment.params")
    params = SurfaceParams(*(_exact(v) for v in exp.params))
    return params, {"source": "params", "params": params.to_json_dict()}


def resolve_start(cfg: MasterConfig, params: SurfaceParams) -> SurfacePoint:
    start = cfg.experiment.start
    if start is None:
        raise ConfigError("a start point is required for this experiment", field="experiment.start")
    coords = [_exact(v) for v in start]
    if len(coords) == 2:
        roots = solve_fiber_z(params, coords[0], coords[1])
        if not roots:
            raise ConfigError(f"no real point of the surface over {tuple(coords)}", field="experiment.start")
        coords.append(max(roots, key=abs))
    return SurfacePoint(*coords)


def _data_path(cfg: MasterConfig, name: str) -> str:
    return os.path.join(cfg.paths.data_dir, name)


def run_walk(cfg: MasterConfig) -> ExperimentResult:
    params, derived = resolve_params(cfg)
    q = resolve_start(cfg, params)
    mu = StepDistribution.from_weights(cfg.experiment.mu)
    exp = cfg.experiment
    records = run_farm(params, q, mu, exp.N, exp.seeds, exp.thin, exp.workers, cfg.walk.radii, cfg.policy)

    files = [_data_path(cfg, "trajectories.jsonl"), _data_path(cfg, "samples.jsonl")]
    write_jsonl(files[0], {"params": params, "start": q, "mu": mu.as_tuple(), "N": exp.N}, (r.to_json_dict() for r in records))
    write_jsonl(
        files[1],
        {"params": params, "thin": exp.thin},
        ({"seed": r.seed, **row} for r in records for row in r.sample_rows()),
    )

    distinct = {tuple(round(float(v), 9) for v in p) for r in records for p in r.samples}
    summary = merge_summaries(empirical_summary(r) for r in records)
    result = {
        "derived": derived,
        "start": q.to_json_dict(),
        "trajectories": len(records),
        "escaped": sum(r.escaped for r in records),
        "distinct_thinned_points": len(distinct),
        "empirical": summary.to_json_dict(),
    }

    escaped = [r for r in records if r.escaped]
    if escaped and cfg.walk.certify_escapes:
        calib = calibrate(params, cfg.infinity.calibration_samples, cfg.random_seed, cfg.infinity.calibration_span, cfg.policy)
        certs, failures = [], []
        for r in escaped:
            try:
                cert = certify_escape(r, params, calib, cfg.policy)
                certs.append({"seed": r.seed, "slope": cert.slope(), **cert.to_json_dict()})
            except MarkovDynamicsError as e:
                failures.append({"seed": r.seed, "error": str(e)})
        files.append(_data_path(cfg, "certificates.jsonl"))
        write_jsonl(files[-1], {"C_cal": calib.C_cal, "R_cal": calib.R_cal}, certs + failures)
        result["certificates"] = {"valid": len(certs), "failed": len(failures), "C_cal": calib.C_cal, "R_cal": calib.R_cal}

    if cfg.walk.compare_samples and summary.visited:
        result["symplectic_comparison"] = _compare_with_symplectic(cfg, params, records)
    if cfg.walk.orbit_cap:
        result["finite_orbit"] = _finite_orbit_visits(cfg, params, q, mu, records)
    return result, True, None, files


def _compare_with_symplectic(cfg: MasterConfig, params: SurfaceParams, records: List[TrajectoryRecord]) -> Dict[str, Any]:
    """z-scores of the walk moments against the sampler, over the combined sigma of both estimates."""
    sample = sample_symplectic(
        params, cfg.walk.compare_samples, cfg.random_seed, cfg.symplectic.streams, cfg.experiment.workers, cfg.policy
    )
    reference = symplectic_moments(sample, cfg.policy)
    estimate = walk_moments(records, cfg.walk.batches)
    walk = dict(zip(MOMENT_NAMES, estimate.values.tolist()))
    ref = dict(zip(MOMENT_NAMES, reference.values.tolist()))
    ref_se = dict(zip(MOMENT_NAMES, reference.se.tolist()))
    sigma = dict(zip(MOMENT_NAMES, np.hypot(estimate.se, reference.se).tolist()))
    z = {n: (walk[n] - ref[n]) / sigma[n] if sigma[n] > 0 else float("nan") for n in MOMENT_NAMES}
    if cfg.paths.save_plots:
        plot_moment_comparison(walk, ref, ref_se, cfg.paths.plot_dir)
    return {
        "samples": len(sample),
        "walk": estimate.as_dict(),
        "symplectic": reference.as_dict(),
        "z_scores": z,
        "within_4_sigma": bool(all(abs(v) <= 4 for v in z.values())),
    }


def _finite_orbit_visits(
    cfg: MasterConfig, params: SurfaceParams, q: SurfacePoint, mu: StepDistribution, records: List[TrajectoryRecord]
) -> Dict[str, Any]:
    orbit = orbit_closure(params, q, cfg.walk.orbit_cap, policy=cfg.policy)
    if not isinstance(orbit, Finite):
        logging.warning(f"Orbit of the start exceeds {cfg.walk.orbit_cap} points; no visit histogram")
        return {"finite": False}
    expected = orbit_stationary_distribution(orbit, mu.as_tuple())
    counts = sum(orbit_visit_frequencies(r, orbit, cfg.policy) * r.visited for r in records)
    freq = counts / counts.sum()
    if cfg.paths.save_plots:
        plot_visit_histogram(freq, expected, cfg.paths.plot_dir)
    return {
        "finite": True,
        "size": len(orbit),
        "frequencies": freq.tolist(),
        "stationary": expected.tolist(),
        "total_variation": float(0.5 * np.abs(freq - expected).sum()),
    }


def run_lyapunov(cfg: MasterConfig) -> ExperimentResult:
    params, derived = resolve_params(cfg)
    q = resolve_start(cfg, params)
    mu = StepDistribution.from_weights(cfg.experiment.mu)
    estimates = [
        estimate_lyapunov(params, q, mu, cfg.experiment.N, seed, cfg.lyapunov.cadence, cfg.lyapunov.blocks, cfg.policy)
        for seed in cfg.experiment.seeds
    ]
    rows = [
        {"seed": seed, "block": b, "lambda_plus": lp, "lambda_minus": lm}
        for seed, est in zip(cfg.experiment.seeds, estimates)
        for b, (lp, lm) in enumerate(zip(est.block_plus, est.block_minus))
    ]
    files = [_data_path(cfg, "lyapunov_blocks.csv")]
    write_csv(files[0], rows)
    if cfg.paths.save_plots:
        plot_lyapunov_blocks(estimates[0].block_plus, estimates[0].block_minus, cfg.paths.plot_dir)
    result = {
        "derived": derived,
        "start": q.to_json_dict(),
        "estimates": [{"seed": s, **e.to_json_dict()} for s, e in zip(cfg.experiment.seeds, estimates)],
        "max_abs_exponent_sum": max(abs(e.exponent_sum) for e in estimates),
    }
    return result, True, None, files


def run_symplectic(cfg: MasterConfig) -> ExperimentResult:
    params, derived = resolve_params(cfg)
    seed = cfg.experiment.seeds[0]
    sample = sample_symplectic(params, cfg.symplectic.n_samples, seed, cfg.symplectic.streams, cfg.experiment.workers, cfg.policy)
    moments = symplectic_moments(sample, cfg.policy)
    files = [_data_path(cfg, "symplectic_sample.jsonl")]
    export_sample_jsonl(sample, files[0])
    result = {
        "derived": derived,
        "n": len(sample),
        "total_area": sample.area,
        "total_area_se": sample.area_se,
        "acceptance_rate": sample.acceptance_rate,
        "envelope": sample.envelope,
        "moments": moments.as_dict(),
    }
    return result, True, None, files


def run_orbit(cfg: MasterConfig) -> ExperimentResult:
    params, derived = resolve_params(cfg)
    q = resolve_start(cfg, params)
    orbit = orbit_closure(params, q, cfg.experiment.cap, policy=cfg.policy)
    result: Dict[str, Any] = {"derived": derived, "start": q.to_json_dict()}
    files: List[str] = []
    if isinstance(orbit, Finite):
        files.append(_data_path(cfg, "orbit.json"))
        write_json(files[0], export_orbit_json(params, orbit))
        stationary = orbit_stationary_distribution(orbit, cfg.experiment.mu)
        result.update({"finite": True, "size": len(orbit), "exact": orbit.exact, "stationary": stationary.tolist()})
    else:
        result.update({"finite": False, "cap": orbit.cap, "frontier_size": orbit.frontier_size, "reason": orbit.reason})
    return result, True, None, files


def run_infinity_verify(cfg: MasterConfig) -> ExperimentResult:
    params, derived = resolve_params(cfg)
    inf = cfg.infinity
    calib = calibrate(params, inf.calibration_samples, cfg.random_seed, inf.calibration_span, cfg.policy)
    C = inf.perturbation_C if inf.perturbation_C is not None else calib.C_cal
    R = inf.perturbation_R if inf.perturbation_R is not None else (calib.R_cal if inf.perturbation_C is None else None)
    report = verify_growth_lemmas(
        max_len=inf.max_len,
        grid_spec=GridSpec(inf.grid_max, inf.grid_step),
        C=C,
        R=R,
        perturbations=inf.perturbations,
        seed=cfg.random_seed,
        workers=cfg.experiment.workers,
    )
    files = [_data_path(cfg, "growth_slacks.csv")]
    table = report.slack_table()
    write_csv(files[0], table)
    if cfg.paths.save_plots:
        plot_growth_slacks(table, cfg.paths.plot_dir)
    result = {
        "derived": derived,
        "calibration": {"C_cal": calib.C_cal, "R_cal": calib.R_cal, "sup_l1_weighted": calib.sup_l1_weighted},
        "growth": report.summary(),
        "verdict": f"{report.total_violations} violations",
    }
    ok = report.total_violations == 0
    return result, ok, (report.witnesses[0] if report.witnesses else None), files


def run_boundary(cfg: MasterConfig) -> ExperimentResult:
    bcfg = cfg.boundary
    mu = StepDistribution.from_weights(cfg.experiment.mu)
    n = bcfg.stream_length
    half = max(1, n // 2)
    frames, failures = [], []
    letters_first = {l.value: 0 for l in LETTERS}
    stabilized = 0
    for seed in range(bcfg.n_streams):
        stream = sample_letters(mu, seed, n)
        series = direction_series(stream, [half, n])
        series.insert(0, "stream", seed)
        frames.append(series)
        at_half, at_end = series.iloc[0], series.iloc[-1]
        drift = angle_distance(at_half["angle"], at_end["angle"])
        if at_end["defect"] > 1e-6 or drift > 10 * at_half["defect"] + 1e-9:
            failures.append({"stream": seed, "defect": at_end["defect"], "drift": drift})
        try:
            first = initial_letter(stream, n)
            letters_first[first.letter.value] += 1
            stabilized += int(first.stabilized)
        except EmptyReduction:
            pass

    table = pd.concat(frames, ignore_index=True)
    files = [_data_path(cfg, "direction_series.csv")]
    write_csv(files[0], table)
    if cfg.paths.save_plots:
        plot_direction_series(table, cfg.paths.plot_dir)
    cycle = subdivision_cycle(bcfg.depth)
    result = {
        "streams": bcfg.n_streams,
        "stream_length": n,
        "max_defect": float(table[table["n"] == n]["defect"].max()),
        "failures": failures,
        "initial_letters": letters_first,
        "stabilized_streams": stabilized,
        "subdivision": {"m": cycle.m, "vertices": len(cycle), "depth_histogram": cycle.histogram()},
    }
    return result, not failures, (failures[0] if failures else None), files


def run_catalog_check(cfg: MasterConfig) -> ExperimentResult:
    params, points, witness = boalch_klein()
    differentials = origin_differentials()
    length2_params, _ = short_orbit_length2(1, -1)
    cayley = orbit_closure(SurfaceParams(0, 0, 0, 4), SurfacePoint(1, 1, 1), cap=100)
    rotation = fiber_rotation_matrix(params, 0.0, cfg.policy)
    checks = {
        "boalch_klein_points": len(points) == 7,
        "origin_differentials_det_one": all(round(float(np.linalg.det(m.astype(float)))) == 1 for m in differentials),
        "length2_params": length2_params == SurfaceParams(0, 0, 0, 1),
        "cayley_four_point_orbit": isinstance(cayley, Finite) and len(cayley) == 4,
        "fiber_rotation_at_zero_is_half_turn": abs(rotation.angle - math.pi) < 1e-12,
    }
    failed = [k for k, v in checks.items() if not v]
    result = {
        "checks": checks,
        "witness_traces": witness.to_json_dict(),
        "origin_differentials": [m.tolist() for m in differentials],
    }
    return result, not failed, ({"failed": failed} if failed else None), []


EXPERIMENTS: Dict[str, Callable[[MasterConfig], ExperimentResult]] = {
    "walk": run_walk,
    "lyapunov": run_lyapunov,
    "symplectic": run_symplectic,
    "orbit": run_orbit,
    "infinity-verify": run_infinity_verify,
    "boundary": run_boundary,
    "catalog-check": run_catalog_check,
}


def _summary_lines(prefix: str, obj: Any) -> List[str]:
    if isinstance(obj, dict):
        lines = []
        for k, v in obj.items():
            lines.extend(_summary_lines(f"{prefix}.{k}" if prefix else str(k), v))
        return lines
    return [f"{prefix}: {obj}"]


def run(cfg: MasterConfig) -> int:
    kind = cfg.experiment.kind
    timestamp = time.strftime("date_%Y%m%d_time_%H%M%S")
    session_name = f"{cfg.project_name}_{kind}_{timestamp}"
    os.makedirs(cfg.paths.data_dir, exist_ok=True)
    setup_logging(session_name, cfg)
    set_random_seed(cfg.random_seed)
    logging.info(f"Experiment '{kind}' -> {cfg.paths.output_dir}")

    started = time.time()
    status, witness, files = EXIT_OK, None, []
    try:
        result, ok, witness, files = EXPERIMENTS[kind](cfg)
        if not ok:
            status = EXIT_ASSERTION
            logging.error(f"Experiment '{kind}' failed its checks; witness: {witness}")
    except ConfigError:
        raise
    except (MarkovDynamicsError, AssertionError) as e:
        logging.error(f"Experiment '{kind}' aborted: {type(e).__name__}: {e}")
        status = EXIT_ASSERTION
        result = {"error": type(e).__name__, "message": str(e)}
        witness = {k: v for k, v in vars(e).items() if not k.startswith("_")}

    manifest = {
        "experiment": kind,
        "config": model_to_dict(cfg),
        "derived": result.get("derived"),
        "code_version": code_version(),
        "workers": cfg.experiment.workers,
        "files": [os.path.relpath(f, cfg.paths.output_dir) for f in files],
        "exit_status": status,
        "timing": "timing.json",
    }
    write_json(os.path.join(cfg.paths.output_dir, "manifest.json"), manifest)
    # manifest.json holds nothing that changes between reruns
    write_json(os.path.join(cfg.paths.output_dir, "timing.json"), {"session": session_name, "wall_time_s": time.time() - started})
    summary = {"experiment": kind, "status": status, "result": result, "witness": witness}
    write_json(os.path.join(cfg.paths.output_dir, "summary.json"), summary)
    with open(os.path.join(cfg.paths.output_dir, "summary.txt"), "w") as f:
        f.write("\n".join(_summary_lines("", summary)) + "\n")
    logging.info(f"Experiment '{kind}' finished with status {status}")
    return status


def build_config(args: argparse.Namespace, environ: Optional[Dict[str, str]] = None) -> MasterConfig:
    """defaults < config file < policy file from the environment < command-line flags"""
    environ = os.environ if environ is None else environ
    cfg = load_config(args.config) if args.config else MasterConfig()
    policy_file = environ.get(POLICY_ENV)
    if policy_file:
        cfg = apply_policy_file(cfg, policy_file)
    cfg.experiment.kind = args.experiment
    if args.seed is not None:
        cfg.random_seed = args.seed
        cfg.experiment.seeds = [args.seed]
    if args.out:
        cfg.paths.base_output_dir = args.out
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError("must be at least 1", field="experiment.workers")
        cfg.experiment.workers = args.workers
    if not cfg.paths.config_name:
        cfg.paths.config_name = args.experiment
    return cfg


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Random dynamics on Markov-type cubic surfaces")
    parser.add_argument("experiment", choices=sorted(EXPERIMENTS), help="Experiment to run")
    parser.add_argument("--config", type=str, default=None, help="Path to a *.cfg or *.py experiment config")
    parser.add_argument("--seed", type=int, default=None, help="Override the seed list with a single seed")
    parser.add_argument("--out", type=str, default=None, help="Base output directory")
    parser.add_argument("--workers", type=int, default=None, help="Parallel workers")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = build_config(args)
        return run(cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())


# python run_experiment.py walk --config configs/boalch_klein_walk.cfg
# python run_experiment.py infinity-verify --config configs/infinity_verify.cfg --workers 2
# MARKOV_POLICY_FILE=configs/policy_strict.cfg python run_experiment.py symplectic --config configs/cayley_area.cfg
