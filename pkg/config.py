# config.py
import os
from typing import List, Literal, Optional

from pydantic import BaseModel, validator

ExperimentKind = Literal["walk", "lyapunov", "symplectic", "orbit", "infinity-verify", "boundary", "catalog-check"]


class NumericPolicy(BaseModel):
    # surfaces and points
    on_surface_tol: float = 1e-9
    box_tol: float = 1e-9
    singular_trace_tol: float = 1e-12
    discriminant_tol: float = 1e-10
    # singular_points multi-start Newton
    newton_grid_radius: float = 6.0
    newton_grid_starts: int = 11
    newton_tol: float = 1e-12
    newton_max_iter: int = 60
    dedup_dist: float = 1e-6
    root_verify_tol: float = 1e-8
    # tangent frames and differentials
    gradient_floor: float = 1e-8
    frame_orth_tol: float = 1e-10
    frame_independence_tol: float = 1e-8
    lstsq_residual_tol: float = 1e-8
    area_agreement_tol: float = 1e-8
    # walks
    escape_radius: float = 1e8
    # charts at infinity
    chart_threshold: float = 10.0
    chart_region: float = 0.3
    height_max_iter: int = 30
    height_tol: float = 1e-14
    # orbits
    orbit_match_tol: float = 1e-8
    parabolic_margin: float = 1e-9
    # symplectic sampler
    envelope_grid: int = 200
    envelope_safety: float = 0.8
    jackknife_blocks: int = 50
    area_floor: float = 1e-6

    @validator(
        "on_surface_tol",
        "box_tol",
        "singular_trace_tol",
        "discriminant_tol",
        "newton_tol",
        "dedup_dist",
        "root_verify_tol",
        "gradient_floor",
        "frame_orth_tol",
        "frame_independence_tol",
        "lstsq_residual_tol",
        "area_agreement_tol",
        "height_tol",
        "orbit_match_tol",
        "parabolic_margin",
        "area_floor",
    )
    def check_positive_tol(cls, v):
        assert v > 0, "tolerances must be positive"
        return v

    @validator("envelope_safety")
    def check_safety(cls, v):
        assert 0 < v <= 1, "envelope safety factor must lie in (0, 1]"
        return v

    @validator("chart_region")
    def check_region(cls, v):
        assert 0 < v < 1, "chart region must lie in (0, 1)"
        return v


class PathConfig(BaseModel):
    config_name: Optional[str] = None
    base_output_dir: str = "output"
    save_plots: bool = False

    @property
    def output_dir(self) -> str:
        return os.path.join(self.base_output_dir, self.config_name or "default")

    @property
    def log_dir(self) -> str:
        return os.path.join(self.output_dir, "logs")

    @property
    def data_dir(self) -> str:
        return os.path.join(self.output_dir, "data")

    @property
    def plot_dir(self) -> str:
        return os.path.join(self.output_dir, "plots")


class ExperimentConfig(BaseModel):
    kind: ExperimentKind = "walk"
    params: Optional[List[float]] = None
    traces: Optional[List[float]] = None
    start: Optional[List[float]] = None
    mu: List[float] = [1.0, 1.0, 1.0]
    N: int = 1000
    seeds: List[int] = [0]
    thin: int = 1
    workers: int = 1
    cap: int = 10_000

    @validator("params", "traces")
    def check_four(cls, v):
        if v is not None:
            assert len(v) == 4, "expected four values"
        return v

    @validator("start")
    def check_start(cls, v):
        # two coordinates: z is taken as the larger fiber root
        if v is not None:
            assert len(v) in (2, 3), "expected two or three coordinates"
        return v

    @validator("mu")
    def check_mu(cls, v):
        assert len(v) == 3, "mu needs one weight per letter x, y, z"
        assert all(w > 0 for w in v), "mu weights must be positive"
        return v

    @validator("seeds")
    def check_seeds(cls, v):
        assert len(v) > 0, "seeds must be nonempty"
        return v

    @validator("N", "thin", "workers", "cap")
    def check_counts(cls, v):
        assert v >= 1, "must be at least 1"
        return v


class WalkConfig(BaseModel):
    radii: List[float] = [4.0, 16.0, 256.0]
    certify_escapes: bool = True
    # moments of the walk against an independent symplectic sample of this size; 0 disables
    compare_samples: int = 0
    # consecutive stretches per trajectory for the batch-means standard error of the walk moments
    batches: int = 20
    # closure cap for the visit histogram on a finite orbit through the start; 0 disables
    orbit_cap: int = 0

    @validator("compare_samples", "orbit_cap")
    def check_non_negative(cls, v):
        assert v >= 0, "must be non-negative"
        return v

    @validator("batches")
    def check_batches(cls, v):
        assert v >= 2, "need at least two batches"
        return v


class LyapunovConfig(BaseModel):
    cadence: int = 8
    blocks: int = 20


class SymplecticConfig(BaseModel):
    n_samples: int = 100_000
    streams: int = 1


class InfinityConfig(BaseModel):
    max_len: int = 12
    grid_max: float = 5.0
    grid_step: float = 0.25
    perturbations: int = 1000
    perturbation_C: Optional[float] = None
    perturbation_R: Optional[float] = None
    calibration_samples: int = 1000
    calibration_span: float = 5.0

    @validator("max_len")
    def check_max_len(cls, v):
        assert 0 <= v <= 20, "max_len must lie in [0, 20]"
        return v


class BoundaryConfig(BaseModel):
    n_streams: int = 100
    stream_length: int = 1000
    depth: int = 5

    @validator("depth")
    def check_depth(cls, v):
        assert 0 <= v <= 20, "subdivision depth must lie in [0, 20]"
        return v


class LoggingConfig(BaseModel):
    to_console: bool = False
    level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"


class MasterConfig(BaseModel):
    project_name: str = "markov_surface_dynamics"
    random_seed: int = 0

    policy: NumericPolicy = NumericPolicy()
    paths: PathConfig = PathConfig()
    experiment: ExperimentConfig = ExperimentConfig()
    walk: WalkConfig = WalkConfig()
    lyapunov: LyapunovConfig = LyapunovConfig()
    symplectic: SymplecticConfig = SymplecticConfig()
    infinity: InfinityConfig = InfinityConfig()
    boundary: BoundaryConfig = BoundaryConfig()
    logging: LoggingConfig = LoggingConfig()


default_policy = NumericPolicy()
cfg = MasterConfig()


assert cfg.lyapunov.cadence >= 1
