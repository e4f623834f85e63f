"""Experiment orchestration: seeded multi-run experiments, hyperparameter
sweeps, the binary-addition protocol, and result emission.

Configs are plain dataclasses that round-trip losslessly through JSON;
runs fan out over a process pool (seed by seed, grid point by grid
point) sized by the LSTMKF_WORKERS environment variable. Wall-clock
numbers are only comparable across optimizers when taken with a single
worker, which is how the runtime comparisons are meant to be run.
"""

from __future__ import annotations

import itertools
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .metrics import ConfidenceBand, confidence_band, knse, nse, target_variance
from .model import ModelDims, init_params
from .streams import (
    RegressionStream,
    binary_addition_stream,
    load_delimited,
    teacher_lstm_stream,
)
from .trainers import (
    DekfTrainer,
    EkfTrainer,
    FirstOrderTrainer,
    GatedDekfMixture,
    GatedDekfTrainer,
    NoiseSchedule,
    train_online,
)

__all__ = [
    "WORKERS_ENV",
    "TaskSpec",
    "OptimizerSpec",
    "ExperimentConfig",
    "ExperimentReport",
    "BinaryAdditionOutcome",
    "SweepConfig",
    "build_stream",
    "build_trainer",
    "run_experiment",
    "run_binary_addition",
    "grid_sweep",
    "emit_outputs",
]

WORKERS_ENV = "LSTMKF_WORKERS"

OPTIMIZER_KINDS = ("sgd", "rmsprop", "adam", "ekf", "dekf", "alg1", "alg2")

# Documented starting points, matching the benchmark configurations the
# package ships with. Sweeps exist to revisit them per task.
DEFAULT_LR = {"sgd": 0.2, "rmsprop": 0.009, "adam": 0.004}


def resolve_workers(workers: int | None = None) -> int:
    if workers is not None:
        return max(1, workers)
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass
class TaskSpec:
    """What data to stream. kind is one of 'file', 'teacher', 'binadd'."""

    kind: str
    length: int = 2500
    # file tasks
    path: str | None = None
    delimiter: str | None = None
    target_columns: tuple[int, ...] = (-1,)
    has_header: bool = False
    # teacher tasks
    teacher_n_s: int = 4
    teacher_seed: int = 7
    input_seed: int = 11
    noise_std: float = 0.05
    teacher_std: float = 0.5  # teacher weight scale; larger = more recurrent
    n_x: int = 9  # input width incl. bias (teacher and binadd derive n_d=1)
    # binadd tasks
    n_terms: int = 3
    stream_seed: int = 1

    def __post_init__(self):
        if self.kind not in ("file", "teacher", "binadd"):
            raise ValueError(f"unknown task kind {self.kind!r}")
        self.target_columns = tuple(self.target_columns)

    def build(self) -> RegressionStream:
        if self.kind == "file":
            if not self.path:
                raise ValueError("file task needs a path")
            stream = load_delimited(
                self.path, self.delimiter, self.target_columns, self.has_header
            )
            return stream.take(min(self.length, len(stream)))
        if self.kind == "teacher":
            dims = ModelDims(self.n_x, self.teacher_n_s, 1)
            return teacher_lstm_stream(
                dims,
                self.teacher_seed,
                self.noise_std,
                self.input_seed,
                self.length,
                self.teacher_std,
            )
        return binary_addition_stream(self.n_terms, self.stream_seed, self.length)


@dataclass
class OptimizerSpec:
    """Optimizer kind plus hyperparameters; None fields fall back to the
    documented defaults for that kind when the trainer is built."""

    kind: str
    lr: float | None = None
    p0: float | None = None
    r_start: float | None = None
    r_end: float | None = None
    q_start: float | None = None
    q_end: float | None = None
    zeta_bar: float | None = None  # fixed-threshold gated trainer only
    zeta_min: float = 0.01
    r_floor: float | None = None  # adaptive-noise clamp, gated trainers only
    horizon: int | None = None  # annealing horizon; defaults to the run length

    def __post_init__(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise ValueError(
                f"optimizer kind must be one of {OPTIMIZER_KINDS}, got {self.kind!r}"
            )


def build_trainer(
    spec: OptimizerSpec,
    dims: ModelDims,
    seed: int,
    tbptt: int = 10,
    run_length: int = 2500,
    init_std: float = 0.1,
):
    """Fresh trainer with seeded Gaussian initial weights."""
    params = init_params(dims, init_std, seed)
    horizon = spec.horizon if spec.horizon is not None else run_length
    kind = spec.kind

    if kind in ("sgd", "rmsprop", "adam"):
        lr = spec.lr if spec.lr is not None else DEFAULT_LR[kind]
        return FirstOrderTrainer(params, kind, lr, tbptt)

    if kind in ("ekf", "dekf"):
        p0 = spec.p0 if spec.p0 is not None else 100.0
        r_sched = NoiseSchedule(
            spec.r_start if spec.r_start is not None else 10.0,
            spec.r_end if spec.r_end is not None else 3.0,
            horizon,
        )
        q_sched = NoiseSchedule(
            spec.q_start if spec.q_start is not None else 1e-4,
            spec.q_end if spec.q_end is not None else 1e-6,
            horizon,
        )
        cls = EkfTrainer if kind == "ekf" else DekfTrainer
        return cls(params, r_sched, q_sched, p0, tbptt)

    # gated variants share their covariance/noise defaults
    p0 = spec.p0 if spec.p0 is not None else 10.0
    q_sched = NoiseSchedule(
        spec.q_start if spec.q_start is not None else 1e-7,
        spec.q_end if spec.q_end is not None else 1e-8,
        horizon,
    )
    r_floor = spec.r_floor if spec.r_floor is not None else 1.0
    if kind == "alg1":
        zeta = (
            spec.zeta_bar
            if spec.zeta_bar is not None
            else 0.25 * float(np.sqrt(dims.n_d))
        )
        return GatedDekfTrainer(params, zeta, q_sched, p0, tbptt, r_floor)
    return GatedDekfMixture(params, spec.zeta_min, q_sched, p0, tbptt, r_floor)


@dataclass
class ExperimentConfig:
    task: TaskSpec
    optimizer: OptimizerSpec
    n_s: int
    steps: int = 2500
    tbptt: int = 10
    seeds: list[int] = field(default_factory=lambda: list(range(1, 21)))
    k: int | None = 50  # forecast horizon; None disables k-step scoring
    init_std: float = 0.1

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be positive")
        if self.k is not None and self.k < 1:
            raise ValueError("k must be >= 1 (or None to disable)")
        if not self.seeds:
            raise ValueError("need at least one seed")
        self.seeds = [int(s) for s in self.seeds]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        raw = json.loads(text)
        raw["task"] = TaskSpec(**raw["task"])
        raw["optimizer"] = OptimizerSpec(**raw["optimizer"])
        return cls(**raw)


@dataclass
class SeedOutcome:
    seed: int
    losses: np.ndarray
    forecast_sq_errors: np.ndarray | None
    elapsed: float
    updates: int
    diverged: bool


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    target_variance: float
    loss_curves: np.ndarray  # (seeds, T) squared errors
    nse_per_seed: np.ndarray
    nse_median: float
    band: ConfidenceBand  # over NSE-normalized curves
    knse_per_seed: np.ndarray | None
    knse_median: float | None
    wall_clock: np.ndarray
    updates_per_seed: np.ndarray
    diverged: list[bool]

    def summary_dict(self) -> dict:
        d = {
            "config": asdict(self.config),
            "target_variance": self.target_variance,
            "seeds": list(self.config.seeds),
            "nse_per_seed": self.nse_per_seed.tolist(),
            "nse_median": self.nse_median,
            "nse_band": [self.band.lo, self.band.hi],
            "wall_clock_seconds": self.wall_clock.tolist(),
            "wall_clock_median": float(np.median(self.wall_clock)),
            "updates_per_seed": self.updates_per_seed.tolist(),
            "diverged": self.diverged,
        }
        if self.knse_per_seed is not None:
            d["knse_per_seed"] = self.knse_per_seed.tolist()
            d["knse_median"] = self.knse_median
        return d


def _run_seed(config: ExperimentConfig, seed: int) -> SeedOutcome:
    stream = config.task.build().take(config.steps)
    dims = ModelDims(stream.n_x, config.n_s, stream.n_d)
    trainer = build_trainer(
        config.optimizer, dims, seed, config.tbptt, config.steps, config.init_std
    )
    result = train_online(
        trainer, stream, steps=config.steps, forecast_horizon=config.k
    )
    losses = result.losses
    if len(losses) < config.steps:  # diverged early; pad so curves stay rectangular
        pad = np.full(config.steps - len(losses), np.inf)
        losses = np.concatenate([losses, pad])
    return SeedOutcome(
        seed=seed,
        losses=losses,
        forecast_sq_errors=result.forecast_sq_errors,
        elapsed=result.elapsed,
        updates=result.updates,
        diverged=result.diverged,
    )


def _run_seed_star(args) -> SeedOutcome:
    return _run_seed(*args)


def _pool_map(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(fn, jobs))


def run_experiment(
    config: ExperimentConfig, workers: int | None = None
) -> ExperimentReport:
    """One optimizer, one task, many seeds; metrics aggregated across seeds.

    Each seed gets a fresh trainer and a fresh stream. Deterministic
    apart from the wall-clock column.
    """
    stream = config.task.build().take(config.steps)
    var = target_variance(stream.d)
    jobs = [(config, s) for s in config.seeds]
    outcomes = _pool_map(_run_seed_star, jobs, resolve_workers(workers))

    curves = np.stack([o.losses for o in outcomes])
    nse_per_seed = np.array(
        [
            nse(o.losses, stream.d) if not o.diverged else np.inf
            for o in outcomes
        ]
    )
    norm = curves / var
    band = (
        confidence_band(norm)
        if len(outcomes) >= 2
        else ConfidenceBand(norm[0], norm[0], float(norm[0].mean()), float(norm[0].mean()))
    )
    knse_per_seed = None
    knse_median = None
    if config.k is not None:
        knse_per_seed = np.array(
            [
                knse(o.forecast_sq_errors, stream.d, config.k)
                if not o.diverged
                else np.inf
                for o in outcomes
            ]
        )
        knse_median = float(np.median(knse_per_seed))
    return ExperimentReport(
        config=config,
        target_variance=var,
        loss_curves=curves,
        nse_per_seed=nse_per_seed,
        nse_median=float(np.median(nse_per_seed)),
        band=band,
        knse_per_seed=knse_per_seed,
        knse_median=knse_median,
        wall_clock=np.array([o.elapsed for o in outcomes]),
        updates_per_seed=np.array([o.updates for o in outcomes]),
        diverged=[o.diverged for o in outcomes],
    )


@dataclass
class BinaryAdditionOutcome:
    stream_seed: int
    sustained_at: int | None  # 1-based first symbol of the 500-run, or None
    symbols_run: int
    elapsed: float
    updates: int

    @property
    def failed(self) -> bool:
        return self.sustained_at is None


def _run_binadd_stream(args) -> BinaryAdditionOutcome:
    (optimizer, n_terms, n_s, seed, tbptt, window, limit, init_std) = args
    stream = binary_addition_stream(n_terms, seed, limit + window)
    dims = ModelDims(n_terms + 1, n_s, 1)
    trainer = build_trainer(optimizer, dims, seed, tbptt, limit, init_std)
    streak = 0
    sustained = None
    started = time.perf_counter()
    t = 0
    for t in range(len(stream)):
        d_hat = trainer.predict(stream.x[t])
        trainer.observe(stream.d[t])
        correct = (d_hat[0] > 0.0) == (stream.d[t, 0] > 0.0)
        if correct:
            streak += 1
            if streak >= window:
                start = t - window + 2
                if start <= limit:
                    sustained = start
                break
        else:
            streak = 0
            if t + 1 > limit:
                break
    elapsed = time.perf_counter() - started
    return BinaryAdditionOutcome(
        stream_seed=seed,
        sustained_at=sustained,
        symbols_run=t + 1,
        elapsed=elapsed,
        updates=trainer.n_updates,
    )


def run_binary_addition(
    optimizer: OptimizerSpec,
    n_terms: int,
    n_s: int = 12,
    stream_seeds=(1, 2, 3, 4, 5),
    tbptt: int = 10,
    window: int = 500,
    limit: int = 100_000,
    init_std: float = 0.1,
    workers: int | None = None,
) -> list[BinaryAdditionOutcome]:
    """Sustainable-prediction protocol over several independent streams.

    Each stream runs until a window of 500 consecutive correct sign
    decisions appears (early exit) or no such run can start within the
    first `limit` symbols. The trainer seed equals the stream seed.
    """
    if optimizer.kind in ("ekf", "dekf") and optimizer.r_start is None:
        # this task's documented default: fixed r = 3, q annealed 1e-3 -> 1e-6
        optimizer = OptimizerSpec(
            **{
                **asdict(optimizer),
                "r_start": 3.0,
                "r_end": 3.0,
                "q_start": optimizer.q_start if optimizer.q_start is not None else 1e-3,
                "q_end": optimizer.q_end if optimizer.q_end is not None else 1e-6,
            }
        )
    if optimizer.kind == "alg2":
        # Mixture defaults for this task: tiny constant q, and the noise
        # floor raised to the same r = 3 the EKF runs with here, so each
        # node falls back to that level once its adaptive term drops
        # below it. With the default floor of 1 the per-node gains stay
        # too hot on sign-coded targets and the runs stall short of a
        # full error-free window.
        optimizer = OptimizerSpec(
            **{
                **asdict(optimizer),
                "q_start": optimizer.q_start if optimizer.q_start is not None else 1e-7,
                "q_end": optimizer.q_end if optimizer.q_end is not None else 1e-7,
                "r_floor": optimizer.r_floor if optimizer.r_floor is not None else 3.0,
            }
        )
    if optimizer.kind == "rmsprop" and optimizer.lr is None:
        optimizer = OptimizerSpec(**{**asdict(optimizer), "lr": 0.02})
    jobs = [
        (optimizer, n_terms, n_s, int(s), tbptt, window, limit, init_std)
        for s in stream_seeds
    ]
    return _pool_map(_run_binadd_stream, jobs, resolve_workers(workers))


@dataclass
class SweepConfig:
    """Grid search declaration: one task, several optimizer grids."""

    task: TaskSpec
    n_s: int
    grids: dict  # {optimizer kind: {param name: [values, ...]}}
    tbptt: int = 10
    prefix: int = 1000
    repeats: int = 10
    base_seed: int = 1

    def __post_init__(self):
        if not self.grids:
            raise ValueError("sweep needs at least one optimizer grid")
        for kind in self.grids:
            if kind not in OPTIMIZER_KINDS:
                raise ValueError(f"unknown optimizer kind in grids: {kind!r}")

    @classmethod
    def from_json(cls, text: str) -> "SweepConfig":
        raw = json.loads(text)
        raw["task"] = TaskSpec(**raw["task"])
        return cls(**raw)


def _sweep_point_mse(args) -> float:
    config, seed = args
    outcome = _run_seed(config, seed)
    if outcome.diverged:
        return float("inf")
    return float(np.mean(outcome.losses))


def grid_sweep(sweep: SweepConfig, workers: int | None = None) -> dict:
    """Mean-MSE grid search on a stream prefix.

    Every grid point runs `repeats` seeds over the first `prefix` pairs;
    the winner per optimizer minimizes the mean of the per-run MSEs,
    ties broken by declaration order. Returns, per optimizer kind, the
    winning parameters and the full table of (point, mean mse).
    """
    seeds = [sweep.base_seed + i for i in range(sweep.repeats)]
    results: dict = {}
    for kind, grid in sweep.grids.items():
        names = list(grid.keys())
        points = [
            dict(zip(names, combo))
            for combo in itertools.product(*(grid[n] for n in names))
        ]
        jobs = []
        for point in points:
            spec = OptimizerSpec(kind=kind, **point)
            config = ExperimentConfig(
                task=sweep.task,
                optimizer=spec,
                n_s=sweep.n_s,
                steps=sweep.prefix,
                tbptt=sweep.tbptt,
                seeds=seeds,
                k=None,
            )
            jobs.extend((config, s) for s in seeds)
        flat = _pool_map(_sweep_point_mse, jobs, resolve_workers(workers))
        table = []
        for idx, point in enumerate(points):
            chunk = flat[idx * sweep.repeats : (idx + 1) * sweep.repeats]
            table.append({"params": point, "mean_mse": float(np.mean(chunk))})
        best_idx = min(range(len(table)), key=lambda i: table[i]["mean_mse"])
        results[kind] = {"best": points[best_idx], "table": table}
    return results


def emit_outputs(report: ExperimentReport, out_dir) -> list[str]:
    """Write the learning-curve table and the summary document.

    curves_<kind>.csv: timestep, median_nse, p5, p95 (one row per step,
    values normalized by the target variance). summary_<kind>.json: the
    full resolved config, seed list, NSE/kNSE summaries, wall-clock and
    divergence flags. Identical reports re-emit byte-identical files.
    """
    os.makedirs(out_dir, exist_ok=True)
    kind = report.config.optimizer.kind
    norm = report.loss_curves / report.target_variance
    median_curve = np.median(norm, axis=0)
    curve_path = os.path.join(out_dir, f"curves_{kind}.csv")
    with open(curve_path, "w", encoding="utf-8") as fh:
        fh.write("timestep,median_nse,p5,p95\n")
        for t in range(len(median_curve)):
            row = (
                float(median_curve[t]),
                float(report.band.p5[t]),
                float(report.band.p95[t]),
            )
            fh.write(f"{t + 1},{row[0]!r},{row[1]!r},{row[2]!r}\n")
    summary_path = os.path.join(out_dir, f"summary_{kind}.json")
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(report.summary_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return [curve_path, summary_path]
