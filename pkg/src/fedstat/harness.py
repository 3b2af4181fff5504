"""Experiment harness: configuration, replicated runs, coverage reports.

A configuration fixes the data-generating federation, the communication
schedule, the run length (either a round count or a target observation count),
and the inference methods.  ``run_experiment`` executes R independent
replications with pre-assigned seeds, computes per-method coverage of the true
coordinate and confidence-interval lengths, and aggregates them into a report
whose CSV form is byte-reproducible for a fixed (config, seed) regardless of
worker count.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from functools import partial
from pathlib import Path

import numpy as np

from . import critvals, engine, models, rscale, schedules
from .plugin import PluginObserver, SingularHessian
from .rscale import RScaleObserver

__all__ = [
    "ExperimentConfig",
    "MethodSummary",
    "ExperimentReport",
    "parse_config_text",
    "load_config",
    "build_federation",
    "rounds_for_target",
    "run_experiment",
    "convergence_curve",
    "partial_sum_process",
    "report_csv",
    "replication_rows_csv",
]

_MODELS = ("linear", "logistic", "quadratic")
_METHODS = ("plugin", "rscale")


@dataclass(frozen=True)
class ExperimentConfig:
    model: str = "linear"
    dimension: int = 5
    clients: int = 10
    noise_scale: float = 1.0
    heterogeneity: bool = True
    schedule: schedules.CommunicationSchedule = schedules.CommunicationSchedule(
        kind="constant", base=1, warmup_fraction=0.05
    )
    rounds: int | None = None
    target_observations: int | None = 10000
    replications: int = 1000
    seed: int = 0
    methods: tuple[str, ...] = ("plugin", "rscale")
    alpha_level: float = 0.05
    coordinate: int = 0
    x0: tuple[float, ...] | str = "zeros"
    plugin_skip_warmup: bool = False
    critical_values: str | None = None

    def __post_init__(self) -> None:
        if self.model not in _MODELS:
            raise ValueError(f"unknown model {self.model!r}")
        if self.dimension < 1 or self.clients < 1:
            raise ValueError("dimension and clients must be >= 1")
        if self.model == "logistic" and self.heterogeneity:
            raise ValueError("logistic runs do not support heterogeneity; set it off")
        if (self.rounds is None) == (self.target_observations is None):
            raise ValueError("set exactly one of rounds / target_observations")
        if self.rounds is not None and self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.target_observations is not None and self.target_observations < 1:
            raise ValueError("target_observations must be >= 1")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not self.methods or any(m not in _METHODS for m in self.methods):
            raise ValueError(f"methods must be a nonempty subset of {_METHODS}")
        if not 0.0 < self.alpha_level < 1.0:
            raise ValueError("alpha_level must lie in (0, 1)")
        if not 0 <= self.coordinate < self.dimension:
            raise ValueError("coordinate out of range (0-based)")
        if isinstance(self.x0, str) and self.x0 not in ("zeros", "optimum"):
            raise ValueError("x0 must be 'zeros', 'optimum' or a vector")


@dataclass(frozen=True)
class MethodSummary:
    method: str
    coverage: float       # successes among non-failed replications
    coverage_raw: float   # successes among all replications
    coverage_se: float
    mean_length: float
    length_sd: float
    failures: int


@dataclass(frozen=True)
class ExperimentReport:
    schedule_label: str
    rounds: int
    t_T: int
    acf: float
    nu_hat: float
    beta: float | None
    methods: tuple[MethodSummary, ...]
    mean_error: float    # average of ||y_bar - x*|| over replications
    wall_clock: float


# --- configuration ----------------------------------------------------------

_BOOL = {"on": True, "true": True, "1": True, "off": False, "false": False, "0": False}


def _parse_bool(value: str, key: str) -> bool:
    try:
        return _BOOL[value.lower()]
    except KeyError:
        raise ValueError(f"{key} must be on/off") from None


def parse_config_text(text: str) -> ExperimentConfig:
    """Parse the flat ``key = value`` configuration format (# for comments)."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key in raw:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value

    known = {
        "model", "dimension", "clients", "noise_scale", "heterogeneity",
        "schedule", "schedule_base", "schedule_exponent", "gamma0", "alpha",
        "warmup_fraction", "rounds", "target_observations", "replications",
        "seed", "methods", "alpha_level", "coordinate", "x0",
        "plugin_skip_warmup", "critical_values",
    }
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")

    kwargs: dict = {}
    if "model" in raw:
        kwargs["model"] = raw["model"]
    for key in ("dimension", "clients", "replications", "seed", "coordinate"):
        if key in raw:
            kwargs[key] = int(raw[key])
    for key in ("noise_scale", "alpha_level"):
        if key in raw:
            kwargs[key] = float(raw[key])
    if "heterogeneity" in raw:
        kwargs["heterogeneity"] = _parse_bool(raw["heterogeneity"], "heterogeneity")
    if "plugin_skip_warmup" in raw:
        kwargs["plugin_skip_warmup"] = _parse_bool(raw["plugin_skip_warmup"], "plugin_skip_warmup")
    if "rounds" in raw:
        kwargs["rounds"] = int(raw["rounds"])
        kwargs["target_observations"] = None
    if "target_observations" in raw:
        kwargs["target_observations"] = int(raw["target_observations"])
    if "methods" in raw:
        kwargs["methods"] = tuple(m.strip() for m in raw["methods"].split(",") if m.strip())
    if "critical_values" in raw:
        kwargs["critical_values"] = raw["critical_values"]
    if "x0" in raw:
        value = raw["x0"]
        kwargs["x0"] = value if value in ("zeros", "optimum") else tuple(
            float(v) for v in value.split(",")
        )

    sched_kwargs: dict = {}
    if "schedule" in raw:
        sched_kwargs["kind"] = raw["schedule"]
    if "schedule_base" in raw:
        sched_kwargs["base"] = int(raw["schedule_base"])
    if "schedule_exponent" in raw:
        sched_kwargs["exponent"] = float(raw["schedule_exponent"])
    if "gamma0" in raw:
        sched_kwargs["gamma0"] = float(raw["gamma0"])
    if "alpha" in raw:
        sched_kwargs["alpha"] = float(raw["alpha"])
    if "warmup_fraction" in raw:
        sched_kwargs["warmup_fraction"] = float(raw["warmup_fraction"])
    if sched_kwargs:
        defaults = ExperimentConfig.__dataclass_fields__["schedule"].default
        merged = {
            "kind": defaults.kind,
            "base": defaults.base,
            "exponent": defaults.exponent,
            "gamma0": defaults.gamma0,
            "alpha": defaults.alpha,
            "warmup_fraction": defaults.warmup_fraction,
        }
        merged.update(sched_kwargs)
        kwargs["schedule"] = schedules.CommunicationSchedule(**merged)

    return ExperimentConfig(**kwargs)


def load_config(path: str | Path) -> ExperimentConfig:
    return parse_config_text(Path(path).read_text())


# --- federation construction ------------------------------------------------


def build_federation(config: ExperimentConfig) -> models.Federation:
    """Draw the data-generating process once per experiment from the seed."""
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(0,)))
    k, d = config.clients, config.dimension
    if config.model == "linear":
        if config.heterogeneity:
            optima = rng.standard_normal((k, d))
        else:
            optima = np.tile(rng.standard_normal(d), (k, 1))
        clients = [
            models.ClientModel("linear", optima[i], noise_scale=config.noise_scale)
            for i in range(k)
        ]
    elif config.model == "logistic":
        shared = np.linspace(0.0, 1.0, d) if d > 1 else np.ones(1)
        clients = [models.ClientModel("logistic", shared) for _ in range(k)]
    else:
        centers = rng.standard_normal((k, d)) if config.heterogeneity else np.zeros((k, d))
        clients = [models.ClientModel("quadratic", centers[i]) for i in range(k)]
    return models.federation_of(clients)


def rounds_for_target(schedule: schedules.Schedule, target_observations: int) -> int:
    """Smallest T whose cumulative observation count reaches the target."""
    if target_observations < 1:
        raise ValueError("target_observations must be >= 1")

    def total(t: int) -> int:
        return int(schedules.intervals(schedule, t).sum())

    lo, hi = 1, target_observations
    while lo < hi:
        mid = (lo + hi) // 2
        if total(mid) >= target_observations:
            hi = mid
        else:
            lo = mid + 1
    while total(lo) < target_observations:  # safety net for non-monotone corners
        lo += 1
    return lo


def _resolve_x0(config: ExperimentConfig, federation: models.Federation) -> np.ndarray:
    if config.x0 == "zeros":
        return np.zeros(federation.dimension)
    if config.x0 == "optimum":
        return federation.global_optimum.copy()
    x0 = np.asarray(config.x0, dtype=np.float64)
    if x0.shape != (federation.dimension,):
        raise ValueError("x0 vector length does not match the dimension")
    return x0


# --- replication workers -----------------------------------------------------


@dataclass(frozen=True)
class _RepPayload:
    federation: models.Federation
    schedule: schedules.Schedule
    total_rounds: int
    x0: np.ndarray
    master_seed: int
    methods: tuple[str, ...]
    alpha: float
    coordinate: int
    diag: schedules.ScheduleDiagnostics
    beta: float | None
    table: critvals.CriticalValueTable | None
    plugin_skip: int
    target_value: float
    paths_dir: str | None
    dump_paths: int


@dataclass(frozen=True)
class _MethodOutcome:
    lo: float = math.nan
    hi: float = math.nan
    covered: bool = False
    width: float = math.nan
    failed: bool = False


@dataclass(frozen=True)
class _RepResult:
    outcomes: tuple[_MethodOutcome, ...]
    error: float


def _replicate(payload: _RepPayload, rep: int) -> _RepResult:
    seed = np.random.SeedSequence(payload.master_seed, spawn_key=(1, rep))
    d = payload.federation.dimension
    observers: dict[str, object] = {}
    if "plugin" in payload.methods:
        observers["plugin"] = PluginObserver(d, skip_rounds=payload.plugin_skip)
    if "rscale" in payload.methods:
        observers["rscale"] = RScaleObserver(d)
    path = engine.run(
        payload.federation,
        payload.schedule,
        payload.total_rounds,
        payload.x0,
        seed,
        observers=tuple(observers.values()),
    )
    if payload.paths_dir is not None and rep < payload.dump_paths:
        target = Path(payload.paths_dir) / f"rep_{rep:04d}.csv"
        with target.open("w") as stream:
            engine.save_path_csv(path, stream)

    outcomes = []
    for method in payload.methods:
        try:
            if method == "plugin":
                lo, hi = observers["plugin"].state.confidence_interval(
                    payload.diag, payload.coordinate, payload.alpha
                )
            else:
                lo, hi = observers["rscale"].state.confidence_interval(
                    payload.beta, payload.coordinate, payload.alpha, payload.table
                )
        except SingularHessian:
            outcomes.append(_MethodOutcome(failed=True))
            continue
        covered = lo <= payload.target_value <= hi
        outcomes.append(_MethodOutcome(lo=lo, hi=hi, covered=covered, width=hi - lo))
    error = float(np.linalg.norm(engine.average_estimate(path) - payload.federation.global_optimum))
    return _RepResult(outcomes=tuple(outcomes), error=error)


def _map_replications(fn, count: int, workers: int) -> list:
    if workers <= 1:
        return [fn(rep) for rep in range(count)]
    chunksize = max(1, count // (8 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(count), chunksize=chunksize))


# --- experiment driver --------------------------------------------------------


def run_experiment(
    config: ExperimentConfig,
    workers: int = 1,
    out_dir: str | Path | None = None,
    dump_paths: int = 0,
) -> ExperimentReport:
    """Run all replications, aggregate coverage/length statistics per method.

    Replications failing with a singular Hessian estimate are counted and
    excluded from the coverage denominator; the raw rate (failures counted as
    misses) is also reported.  When ``out_dir`` is given, writes ``report.csv``
    and ``replications.csv`` (and optional path dumps) into it.
    """
    started = time.perf_counter()
    federation = build_federation(config)
    schedule = config.schedule
    if config.rounds is not None:
        total_rounds = config.rounds
    else:
        total_rounds = rounds_for_target(schedule, config.target_observations)
    diag = schedules.diagnostics(schedule, total_rounds)
    beta = rscale.beta_for_schedule(schedule) if "rscale" in config.methods else None
    table = None
    if "rscale" in config.methods:
        if config.critical_values is None:
            table = critvals.default_table()
        else:
            with open(config.critical_values) as stream:
                table = critvals.load_csv(stream)

    paths_dir = None
    if out_dir is not None and dump_paths > 0:
        paths_dir = Path(out_dir) / "paths"
        paths_dir.mkdir(parents=True, exist_ok=True)

    payload = _RepPayload(
        federation=federation,
        schedule=schedule,
        total_rounds=total_rounds,
        x0=_resolve_x0(config, federation),
        master_seed=config.seed,
        methods=config.methods,
        alpha=config.alpha_level,
        coordinate=config.coordinate,
        diag=diag,
        beta=beta,
        table=table,
        plugin_skip=(
            schedules.warmup_rounds(schedule, total_rounds) if config.plugin_skip_warmup else 0
        ),
        target_value=float(federation.global_optimum[config.coordinate]),
        paths_dir=str(paths_dir) if paths_dir is not None else None,
        dump_paths=dump_paths,
    )
    results = _map_replications(partial(_replicate, payload), config.replications, workers)

    summaries = []
    for idx, method in enumerate(config.methods):
        outcomes = [res.outcomes[idx] for res in results]
        failures = sum(o.failed for o in outcomes)
        successes = [o for o in outcomes if not o.failed]
        denom = len(successes)
        covered = sum(o.covered for o in successes)
        coverage = covered / denom if denom else math.nan
        coverage_se = (
            math.sqrt(coverage * (1.0 - coverage) / denom) if denom else math.nan
        )
        widths = np.array([o.width for o in successes])
        summaries.append(
            MethodSummary(
                method=method,
                coverage=coverage,
                coverage_raw=covered / len(outcomes),
                coverage_se=coverage_se,
                mean_length=float(widths.mean()) if denom else math.nan,
                length_sd=float(widths.std(ddof=1)) if denom > 1 else 0.0,
                failures=failures,
            )
        )

    report = ExperimentReport(
        schedule_label=schedule.label(),
        rounds=total_rounds,
        t_T=diag.t_T,
        acf=diag.acf,
        nu_hat=diag.nu_hat,
        beta=beta,
        methods=tuple(summaries),
        mean_error=float(np.mean([res.error for res in results])),
        wall_clock=time.perf_counter() - started,
    )

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.csv").write_text(report_csv(report))
        (out / "replications.csv").write_text(
            replication_rows_csv(config, report, results)
        )
    return report


def report_csv(report: ExperimentReport) -> str:
    """One row per method; the stable machine-readable contract."""
    lines = [
        "method,schedule,t_T,coverage,coverage_se,mean_len,len_sd,acf,nu_hat,failures"
    ]
    for summary in report.methods:
        lines.append(
            f"{summary.method},{report.schedule_label},{report.t_T},"
            f"{summary.coverage:.12g},{summary.coverage_se:.12g},"
            f"{summary.mean_length:.12g},{summary.length_sd:.12g},"
            f"{report.acf:.12g},{report.nu_hat:.12g},{summary.failures}"
        )
    return "\n".join(lines) + "\n"


def replication_rows_csv(
    config: ExperimentConfig, report: ExperimentReport, results: list[_RepResult]
) -> str:
    """Per-replication detail rows; beta is empty for the plug-in method."""
    lines = ["rep,method,schedule,beta,t_T,coordinate,lo,hi,covered,width"]
    for rep, res in enumerate(results):
        for idx, method in enumerate(config.methods):
            o = res.outcomes[idx]
            beta = f"{report.beta:.12g}" if (method == "rscale" and report.beta is not None) else ""
            if o.failed:
                lines.append(
                    f"{rep},{method},{report.schedule_label},{beta},{report.t_T},"
                    f"{config.coordinate},,,failed,"
                )
            else:
                lines.append(
                    f"{rep},{method},{report.schedule_label},{beta},{report.t_T},"
                    f"{config.coordinate},{o.lo:.12g},{o.hi:.12g},{int(o.covered)},{o.width:.12g}"
                )
    return "\n".join(lines) + "\n"


# --- convergence curves and the partial-sum process ---------------------------


class _CheckpointObserver:
    """Records the running-mean estimate at chosen rounds."""

    needs_inference_draws = False

    def __init__(self, dimension: int, checkpoints: tuple[int, ...]):
        self.wanted = set(checkpoints)
        self.mean = np.zeros(dimension)
        self.snapshots: dict[int, np.ndarray] = {}

    def observe_sync(self, round_index, iteration, x_bar, interval, grad_draw, hess_draw):
        self.mean += (x_bar - self.mean) / round_index
        if round_index in self.wanted:
            self.snapshots[round_index] = self.mean.copy()


def _curve_replicate(payload: tuple, rep: int) -> np.ndarray:
    federation, schedule, checkpoints, x0, master_seed = payload
    seed = np.random.SeedSequence(master_seed, spawn_key=(1, rep))
    observer = _CheckpointObserver(federation.dimension, checkpoints)
    engine.run(federation, schedule, max(checkpoints), x0, seed, observers=(observer,))
    return np.array(
        [np.linalg.norm(observer.snapshots[t] - federation.global_optimum) for t in checkpoints]
    )


def convergence_curve(
    config: ExperimentConfig,
    checkpoints: list[int] | tuple[int, ...],
    workers: int = 1,
) -> list[tuple[int, float, float]]:
    """Mean estimation error ||y_bar_T - x*|| at each checkpoint round.

    Returns (rounds, mean error, standard error) per checkpoint, averaged over
    the configured number of replications; one engine run per replication.
    """
    checkpoints = tuple(int(t) for t in checkpoints)
    if not checkpoints or any(b <= a for a, b in zip(checkpoints, checkpoints[1:])):
        raise ValueError("checkpoints must be nonempty and strictly increasing")
    federation = build_federation(config)
    payload = (
        federation,
        config.schedule,
        checkpoints,
        _resolve_x0(config, federation),
        config.seed,
    )
    errors = np.stack(
        _map_replications(partial(_curve_replicate, payload), config.replications, workers)
    )
    means = errors.mean(axis=0)
    ses = errors.std(axis=0, ddof=1) / math.sqrt(len(errors)) if len(errors) > 1 else 0 * means
    return [(t, float(mu), float(se)) for t, mu, se in zip(checkpoints, means, ses)]


def partial_sum_process(
    path: engine.SyncPath,
    schedule: schedules.Schedule,
    x_star: np.ndarray,
    grid: list[float] | tuple[float, ...],
) -> np.ndarray:
    """The rescaled partial-sum process of the path on a grid of r values.

    Row i holds sqrt(t_T)/T * sum of the first h(r_i, T) centered iterates;
    at r = 1 this equals sqrt(t_T) * (y_bar_T - x*).
    """
    x_star = np.asarray(x_star, dtype=np.float64)
    total_rounds = path.rounds
    scale = math.sqrt(path.total_iterations) / total_rounds
    cumulative = np.cumsum(path.points - x_star, axis=0)
    rows = []
    for r in grid:
        h = schedules.fclt_time_scale(schedule, float(r), total_rounds)
        rows.append(scale * cumulative[h - 1] if h >= 1 else np.zeros(path.points.shape[1]))
    return np.stack(rows)
