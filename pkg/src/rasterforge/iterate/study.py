"""Benchmark studies: composition, persistence, the trial loop and seeded reruns."""

from __future__ import annotations

import concurrent.futures as cf
import contextlib
import fcntl
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field
from functools import partial
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np

from .. import __version__
from ..config import ConfigError, config_from_dict, deep_merge, from_dict, load_yaml, schema_has_path, set_path
from ..tasks import RunRecord
from .space import ParamSpace, SpaceError
from .tpe import NoCompletedTrials, TPESettings, tpe_suggest


class BenchmarkConfigError(ValueError):
    pass


class StudyExists(FileExistsError):
    pass


class StudyMismatch(ValueError):
    pass


class TrialFailed(RuntimeError):
    pass


@dataclass
class BenchmarkTask:
    name: str
    overrides: dict[str, Any] = field(default_factory=dict)


@dataclass
class BenchmarkConfig:
    name: str = "benchmark"
    defaults: dict[str, Any] = field(default_factory=dict)
    tasks: list[BenchmarkTask] = field(default_factory=list)
    optimization_space: dict[str, Any] = field(default_factory=dict)
    n_trials: int = 10
    n_startup: int = 5
    gamma: float = 0.25
    n_candidates: int = 24
    bandwidth_floor: float = 0.01
    parallelism: int = 1
    repeated_seeds: int = 3
    seed: int = 0
    storage_dir: str = "iterate_runs"
    base_dir: str | None = None

    def __post_init__(self):
        if not self.tasks:
            raise BenchmarkConfigError("benchmark needs at least one task")
        names = [t.name for t in self.tasks]
        if len(set(names)) != len(names):
            raise BenchmarkConfigError("task names must be unique")
        if self.n_trials < 1 or self.parallelism < 1 or self.repeated_seeds < 1:
            raise BenchmarkConfigError("n_trials, parallelism and repeated_seeds must be >= 1")
        if not 0 < self.gamma <= 1:
            raise BenchmarkConfigError("gamma must lie in (0, 1]")
        try:
            self.space = ParamSpace.from_mapping(self.optimization_space)
        except SpaceError as e:
            raise BenchmarkConfigError(str(e)) from None
        for path in self.space.paths():
            if not schema_has_path(path):
                raise BenchmarkConfigError(f"optimization_space path {path!r} is not a run-config field")

    @property
    def settings(self) -> TPESettings:
        return TPESettings(self.n_startup, self.gamma, self.n_candidates, self.bandwidth_floor)

    def task(self, task_id: str | int) -> BenchmarkTask:
        if isinstance(task_id, int):
            return self.tasks[task_id]
        for t in self.tasks:
            if t.name == task_id:
                return t
        raise BenchmarkConfigError(f"unknown task {task_id!r}; have {[t.name for t in self.tasks]}")

    def compose(self, task_id: str | int, params: Mapping[str, Any] | None = None) -> dict[str, Any]:
        """defaults, then task overrides, then params; right-most wins."""
        merged = deep_merge(self.defaults, self.task(task_id).overrides)
        for path, value in (params or {}).items():
            set_path(merged, path, value)
        return merged

    def study_path(self, task_id: str | int) -> Path:
        root = Path(self.storage_dir)
        if not root.is_absolute() and self.base_dir:
            root = Path(self.base_dir) / root
        return root / self.name / self.task(task_id).name / "study.jsonl"


def parse_benchmark(data: Mapping, base_dir=None) -> BenchmarkConfig:
    try:
        cfg = from_dict(BenchmarkConfig, data)
    except ConfigError as e:
        raise BenchmarkConfigError(str(e)) from None
    if base_dir is not None:
        cfg.base_dir = str(Path(base_dir).resolve())
    return cfg


def load_benchmark(path) -> BenchmarkConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise BenchmarkConfigError(f"cannot read benchmark: {e}") from None
    try:
        data = load_yaml(text)
    except ConfigError as e:
        raise BenchmarkConfigError(str(e)) from None
    return parse_benchmark(data, base_dir=path.parent)


# ---------------------------------------------------------------- records


@dataclass
class TrialRecord:
    trial_id: int
    params: dict[str, Any]
    objective: float | None
    status: str = "complete"
    seed: int = 0
    run_ref: str | None = None
    error: str | None = None
    metrics: dict[str, float] = field(default_factory=dict)
    test_metrics: dict[str, float] = field(default_factory=dict)
    config: dict[str, Any] = field(default_factory=dict)
    wall_time: float = 0.0

    @property
    def value(self) -> float:
        """Objective used for ranking; failed trials count as +inf."""
        if self.status != "complete" or self.objective is None:
            return math.inf
        return self.objective

    def to_json(self) -> str:
        return json.dumps({"type": "trial", **asdict(self)})

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrialRecord":
        d = {k: v for k, v in d.items() if k != "type"}
        return cls(**d)


@dataclass
class StudyState:
    benchmark: str
    task: str
    space: ParamSpace
    n_trials: int
    seed: int = 0
    settings: TPESettings = field(default_factory=TPESettings)
    parallelism: int = 1
    base_dir: str | None = None
    trials: list[TrialRecord] = field(default_factory=list)
    path: Path | None = None

    def head(self) -> dict[str, Any]:
        return {
            "type": "head",
            "benchmark": self.benchmark,
            "task": self.task,
            "space": self.space.to_list(),
            "n_trials": self.n_trials,
            "seed": self.seed,
            "settings": asdict(self.settings),
            "parallelism": self.parallelism,
            "base_dir": self.base_dir,
            "version": __version__,
        }

    def completed(self) -> list[TrialRecord]:
        return [t for t in self.trials if t.status == "complete"]

    def best(self) -> TrialRecord:
        done = self.completed()
        if not done:
            raise NoCompletedTrials("study has no completed trials")
        return min(done, key=lambda t: (t.value, t.trial_id))

    def best_so_far(self) -> list[float]:
        out, cur = [], math.inf
        for t in sorted(self.trials, key=lambda t: t.trial_id):
            cur = min(cur, t.value)
            out.append(cur)
        return out

    def pending_ids(self) -> list[int]:
        done = {t.trial_id for t in self.trials}
        return [i for i in range(self.n_trials) if i not in done]


@contextlib.contextmanager
def _locked(path: Path, mode: str = "a"):
    with open(path, mode) as fh:
        fcntl.flock(fh.fileno(), fcntl.LOCK_EX)
        try:
            yield fh
        finally:
            fcntl.flock(fh.fileno(), fcntl.LOCK_UN)


def _append(path: Path, line: str) -> None:
    with _locked(path) as fh:
        fh.write(line + "\n")
        fh.flush()
        os.fsync(fh.fileno())


def create_study(state: StudyState, path) -> StudyState:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.exists():
        raise StudyExists(f"{path} already exists; pass resume to continue it")
    state.path = path
    _append(path, json.dumps(state.head()))
    for t in state.trials:
        _append(path, t.to_json())
    return state


def append_trial(state: StudyState, record: TrialRecord) -> None:
    state.trials.append(record)
    if state.path is not None:
        _append(state.path, record.to_json())


def load_study(path) -> StudyState:
    path = Path(path)
    if path.is_dir():
        path = path / "study.jsonl"
    lines = []
    with _locked(path, "r") as fh:
        for raw in fh:
            raw = raw.strip()
            if not raw:
                continue
            try:
                lines.append(json.loads(raw))
            except json.JSONDecodeError:
                # a torn final line from a crash mid-write; nothing after it is trusted
                break
    if not lines or lines[0].get("type") != "head":
        raise StudyMismatch(f"{path} has no study head record")
    head = lines[0]
    state = StudyState(
        benchmark=head["benchmark"],
        task=head["task"],
        space=ParamSpace.from_list(head["space"]),
        n_trials=head["n_trials"],
        seed=head["seed"],
        settings=TPESettings(**head["settings"]),
        parallelism=head.get("parallelism", 1),
        base_dir=head.get("base_dir"),
        path=path,
    )
    seen = set()
    for d in lines[1:]:
        if d.get("type") == "trial" and d["trial_id"] not in seen:
            seen.add(d["trial_id"])
            state.trials.append(TrialRecord.from_dict(d))
    return state


# ---------------------------------------------------------------- objectives


def trial_rng(seed: int, trial_id: int) -> np.random.Generator:
    """Sampler stream for one trial; derived, so a resumed study continues identically."""
    return np.random.default_rng([seed, trial_id])


def _normalize_result(result) -> dict[str, Any]:
    if isinstance(result, RunRecord):
        if result.status != "complete" or result.best_value is None:
            raise TrialFailed(result.error or "run produced no finite monitored value")
        return {
            "objective": float(result.best_value),
            "metrics": {k: float(v) for k, v in result.best_row().items()},
            "test_metrics": dict(result.test_metrics),
            "run_ref": result.checkpoint,
        }
    if isinstance(result, Mapping):
        out = dict(result)
        out["objective"] = float(out["objective"])
        return out
    return {"objective": float(result)}


def train_objective(config: dict[str, Any], run_dir, base_dir: str | None = None) -> RunRecord:
    """Default objective: fit the composed run config and return its record."""
    cfg = config_from_dict(config, base_dir=base_dir)
    from ..pipeline import run_fit

    return run_fit(cfg, run_dir)


def _run_trial(objective: Callable, trial_id: int, params: dict, config: dict, run_dir: str, seed: int) -> TrialRecord:
    start = time.perf_counter()
    record = TrialRecord(trial_id=trial_id, params=params, objective=None, seed=seed, run_ref=run_dir, config=config)
    try:
        result = _normalize_result(objective(config, Path(run_dir)))
        if not math.isfinite(result["objective"]):
            raise TrialFailed(f"objective is {result['objective']}")
        record.objective = result["objective"]
        record.metrics = result.get("metrics", {})
        record.test_metrics = result.get("test_metrics", {})
        record.run_ref = result.get("run_ref") or run_dir
    except Exception as e:  # a failing trial must not abort the study
        record.status = "failed"
        record.error = f"{type(e).__name__}: {e}"
    record.wall_time = time.perf_counter() - start
    return record


# ---------------------------------------------------------------- study loop


def new_state(bench: BenchmarkConfig, task_id: str | int) -> StudyState:
    return StudyState(
        benchmark=bench.name,
        task=bench.task(task_id).name,
        space=bench.space,
        n_trials=bench.n_trials,
        seed=bench.seed,
        settings=bench.settings,
        parallelism=bench.parallelism,
        base_dir=bench.base_dir,
    )


def _check_resumable(state: StudyState, fresh: StudyState) -> None:
    a, b = state.head(), fresh.head()
    for key in ("benchmark", "task", "space", "seed", "settings"):
        if a[key] != b[key]:
            raise StudyMismatch(f"stored study differs from benchmark in {key!r}; refusing to resume")


def run_study(
    bench: BenchmarkConfig,
    task_id: str | int = 0,
    objective: Callable | None = None,
    resume: bool = False,
    path=None,
    log: Callable[[str], None] | None = None,
) -> StudyState:
    """Run (or resume) the trial loop for one benchmark task.

    ``objective(config_dict, run_dir)`` returns a float, a mapping with an
    ``objective`` key, or a :class:`RunRecord`; it defaults to training the
    composed config.  Every trial uses the benchmark seed for training.
    """
    path = Path(path) if path is not None else bench.study_path(task_id)
    fresh = new_state(bench, task_id)
    if path.exists():
        if not resume:
            raise StudyExists(f"{path} already exists; pass resume to continue it")
        state = load_study(path)
        _check_resumable(state, fresh)
        state.n_trials = bench.n_trials
    else:
        state = create_study(fresh, path)

    if objective is None:
        objective = partial(train_objective, base_dir=bench.base_dir)
        # fail fast on a broken composition instead of failing every trial
        try:
            config_from_dict(bench.compose(task_id), base_dir=bench.base_dir)
        except ConfigError as e:
            raise BenchmarkConfigError(f"task {fresh.task!r}: {e}") from None

    def prepare(tid: int):
        params = tpe_suggest(state, trial_rng(state.seed, tid))
        config = bench.compose(task_id, params)
        set_path(config, "trainer.seed", bench.seed)
        run_dir = str(path.parent / f"trial_{tid:04d}")
        set_path(config, "trainer.artifacts_dir", run_dir)
        return tid, params, config, run_dir

    def record(rec: TrialRecord):
        append_trial(state, rec)
        if log:
            shown = ", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in rec.params.items())
            log(f"trial {rec.trial_id}: {rec.status} objective={rec.value:.6g} ({shown})")

    pending = state.pending_ids()
    if bench.parallelism <= 1:
        for tid in pending:
            tid, params, config, run_dir = prepare(tid)
            record(_run_trial(objective, tid, params, config, run_dir, bench.seed))
        return state

    # asynchronous: each suggestion sees only the trials completed so far
    with cf.ProcessPoolExecutor(max_workers=bench.parallelism) as pool:
        queue, in_flight = list(pending), {}
        while queue or in_flight:
            while queue and len(in_flight) < bench.parallelism:
                tid, params, config, run_dir = prepare(queue.pop(0))
                fut = pool.submit(_run_trial, objective, tid, params, config, run_dir, bench.seed)
                in_flight[fut] = tid
            done, _ = cf.wait(in_flight, return_when=cf.FIRST_COMPLETED)
            for fut in done:
                in_flight.pop(fut)
                record(fut.result())
    return state


# ---------------------------------------------------------------- reruns


@dataclass
class RerunSummary:
    trial_id: int
    seeds: list[int]
    mean: dict[str, float]
    std: dict[str, float]
    selected_seed: int
    selected_test_metrics: dict[str, float]

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def format(self) -> str:
        lines = [f"best trial {self.trial_id} rerun with seeds {self.seeds}"]
        for k in sorted(self.mean):
            lines.append(f"  {k}: {self.mean[k]:.4f} ± {self.std[k]:.4f}")
        lines.append(f"  selected seed {self.selected_seed} (lowest validation loss)")
        return "\n".join(lines)


def summarize_reruns(trial_id: int, records: list[RunRecord]) -> RerunSummary:
    rows = [{**r.best_row(), **r.test_metrics} for r in records]
    keys = sorted({k for row in rows for k in row} - {"epoch", "lr"})
    mean, std = {}, {}
    for k in keys:
        vals = np.array([row[k] for row in rows if k in row], dtype=float)
        mean[k] = float(vals.mean())
        std[k] = float(vals.std())  # population std
    chosen = min(records, key=lambda r: (r.best_row().get("val_loss", math.inf), r.seed))
    return RerunSummary(
        trial_id=trial_id,
        seeds=[r.seed for r in records],
        mean=mean,
        std=std,
        selected_seed=chosen.seed,
        selected_test_metrics=dict(chosen.test_metrics),
    )


def rerun_best(
    state: StudyState,
    k_seeds: int,
    runner: Callable[[dict, Path], RunRecord] | None = None,
    out_dir=None,
) -> tuple[list[RunRecord], RerunSummary]:
    """Retrain the best trial's config with seeds ``0..k-1`` and summarize."""
    best = state.best()
    if k_seeds < 1:
        raise ValueError("k_seeds must be >= 1")
    runner = runner or partial(train_objective, base_dir=state.base_dir)
    root = Path(out_dir) if out_dir else (state.path.parent if state.path else Path(".")) / "reruns"
    records = []
    for seed in range(k_seeds):
        config = deep_merge(best.config, {})
        run_dir = root / f"seed_{seed}"
        set_path(config, "trainer.seed", seed)
        set_path(config, "trainer.artifacts_dir", str(run_dir))
        rec = runner(config, run_dir)
        rec.seed = seed
        records.append(rec)
    summary = summarize_reruns(best.trial_id, records)
    root.mkdir(parents=True, exist_ok=True)
    (root / "summary.json").write_text(json.dumps(summary.to_dict(), indent=2))
    return records, summary


# ---------------------------------------------------------------- in-memory


def minimize(
    fn: Callable[[dict[str, Any]], float],
    space: ParamSpace,
    n_trials: int,
    seed: int = 0,
    settings: TPESettings | None = None,
    sampler: str = "tpe",
) -> list[TrialRecord]:
    """Optimize a cheap function without persistence (for surrogates and tests).

    ``sampler="random"`` draws every trial uniformly from the same per-trial
    streams, which gives a paired random-search baseline.
    """
    settings = settings or TPESettings()
    if sampler == "random":
        settings = TPESettings(n_trials + 1, settings.gamma, settings.n_candidates, settings.bandwidth_floor)
    state = StudyState("in-memory", "fn", space, n_trials, seed, settings)
    for tid in range(n_trials):
        params = tpe_suggest(state, trial_rng(seed, tid))
        try:
            value = float(fn(params))
            rec = TrialRecord(tid, params, value if math.isfinite(value) else None,
                              "complete" if math.isfinite(value) else "failed", seed)
        except Exception as e:
            rec = TrialRecord(tid, params, None, "failed", seed, error=f"{type(e).__name__}: {e}")
        state.trials.append(rec)
    return state.trials
