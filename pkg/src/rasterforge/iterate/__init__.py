"""Hyperparameter search over run configs with a univariate TPE sampler."""

from .report import emit_report, read_trials_csv, render_svg, write_trials_csv
from .space import ParamDef, ParamSpace, SpaceError
from .study import (
    BenchmarkConfig,
    BenchmarkConfigError,
    BenchmarkTask,
    RerunSummary,
    StudyExists,
    StudyMismatch,
    StudyState,
    TrialRecord,
    load_benchmark,
    load_study,
    parse_benchmark,
    rerun_best,
    run_study,
    summarize_reruns,
    trial_rng,
)
from .tpe import NoCompletedTrials, ParzenEstimator, TPESettings, random_suggest, suggest, tpe_suggest

__all__ = [
    "BenchmarkConfig",
    "BenchmarkConfigError",
    "BenchmarkTask",
    "NoCompletedTrials",
    "ParamDef",
    "ParamSpace",
    "ParzenEstimator",
    "RerunSummary",
    "SpaceError",
    "StudyExists",
    "StudyMismatch",
    "StudyState",
    "TPESettings",
    "TrialRecord",
    "emit_report",
    "load_benchmark",
    "load_study",
    "parse_benchmark",
    "random_suggest",
    "read_trials_csv",
    "render_svg",
    "rerun_best",
    "run_study",
    "suggest",
    "summarize_reruns",
    "tpe_suggest",
    "trial_rng",
    "write_trials_csv",
]
