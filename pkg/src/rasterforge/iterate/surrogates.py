"""Cheap synthetic objectives for checking the sampler without training."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .space import ParamDef, ParamSpace
from .study import minimize
from .tpe import TPESettings

LR_WD_SPACE = ParamSpace([
    ParamDef("optimizer.lr", low=1e-6, high=1e-1, log=True),
    ParamDef("optimizer.weight_decay", low=1e-6, high=1e-1, log=True),
])
UNIT_SPACE = ParamSpace([ParamDef("x", low=0.0, high=1.0)])


def lr_wd_surrogate(noise_std: float = 0.1, seed: int = 0) -> Callable[[dict], float]:
    """Separable bowl around lr=1e-4, wd=1e-2; weight decay matters 10x less.

    Each call draws fresh Gaussian noise from a stream fixed by ``seed``, so
    two samplers handed surrogates with the same seed see the same noise
    sequence.
    """
    rng = np.random.default_rng([seed, 7919])

    def fn(params: dict) -> float:
        lr = math.log10(params["optimizer.lr"])
        wd = math.log10(params["optimizer.weight_decay"])
        return (lr + 4.0) ** 2 + 0.1 * (wd + 2.0) ** 2 + float(rng.normal(0.0, noise_std))

    return fn


def shifted_square(params: dict) -> float:
    return (params["x"] - 0.3) ** 2


@dataclass
class PairedComparison:
    tpe_best: list[float]
    random_best: list[float]

    @property
    def wins(self) -> int:
        """Repetitions where the sampler's best is at most the random baseline's."""
        return sum(t <= r for t, r in zip(self.tpe_best, self.random_best))

    @property
    def reps(self) -> int:
        return len(self.tpe_best)


def compare_with_random(
    make_fn: Callable[[int], Callable[[dict], float]],
    space: ParamSpace,
    n_trials: int = 30,
    reps: int = 20,
    settings: TPESettings | None = None,
) -> PairedComparison:
    """Best-of-``n_trials`` for TPE and random search over seeds ``0..reps-1``."""
    tpe, rnd = [], []
    for seed in range(reps):
        for sampler, out in (("tpe", tpe), ("random", rnd)):
            trials = minimize(make_fn(seed), space, n_trials, seed=seed, settings=settings, sampler=sampler)
            out.append(min(t.value for t in trials))
    return PairedComparison(tpe, rnd)
