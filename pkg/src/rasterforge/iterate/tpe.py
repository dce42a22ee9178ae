"""Univariate Tree-structured Parzen Estimator.

Completed trials are split into a good set (the best ``ceil(gamma * n)``,
at least one) and the rest.  For every parameter independently, a Parzen
density is fitted to each set in the sampler's internal space (log space for
log-scaled parameters): one truncated Gaussian per observation plus a
uniform prior component, all with weight ``1 / (n + 1)``.

The bandwidth follows Scott's ``n ** (-1/5)`` decay applied to a reference
scale of ``0.2 * range`` and is floored at ``bandwidth_floor * range``.
Using the sample standard deviation as the reference scale collapses the
kernels once the good set clusters, which stalls the search.  Candidates are
drawn from the good density and the one maximizing ``l(x) / g(x)`` wins.
Categorical parameters use add-one smoothed frequencies instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .space import ParamDef, ParamSpace


@dataclass
class TPESettings:
    n_startup: int = 5
    gamma: float = 0.25
    n_candidates: int = 24
    bandwidth_floor: float = 0.01


BANDWIDTH_SCALE = 0.2


class ParzenEstimator:
    """Mixture of truncated Gaussians plus a uniform prior on ``[low, high]``."""

    def __init__(self, points: Sequence[float], low: float, high: float, bandwidth_floor: float = 0.01):
        self.low, self.high = low, high
        self.mus = np.asarray(points, dtype=float)
        n = len(self.mus)
        span = high - low
        scott = BANDWIDTH_SCALE * span * max(n, 1) ** (-1.0 / 5.0)
        self.bandwidth = max(scott, bandwidth_floor * span)
        self.weight = 1.0 / (n + 1)
        a = (low - self.mus) / self.bandwidth
        b = (high - self.mus) / self.bandwidth
        self._cdf_lo, self._cdf_hi = ndtr(a), ndtr(b)
        self._mass = np.maximum(self._cdf_hi - self._cdf_lo, 1e-300)

    def pdf(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        z = (x[:, None] - self.mus[None, :]) / self.bandwidth
        kern = np.exp(-0.5 * z ** 2) / (math.sqrt(2 * math.pi) * self.bandwidth * self._mass[None, :])
        prior = 1.0 / (self.high - self.low)
        return self.weight * (kern.sum(axis=1) + prior)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        n = len(self.mus)
        comp = rng.integers(n + 1, size=size)
        u = rng.uniform(size=size)
        out = np.empty(size)
        prior = comp == n
        out[prior] = self.low + u[prior] * (self.high - self.low)
        k = comp[~prior]
        if k.size:
            # inverse-CDF draw from the truncated component
            p = self._cdf_lo[k] + u[~prior] * (self._cdf_hi[k] - self._cdf_lo[k])
            p = np.clip(p, 1e-300, 1 - 1e-16)
            out[~prior] = self.mus[k] + self.bandwidth * ndtri(p)
        return np.clip(out, self.low, self.high)


def _objective_key(trial) -> tuple[float, int]:
    value = trial.objective if trial.status == "complete" and trial.objective is not None else math.inf
    if not math.isfinite(value):
        value = math.inf
    return value, trial.trial_id


def split_good_bad(trials, gamma: float) -> tuple[list, list]:
    """Best ``ceil(gamma * n)`` trials (ties broken by trial id) and the rest.

    Failed trials sort last with objective ``+inf``.
    """
    ordered = sorted(trials, key=_objective_key)
    n_good = max(1, math.ceil(gamma * len(ordered)))
    return ordered[:n_good], ordered[n_good:]


def sample_uniform(param: ParamDef, rng: np.random.Generator) -> Any:
    if param.kind == "categorical":
        return param.choices[int(rng.integers(len(param.choices)))]
    lo, hi = param.transformed_bounds
    return param.from_internal(float(rng.uniform(lo, hi)))


def random_suggest(space: ParamSpace, rng: np.random.Generator) -> dict[str, Any]:
    return {p.path: sample_uniform(p, rng) for p in space}


def _suggest_continuous(param: ParamDef, good, bad, rng, settings: TPESettings) -> float:
    lo, hi = param.transformed_bounds
    to_int = lambda ts: [param.to_internal(t.params[param.path]) for t in ts if param.path in t.params]
    l = ParzenEstimator(to_int(good), lo, hi, settings.bandwidth_floor)
    g = ParzenEstimator(to_int(bad), lo, hi, settings.bandwidth_floor)
    cand = l.sample(rng, settings.n_candidates)
    score = np.log(l.pdf(cand)) - np.log(g.pdf(cand))
    return param.from_internal(float(cand[int(np.argmax(score))]))


def _suggest_categorical(param: ParamDef, good, bad, rng, settings: TPESettings) -> Any:
    choices = param.choices

    def probs(trials):
        counts = np.ones(len(choices))
        for t in trials:
            v = t.params.get(param.path)
            if v in choices:
                counts[choices.index(v)] += 1
        return counts / counts.sum()

    pl, pg = probs(good), probs(bad)
    cand = rng.choice(len(choices), size=settings.n_candidates, p=pl)
    score = np.log(pl[cand]) - np.log(pg[cand])
    return choices[int(cand[int(np.argmax(score))])]


class NoCompletedTrials(LookupError):
    pass


def suggest(space: ParamSpace, trials: Sequence, rng: np.random.Generator,
            settings: TPESettings | None = None) -> dict[str, Any]:
    """Suggest the next parameter values given the finished ``trials``.

    Uniform sampling is used for the first ``n_startup`` trials and whenever
    no trial has completed.
    """
    settings = settings or TPESettings()
    finished = [t for t in trials if t.status in ("complete", "failed")]
    if len(finished) < settings.n_startup or not any(t.status == "complete" for t in finished):
        return random_suggest(space, rng)
    good, bad = split_good_bad(finished, settings.gamma)
    out = {}
    for param in space:
        if param.kind == "categorical":
            out[param.path] = _suggest_categorical(param, good, bad, rng, settings)
        else:
            out[param.path] = _suggest_continuous(param, good, bad, rng, settings)
    return out


def tpe_suggest(state, rng: np.random.Generator) -> dict[str, Any]:
    """Suggest from a study state (anything with ``space``, ``trials`` and ``settings``)."""
    return suggest(state.space, state.trials, rng, getattr(state, "settings", None))
