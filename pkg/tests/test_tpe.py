import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from rasterforge.iterate.space import ParamDef, ParamSpace, SpaceError
from rasterforge.iterate.study import TrialRecord, minimize, trial_rng
from rasterforge.iterate.surrogates import (
    LR_WD_SPACE,
    UNIT_SPACE,
    compare_with_random,
    lr_wd_surrogate,
    shifted_square,
)
from rasterforge.iterate.tpe import ParzenEstimator, TPESettings, split_good_bad, suggest

MIXED = ParamSpace([
    ParamDef("optimizer.lr", low=1e-6, high=1e-1, log=True),
    ParamDef("scheduler.factor", low=0.1, high=0.9),
    ParamDef("data.batch_size", kind="categorical", choices=[4, 8, 16]),
])


def _history(space, values, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for i, v in enumerate(values):
        params = {p.path: (p.choices[int(rng.integers(len(p.choices)))] if p.kind == "categorical"
                           else p.from_internal(rng.uniform(*p.transformed_bounds))) for p in space}
        status = "failed" if v is None else "complete"
        out.append(TrialRecord(i, params, v, status))
    return out


@settings(max_examples=1000)
@given(st.integers(0, 2**32 - 1), st.integers(0, 12), st.integers(0, 2**16))
def test_suggestions_stay_in_bounds(seed, n_hist, hist_seed):
    rng = np.random.default_rng(hist_seed)
    values = [None if rng.random() < 0.2 else float(rng.normal()) for _ in range(n_hist)]
    params = suggest(MIXED, _history(MIXED, values, hist_seed), np.random.default_rng(seed))
    for p in MIXED:
        assert p.contains(params[p.path]), (p.path, params[p.path])


def test_startup_is_log_uniform():
    space = ParamSpace([ParamDef("optimizer.lr", low=1e-6, high=1e-1, log=True)])
    draws = np.array([suggest(space, [], trial_rng(0, i))["optimizer.lr"] for i in range(4000)])
    assert draws.min() >= 1e-6 and draws.max() <= 1e-1
    hist, _ = np.histogram(np.log10(draws), bins=5, range=(-6, -1))
    assert np.all(np.abs(hist / 4000 - 0.2) < 0.03)


def test_startup_ignores_history_until_n_startup():
    trials = _history(UNIT_SPACE, [1.0, 2.0, 3.0, 4.0])
    a = suggest(UNIT_SPACE, trials, np.random.default_rng(5))
    b = suggest(UNIT_SPACE, [], np.random.default_rng(5))
    assert a == b


def test_all_failed_falls_back_to_uniform():
    trials = _history(UNIT_SPACE, [None] * 8)
    assert suggest(UNIT_SPACE, trials, np.random.default_rng(1)) == suggest(UNIT_SPACE, [], np.random.default_rng(1))


def test_equal_objectives_split_by_trial_id():
    trials = _history(UNIT_SPACE, [1.0] * 8)[::-1]
    good, bad = split_good_bad(trials, 0.25)
    assert [t.trial_id for t in good] == [0, 1]
    assert [t.trial_id for t in bad] == [2, 3, 4, 5, 6, 7]
    x = suggest(UNIT_SPACE, trials, np.random.default_rng(0))["x"]
    assert 0.0 <= x <= 1.0


def test_failed_trials_rank_last():
    trials = _history(UNIT_SPACE, [None, 5.0, None, 1.0])
    good, bad = split_good_bad(trials, 0.5)
    assert [t.trial_id for t in good] == [3, 1]
    assert [t.trial_id for t in bad] == [0, 2]
    assert split_good_bad(trials[:1], 0.25)[0][0].trial_id == 0


@given(st.lists(st.floats(0, 1), max_size=10), st.floats(1e-3, 0.1))
def test_parzen_density_integrates_to_one(points, floor):
    est = ParzenEstimator(points, 0.0, 1.0, floor)
    total, _ = integrate.quad(lambda x: float(est.pdf(x)[0]), 0, 1, points=points[:50], limit=200)
    assert total == pytest.approx(1.0, abs=1e-6)
    draws = est.sample(np.random.default_rng(0), 200)
    assert draws.min() >= 0 and draws.max() <= 1


def test_parzen_bandwidth_rule():
    est = ParzenEstimator([0.2] * 32, 0.0, 2.0, 0.01)
    assert est.bandwidth == pytest.approx(0.2 * 2.0 * 32 ** (-0.2))
    floored = ParzenEstimator([0.2] * 10**4, 0.0, 2.0, 0.05)
    assert floored.bandwidth == pytest.approx(0.1)


def test_categorical_prefers_good_choice():
    space = ParamSpace([ParamDef("data.batch_size", kind="categorical", choices=[4, 8, 16])])
    trials = [TrialRecord(i, {"data.batch_size": c}, v) for i, (c, v) in
              enumerate([(8, 0.1), (4, 2.0), (16, 2.0), (4, 3.0), (16, 3.0), (8, 0.2), (4, 4.0), (16, 4.0)])]
    picks = [suggest(space, trials, np.random.default_rng(s))["data.batch_size"] for s in range(50)]
    assert picks.count(8) == 50


def test_space_validation():
    with pytest.raises(SpaceError):
        ParamDef("optimizer.lr", low=0.0, high=1.0, log=True)
    with pytest.raises(SpaceError):
        ParamDef("optimizer.lr", low=1.0, high=1.0)
    with pytest.raises(SpaceError):
        ParamDef("data.batch_size", kind="categorical", choices=[])
    with pytest.raises(SpaceError):
        ParamSpace.from_mapping({"optimizer.lr": {"low": 1e-5, "high": 1e-2, "scale": "log"}})
    space = ParamSpace.from_mapping({"optimizer.lr": {"type": "continuous", "low": "1e-5", "high": 1e-2, "log": True}})
    assert space.paths() == ["optimizer.lr"] and ParamSpace.from_list(space.to_list()) == space


def test_minimize_is_deterministic():
    a = [t.params for t in minimize(shifted_square, UNIT_SPACE, 15, seed=3)]
    b = [t.params for t in minimize(shifted_square, UNIT_SPACE, 15, seed=3)]
    assert a == b


def test_tpe_beats_random_on_shifted_square():
    cmp = compare_with_random(lambda seed: shifted_square, UNIT_SPACE)
    assert np.median(cmp.tpe_best) < np.median(cmp.random_best)


def test_tpe_beats_random_on_lr_wd_surrogate():
    cmp = compare_with_random(lambda seed: lr_wd_surrogate(0.1, seed), LR_WD_SPACE)
    assert cmp.reps == 20 and cmp.wins >= 14


def test_random_baseline_shares_startup_draws():
    tpe = minimize(shifted_square, UNIT_SPACE, 10, seed=1)
    rnd = minimize(shifted_square, UNIT_SPACE, 10, seed=1, sampler="random")
    assert [t.params for t in tpe[:5]] == [t.params for t in rnd[:5]]
    assert [t.params for t in tpe[5:]] != [t.params for t in rnd[5:]]


def test_minimize_records_failures_as_inf():
    def flaky(params):
        if params["x"] > 0.5:
            raise RuntimeError("diverged")
        return math.nan if params["x"] < 0.05 else params["x"]

    trials = minimize(flaky, UNIT_SPACE, 20, seed=0)
    failed = [t for t in trials if t.status == "failed"]
    assert failed and all(t.value == math.inf for t in failed)
    assert all(t.value <= 0.5 for t in trials if t.status == "complete")
