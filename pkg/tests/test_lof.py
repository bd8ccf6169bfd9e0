"""Cross-validation of the LOF detector against a from-scratch implementation.

``oracles.lof_training_scores`` and ``oracles.lof_novelty_score`` redo the
whole computation with scalar loops and no numpy; any systematic deviation
in distances, tie handling or the infinity conventions shows up here.
"""

from __future__ import annotations

import math
import random

import pytest

import oracles
from flowdetect.detectors import CosineLof


def assert_same_score(got: float, want: float) -> None:
    if math.isinf(want):
        assert math.isinf(got) and got > 0
    else:
        assert got == pytest.approx(want, abs=1e-9)


def random_minutes(rng: random.Random):
    n = rng.randint(3, 25)
    minutes = [rng.randint(0, 1439) for _ in range(n)]
    if rng.random() < 0.5:  # force duplicate-heavy neighbourhoods
        dup = rng.choice(minutes)
        minutes.extend([dup] * rng.randint(1, 4))
    return minutes


@pytest.mark.parametrize("seed", range(20))
def test_training_scores_match_brute_force(seed):
    rng = random.Random(seed)
    minutes = random_minutes(rng)
    k = rng.randint(1, 8)
    model = CosineLof(n_neighbors=k).fit_partial(minutes)
    expected = oracles.lof_training_scores(minutes, k)
    assert len(model.training_scores) == len(expected)
    for got, want in zip(model.training_scores, expected):
        assert_same_score(float(got), want)


@pytest.mark.parametrize("seed", range(20, 35))
def test_novelty_scores_match_brute_force(seed):
    rng = random.Random(seed)
    minutes = random_minutes(rng)
    k = rng.randint(1, 8)
    model = CosineLof(n_neighbors=k).fit_partial(minutes)
    for _ in range(6):
        query = rng.randint(0, 1439)
        got = model.score_partial(query).raw
        assert_same_score(got, oracles.lof_novelty_score(minutes, k, query))


def test_novelty_query_on_duplicated_training_value():
    minutes = [480] * 4 + [900, 910, 920]
    model = CosineLof(n_neighbors=2).fit_partial(minutes)
    assert_same_score(
        model.score_partial(480).raw, oracles.lof_novelty_score(minutes, 2, 480)
    )


def test_threshold_stays_well_defined_with_infinite_scores():
    # two duplicate blobs with k=1: every score is 0, 1 or inf, and the
    # 95th percentile lands among the infs; the threshold must be inf, not NaN
    minutes = [480] * 3 + [481] * 3 + [482, 483]
    model = CosineLof(n_neighbors=1).fit_partial(minutes)
    assert not math.isnan(model.score_threshold)
    expected = oracles.percentile_linear(
        oracles.lof_training_scores(minutes, 1), 95.0
    )
    if math.isinf(expected):
        assert math.isinf(model.score_threshold)
    else:
        assert model.score_threshold == pytest.approx(expected, abs=1e-9)


def test_threshold_is_high_quantile_of_training_scores():
    rng = random.Random(99)
    minutes = [rng.randint(420, 600) for _ in range(60)] + [60, 1200]
    model = CosineLof(percentile=90.0).fit_partial(minutes)
    above = sum(1 for s in model.training_scores if s > model.score_threshold)
    assert above / len(minutes) <= 0.10 + 1 / len(minutes)
