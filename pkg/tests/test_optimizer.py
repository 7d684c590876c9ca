from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from volfuse.metrics import MetricWeights
from volfuse.optimizer import (
    CandidateEvaluator,
    DeConfig,
    candidate_config,
    decode,
    evaluate_candidate,
    exhaustive_search,
    genome_bounds,
    optimize_block_size,
)
from volfuse.volume import BlockSpec


@pytest.fixture(scope="module")
def evaluator(small_pair):
    sources, _ = small_pair
    return CandidateEvaluator(sources)


def test_decode_rounds_and_clips():
    lo, hi = np.array([2.0, 2.0, 2.0]), np.array([8.0, 8.0, 8.0])
    assert decode(np.array([2.4, 7.6, 100.0]), lo, hi) == (2, 8, 8)
    assert decode(np.array([-3.0, 4.5, 5.5]), lo, hi) == (2, 4, 6)


def test_candidate_config_shapes():
    assert candidate_config((3, 4, 5)).is_shared
    per = candidate_config(tuple(range(2, 26)))
    assert per.blocks["LLL"] == BlockSpec(2, 3, 4)
    assert per.blocks["HHH"] == BlockSpec(23, 24, 25)
    with pytest.raises(ValueError):
        candidate_config((1, 2))


def test_de_config_validation():
    with pytest.raises(ValueError):
        DeConfig(population=3)
    with pytest.raises(ValueError):
        DeConfig(crossover=1.5)
    with pytest.raises(ValueError):
        DeConfig(mode="both")
    np.testing.assert_array_equal(DeConfig().resolve_bounds((80, 80, 80)), [[2, 40]] * 3)
    with pytest.raises(ValueError):
        DeConfig(bounds=((1, 4), (2, 4), (2, 4))).resolve_bounds((8, 8, 8))
    with pytest.raises(ValueError):
        DeConfig(bounds=((2, 9), (2, 4), (2, 4))).resolve_bounds((8, 8, 8))
    with pytest.raises(ValueError):
        DeConfig(bounds=((5, 4), (2, 4), (2, 4))).resolve_bounds((8, 8, 8))
    lo, hi = genome_bounds(DeConfig(mode="per_subband"), (8, 10, 12))
    assert lo.size == hi.size == 24
    np.testing.assert_array_equal(hi[:3], [4, 5, 6])


def test_memoization(evaluator):
    before = evaluator.misses
    s1 = evaluator((3, 3, 3))
    s2 = evaluator((3, 3, 3))
    assert s1 == s2
    assert evaluator.misses <= before + 1
    assert evaluator.hits >= 1
    assert evaluate_candidate(None, (3, 3, 3), evaluator=evaluator) == s1


def test_score_many_workers_agree(small_pair):
    sources, _ = small_pair
    cands = [(2, 2, 2), (4, 4, 4), (2, 2, 2), (6, 3, 5)]
    a = CandidateEvaluator(sources).score_many(cands, workers=1)
    b = CandidateEvaluator(sources).score_many(cands, workers=3)
    assert a == b
    assert a[0] == a[2]


def test_de_elitism_and_bounds(evaluator):
    de = DeConfig(population=8, generations=6, seed=3, stall_generations=None, bounds=((2, 6), (2, 6), (2, 5)))
    config, report, trace = optimize_block_size(None, MetricWeights(), de, evaluator)
    assert np.all(np.diff(trace.best_scores) >= 0)
    assert len(trace.generations) == 7
    assert report.total == trace.best_scores[-1]
    h, w, l = config.blocks["LLL"].as_tuple()
    assert 2 <= h <= 6 and 2 <= w <= 6 and 2 <= l <= 5
    for cand in evaluator.cache:
        assert len(cand) == 3


def test_de_deterministic(small_pair):
    sources, _ = small_pair
    de = DeConfig(population=6, generations=4, seed=11, bounds=((2, 8), (2, 8), (2, 6)))
    r1 = optimize_block_size(sources, de=de)
    r2 = optimize_block_size(sources, de=de)
    assert r1[0] == r2[0]
    assert r1[2].best_scores == r2[2].best_scores
    assert r1[2].mean_scores == r2[2].mean_scores


def test_single_candidate_gives_constant_trace(small_pair):
    sources, _ = small_pair
    ev = CandidateEvaluator(sources)
    de = DeConfig(population=5, generations=4, bounds=((4, 4), (4, 4), (3, 3)), stall_generations=None)
    config, report, trace = optimize_block_size(sources, de=de, evaluator=ev)
    assert config.blocks["LLL"] == BlockSpec(4, 4, 3)
    assert len(set(trace.best_scores)) == 1
    assert len(set(trace.mean_scores)) == 1
    assert trace.evaluations == 1


def test_stall_stop(evaluator):
    de = DeConfig(population=5, generations=50, bounds=((4, 4), (4, 4), (3, 3)), stall_generations=2)
    _, _, trace = optimize_block_size(None, de=de, evaluator=evaluator)
    assert len(trace.generations) == 3


def test_de_matches_exhaustive_on_small_space(evaluator):
    bounds = ((3, 4), (3, 4), (2, 3))
    best_key, best = exhaustive_search(evaluator, bounds)
    de = DeConfig(population=10, generations=10, seed=0, bounds=bounds)
    config, report, _ = optimize_block_size(None, de=de, evaluator=evaluator)
    assert report.total == best
    assert evaluator(config.blocks["LLL"].as_tuple()) == best


def test_per_subband_mode_runs(small_pair):
    sources, _ = small_pair
    de = DeConfig(population=5, generations=2, mode="per_subband", bounds=((2, 6), (2, 6), (2, 4)))
    config, report, trace = optimize_block_size(sources, de=de)
    assert len(trace.best_candidates[-1]) == 24
    assert np.isfinite(report.total)


def test_trace_serialization(tmp_path, evaluator):
    de = DeConfig(population=5, generations=2, bounds=((2, 4), (2, 4), (2, 4)))
    _, _, trace = optimize_block_size(None, de=de, evaluator=evaluator)
    trace.save_csv(tmp_path / "t.csv")
    trace.save_json(tmp_path / "t.json")
    rows = list(csv.DictReader(open(tmp_path / "t.csv")))
    assert [int(r["generation"]) for r in rows] == trace.generations
    assert float(rows[-1]["best_score"]) == trace.best_scores[-1]
    data = json.loads((tmp_path / "t.json").read_text())
    assert len(data["rows"]) == len(trace.generations)
