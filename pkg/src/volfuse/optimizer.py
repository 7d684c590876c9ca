"""Differential evolution (rand/1/bin) over fusion block sizes.

The genome is real-valued; a candidate is decoded by rounding each gene to
the nearest integer and clamping to its bounds. Scores are memoized on the
decoded tuple because many genomes collapse onto one candidate. All random
draws happen on the calling thread, so worker count never changes which
candidates are generated.
"""

from __future__ import annotations

import csv
import json
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .fusion import FusionConfig, check_compatible, fuse_subband_sets
from .metrics import EvaluationReport, MetricWeights, joint_score
from .swt import SUBBAND_LABELS, swt_forward, swt_inverse
from .volume import BlockSpec, map_project

MODES = ("shared", "per_subband")


@dataclass(frozen=True)
class DeConfig:
    population: int = 20
    mutation: float = 0.5
    crossover: float = 0.9
    generations: int = 50
    # (low, high) per axis h, w, l; None means [2, dim // 2]
    bounds: tuple | None = None
    mode: str = "shared"
    seed: int = 0
    stall_generations: int | None = 10
    workers: int = 1

    def __post_init__(self):
        if self.population < 4:
            raise ValueError(f"population must be >= 4 for rand/1 mutation, got {self.population}")
        if not 0 < self.mutation <= 2:
            raise ValueError(f"mutation factor F must lie in (0, 2], got {self.mutation}")
        if not 0 <= self.crossover <= 1:
            raise ValueError(f"crossover rate CR must lie in [0, 1], got {self.crossover}")
        if self.generations < 0:
            raise ValueError("generations must be non-negative")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def resolve_bounds(self, dims) -> np.ndarray:
        """Integer bounds, shape (3, 2), validated against the volume dims."""
        if self.bounds is None:
            b = np.array([[2, max(2, n // 2)] for n in dims])
        else:
            b = np.asarray(self.bounds, dtype=np.int64).reshape(3, 2)
        for (lo, hi), n, name in zip(b, dims, "hwl"):
            if lo < 2:
                raise ValueError(f"lower bound for {name} must be >= 2, got {lo}")
            if hi > n:
                raise ValueError(f"upper bound for {name} ({hi}) exceeds volume dimension {n}")
            if lo > hi:
                raise ValueError(f"infeasible bounds for {name}: {lo} > {hi}")
        return b

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bounds"] = None if self.bounds is None else [list(map(int, p)) for p in np.reshape(self.bounds, (3, 2))]
        return d


@dataclass
class DeTrace:
    generations: list = field(default_factory=list)
    best_scores: list = field(default_factory=list)
    mean_scores: list = field(default_factory=list)
    best_candidates: list = field(default_factory=list)
    evaluations: int = 0

    def record(self, gen: int, best: float, mean: float, candidate: tuple) -> None:
        self.generations.append(gen)
        self.best_scores.append(best)
        self.mean_scores.append(mean)
        self.best_candidates.append(list(candidate))

    def to_dict(self) -> dict:
        return {
            "evaluations": self.evaluations,
            "rows": [
                {"generation": g, "best_score": b, "mean_score": m, "best_dims": c}
                for g, b, m, c in zip(self.generations, self.best_scores, self.mean_scores, self.best_candidates)
            ],
        }

    def save_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            width = len(self.best_candidates[0]) if self.best_candidates else 3
            w.writerow(["generation", "best_score", "mean_score"] + [f"dim{i}" for i in range(width)])
            for g, b, m, c in zip(self.generations, self.best_scores, self.mean_scores, self.best_candidates):
                w.writerow([g, repr(b), repr(m), *c])


def decode(genome: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> tuple[int, ...]:
    return tuple(int(v) for v in np.clip(np.rint(genome), lo, hi))


def candidate_config(candidate, wavelet: str = "haar") -> FusionConfig:
    """Turn a decoded tuple (3 or 24 integers) into a FusionConfig."""
    candidate = tuple(candidate)
    if len(candidate) == 3:
        return FusionConfig.shared(BlockSpec(*candidate), wavelet)
    if len(candidate) == 3 * len(SUBBAND_LABELS):
        return FusionConfig(
            {lab: BlockSpec(*candidate[3 * i : 3 * i + 3]) for i, lab in enumerate(SUBBAND_LABELS)}, wavelet
        )
    raise ValueError(f"candidate must have 3 or 24 entries, got {len(candidate)}")


class CandidateEvaluator:
    """Scores block-size candidates against fixed sources, with memoization.

    Source transforms and source MAPs are computed once.
    """

    def __init__(self, sources, weights: MetricWeights = MetricWeights(), wavelet: str = "haar"):
        sources = list(sources)
        check_compatible(sources)
        self.dims = sources[0].shape
        self.weights = weights
        self.wavelet = wavelet
        self.band_sets = [swt_forward(v, wavelet) for v in sources]
        self.source_maps = [map_project(v, "z") for v in sources]
        self.cache: dict[tuple, EvaluationReport] = {}
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()

    def fuse(self, candidate):
        config = candidate_config(candidate, self.wavelet)
        for lab in SUBBAND_LABELS:
            config.blocks[lab].validate_for(self.dims)
        bands, mask = fuse_subband_sets(self.band_sets, config)
        return swt_inverse(bands), mask, config

    def _compute(self, key: tuple) -> EvaluationReport:
        fused, _, _ = self.fuse(key)
        return joint_score(map_project(fused, "z"), self.source_maps, self.weights)

    def report(self, candidate) -> EvaluationReport:
        key = tuple(int(v) for v in candidate)
        with self._lock:
            if key in self.cache:
                self.hits += 1
                return self.cache[key]
        rep = self._compute(key)
        with self._lock:
            self.misses += 1
            self.cache.setdefault(key, rep)
            return self.cache[key]

    def __call__(self, candidate) -> float:
        return self.report(candidate).total

    def score_many(self, candidates, workers: int = 1) -> list[float]:
        keys = [tuple(c) for c in candidates]
        todo = sorted({k for k in keys if k not in self.cache})
        if workers > 1 and len(todo) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                list(pool.map(self.report, todo))
        else:
            for k in todo:
                self.report(k)
        return [self(k) for k in keys]


def evaluate_candidate(sources, candidate, weights: MetricWeights = MetricWeights(), evaluator=None) -> float:
    """Score one decoded candidate; pass ``evaluator`` to share its cache."""
    if evaluator is None:
        evaluator = CandidateEvaluator(sources, weights)
    return evaluator(candidate)


def genome_bounds(de: DeConfig, dims) -> tuple[np.ndarray, np.ndarray]:
    b = de.resolve_bounds(dims)
    reps = 1 if de.mode == "shared" else len(SUBBAND_LABELS)
    lo = np.tile(b[:, 0], reps).astype(np.float64)
    hi = np.tile(b[:, 1], reps).astype(np.float64)
    return lo, hi


def optimize_block_size(sources, weights: MetricWeights = MetricWeights(), de: DeConfig = DeConfig(), evaluator=None):
    """Maximize the joint score of the fused MAP over block dimensions.

    Returns ``(FusionConfig, EvaluationReport, DeTrace)`` for the best
    candidate seen in any generation.
    """
    if evaluator is None:
        evaluator = CandidateEvaluator(sources, weights)
    lo, hi = genome_bounds(de, evaluator.dims)
    n_pop, n_dim = de.population, lo.size
    rng = np.random.default_rng(de.seed)

    pop = lo + rng.random((n_pop, n_dim)) * (hi - lo)
    keys = [decode(x, lo, hi) for x in pop]
    scores = np.array(evaluator.score_many(keys, de.workers))

    trace = DeTrace()
    i_best = int(np.argmax(scores))
    best_key, best_score = keys[i_best], float(scores[i_best])
    trace.record(0, best_score, float(scores.mean()), best_key)
    stall = 0

    others = np.arange(n_pop - 1)
    for gen in range(1, de.generations + 1):
        trials = np.empty_like(pop)
        for i in range(n_pop):
            r1, r2, r3 = rng.choice(others, 3, replace=False)
            r1, r2, r3 = (r + (r >= i) for r in (r1, r2, r3))
            mutant = pop[r1] + de.mutation * (pop[r2] - pop[r3])
            cross = rng.random(n_dim) < de.crossover
            cross[rng.integers(n_dim)] = True
            trials[i] = np.clip(np.where(cross, mutant, pop[i]), lo, hi)

        trial_keys = [decode(x, lo, hi) for x in trials]
        trial_scores = evaluator.score_many(trial_keys, de.workers)

        improved = False
        for i, (k, s) in enumerate(zip(trial_keys, trial_scores)):
            if s >= scores[i]:
                pop[i], keys[i], scores[i] = trials[i], k, s
            if s > best_score:
                best_key, best_score, improved = k, float(s), True
        trace.record(gen, best_score, float(scores.mean()), best_key)

        stall = 0 if improved else stall + 1
        if de.stall_generations and stall >= de.stall_generations:
            break

    trace.evaluations = len(evaluator.cache)
    config = candidate_config(best_key, evaluator.wavelet)
    return config, evaluator.report(best_key), trace


def exhaustive_search(evaluator: CandidateEvaluator, bounds) -> tuple[tuple, float]:
    """Best shared-mode candidate by enumeration; ties keep the first in lexicographic order."""
    b = np.asarray(bounds).reshape(3, 2)
    best_key, best = None, -np.inf
    for h in range(b[0, 0], b[0, 1] + 1):
        for w in range(b[1, 0], b[1, 1] + 1):
            for l in range(b[2, 0], b[2, 1] + 1):  # noqa: E741
                s = evaluator((h, w, l))
                if s > best:
                    best_key, best = (h, w, l), s
    return best_key, best
