"""
Multi-objective architecture search over (measured error, parameter count).

Population-based loop: surrogate ensemble fit, parent selection by
non-dominated sorting, mutation, Thompson-sampled candidate selection.
"""
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional, Protocol, Sequence, Set, Tuple

import numpy as np

from models.genotype import Genotype
from models.request import SearchConfig
from models.response import EvalRecord, IterationSnapshot, IterationTiming, ParetoEntry
from services.search_space import DEFAULT_SPACE, SearchSpace
from services.surrogate_service import SurrogateEnsemble, fit_surrogate

logger = logging.getLogger(__name__)

Objectives = Tuple[float, float]


class Evaluator(Protocol):
    def evaluate(self, g: Genotype) -> EvalRecord: ...

    def evaluate_many(self, genotypes: Iterable[Genotype]) -> List[EvalRecord]: ...

    def count_parameters(self, g: Genotype) -> int: ...


# Pareto utilities

def dominates(a: Sequence[float], b: Sequence[float]) -> bool:
    """a dominates b when no worse in both objectives and strictly better in one (minimization)"""
    return all(x <= y for x, y in zip(a, b)) and any(x < y for x, y in zip(a, b))


def _objectives(item: Any) -> Objectives:
    if isinstance(item, EvalRecord):
        return item.objectives
    return float(item[0]), float(item[1])


def _tie_key(item: Any) -> Tuple[float, float, str]:
    e, p = _objectives(item)
    key = item.genotype_hash if isinstance(item, EvalRecord) else (str(item[2]) if len(item) > 2 else "")
    return e, p, key


def _fronts(points: Sequence[Objectives]) -> List[List[int]]:
    n = len(points)
    dominated_by_me: List[List[int]] = [[] for _ in range(n)]
    counts = [0] * n
    for i in range(n):
        for j in range(i + 1, n):
            if dominates(points[i], points[j]):
                dominated_by_me[i].append(j)
                counts[j] += 1
            elif dominates(points[j], points[i]):
                dominated_by_me[j].append(i)
                counts[i] += 1
    fronts = [[i for i in range(n) if counts[i] == 0]]
    while fronts[-1]:
        following = []
        for p in fronts[-1]:
            for q in dominated_by_me[p]:
                counts[q] -= 1
                if counts[q] == 0:
                    following.append(q)
        fronts.append(following)
    fronts.pop()
    return fronts


def non_dominated_sort(items: Sequence[Any]) -> List[List[Any]]:
    """Fronts of EvalRecords or (error, params[, tag]) tuples.

    Items with an infinite error are sorted among themselves after every
    finite front. Within a front: ascending error, then params, then hash.
    """
    finite = [item for item in items if math.isfinite(_objectives(item)[0])]
    infinite = [item for item in items if not math.isfinite(_objectives(item)[0])]
    fronts = []
    for group in (finite, infinite):
        for front in _fronts([_objectives(item) for item in group]):
            fronts.append(sorted((group[i] for i in front), key=_tie_key))
    return fronts


def pareto_front(items: Sequence[Any]) -> List[Any]:
    fronts = non_dominated_sort(items)
    return fronts[0] if fronts else []


def hypervolume(front: Sequence[Any], reference: Objectives) -> float:
    """Area dominated by a two-objective front and bounded by the reference point"""
    ref_e, ref_p = reference
    points = sorted(
        (e, p) for e, p in (_objectives(item) for item in front)
        if math.isfinite(e) and e < ref_e and p < ref_p
    )
    volume = 0.0
    prev_p = ref_p
    for e, p in points:
        if p < prev_p:
            volume += (ref_e - e) * (prev_p - p)
            prev_p = p
    return float(volume)


def worst_point(items: Sequence[Any]) -> Optional[Objectives]:
    finite = [_objectives(item) for item in items if math.isfinite(_objectives(item)[0])]
    if not finite:
        return None
    return max(e for e, _ in finite), max(p for _, p in finite)


def thompson_select(ensemble: SurrogateEnsemble, candidates: Sequence[Genotype], k_l: int, rng: np.random.Generator,
                    count_parameters: Callable[[Genotype], int]) -> List[Genotype]:
    """Pick k_l candidates by non-dominated sorting on (sampled error, exact params).

    Each candidate's error is drawn from one uniformly chosen ensemble member.
    Fronts are taken whole while they fit; the last one is cut by ascending
    sampled error.
    """
    candidates = list(candidates)
    if len(candidates) <= k_l:
        return candidates
    predictions = ensemble.predict_genotypes(candidates)
    members = rng.integers(predictions.shape[0], size=len(candidates))
    sampled = predictions[members, np.arange(len(candidates))]
    points = [(float(sampled[i]), float(count_parameters(g)), g.key, i) for i, g in enumerate(candidates)]
    selected: List[Genotype] = []
    for front in non_dominated_sort(points):
        room = k_l - len(selected)
        selected.extend(candidates[point[3]] for point in front[:room])
        if len(selected) >= k_l:
            break
    return selected


# Search loop

@dataclass
class SearchResult:
    front: List[EvalRecord]
    records: List[EvalRecord]
    history: List[IterationSnapshot] = field(default_factory=list)
    timings: List[IterationTiming] = field(default_factory=list)
    exhausted: bool = False

    @property
    def best(self) -> Optional[EvalRecord]:
        finite = [r for r in self.records if r.finite]
        return min(finite, key=_tie_key) if finite else None


class SearchService:
    def __init__(self, evaluator: Evaluator, cfg: Optional[SearchConfig] = None, space: Optional[SearchSpace] = None,
                 initial_records: Iterable[EvalRecord] = (),
                 on_iteration: Optional[Callable[[IterationSnapshot, IterationTiming], None]] = None):
        self.evaluator = evaluator
        self.cfg = cfg or SearchConfig()
        self.space = space or DEFAULT_SPACE
        self.on_iteration = on_iteration
        self.population: Dict[str, EvalRecord] = {r.genotype_hash: r for r in initial_records}
        self.rng = np.random.default_rng(self.cfg.seed)
        self.history: List[IterationSnapshot] = []
        self.timings: List[IterationTiming] = []

    # population views

    @property
    def records(self) -> List[EvalRecord]:
        return list(self.population.values())

    def best_error(self) -> float:
        finite = [r.measured_error for r in self.population.values() if r.finite]
        return min(finite) if finite else math.inf

    def _absorb(self, records: Iterable[EvalRecord]) -> None:
        for record in records:
            self.population.setdefault(record.genotype_hash, record)

    def _target_reached(self) -> bool:
        target = self.cfg.target_error
        return target is not None and self.best_error() <= target

    def _snapshot(self, iteration: int, started: float, exhausted: bool = False) -> IterationSnapshot:
        records = self.records
        front = pareto_front(records)
        reference = worst_point(records)
        best = SearchResult(front, records).best
        snapshot = IterationSnapshot(
            iteration=iteration,
            evaluations=len(records),
            best_error=best.measured_error if best else math.inf,
            best_hash=best.genotype_hash if best else None,
            hypervolume=hypervolume(front, reference) if reference else 0.0,
            front=[ParetoEntry.from_record(r) for r in front if r.finite],
            exhausted=exhausted,
        )
        timing = IterationTiming(iteration=iteration, wall_seconds=time.perf_counter() - started,
                                 evaluations=len(records))
        self.history.append(snapshot)
        self.timings.append(timing)
        if self.on_iteration is not None:
            self.on_iteration(snapshot, timing)
        logger.info(f"Iteration {iteration}: {snapshot.evaluations} evaluated, best error "
                    f"{snapshot.best_error:.6g}, front size {len(snapshot.front)}")
        return snapshot

    # candidate generation

    def _space_covered(self, pending: Set[str]) -> bool:
        return len(self.population) + len(pending) >= self.space.size(canonical=True)

    def random_fresh(self, n: int) -> List[Genotype]:
        """Up to n random genotypes not yet evaluated"""
        fresh: Dict[str, Genotype] = {}
        attempts = max(100, n * (self.cfg.max_retries + 1))
        while len(fresh) < n and attempts > 0 and not self._space_covered(set(fresh)):
            attempts -= 1
            g = self.space.random_genotype(self.rng)
            if g.key not in self.population:
                fresh.setdefault(g.key, g)
        return list(fresh.values())

    def parents(self) -> List[EvalRecord]:
        """Top k_p by front rank, then within-front order"""
        ranked = [r for front in non_dominated_sort(self.records) for r in front]
        return ranked[:self.cfg.k_p]

    def mutants(self, parents: Sequence[EvalRecord]) -> List[Genotype]:
        """k_m unevaluated mutants per parent; duplicates are re-mutated, then dropped"""
        cfg = self.cfg
        fresh: Dict[str, Genotype] = {}
        for parent in parents:
            for _ in range(cfg.k_m):
                child = self.space.mutate(parent.genotype, cfg.p_m, self.rng)
                retries = 0
                while (child.key in self.population or child.key in fresh) and retries < cfg.max_retries:
                    child = self.space.mutate(parent.genotype, cfg.p_m, self.rng)
                    retries += 1
                if child.key not in self.population and child.key not in fresh:
                    fresh[child.key] = child
        return list(fresh.values())

    def propose(self, iteration: int) -> List[Genotype]:
        cfg = self.cfg
        if sum(r.finite for r in self.records) < 2:
            logger.warning("Fewer than 2 finite records; sampling candidates at random")
            return self.random_fresh(cfg.k_l)
        ensemble = fit_surrogate(self.records, cfg, seed=cfg.seed * 10_007 + iteration)
        candidates = self.mutants(self.parents())
        if not candidates:
            return []
        return thompson_select(ensemble, candidates, cfg.k_l, self.rng, self.evaluator.count_parameters)

    # main loop

    def run(self) -> SearchResult:
        cfg = self.cfg
        started = time.perf_counter()
        exhausted = False

        missing = cfg.k_ini - len(self.population)
        if missing > 0:
            self._absorb(self.evaluator.evaluate_many(self.random_fresh(missing)))
        self._snapshot(0, started)

        for iteration in range(1, cfg.t_max + 1):
            if self._target_reached():
                logger.info(f"Target error {cfg.target_error} reached after {len(self.population)} evaluations")
                break
            started = time.perf_counter()
            selected = self.propose(iteration)
            if not selected:
                exhausted = True
                self._snapshot(iteration, started, exhausted=True)
                logger.warning(f"No unevaluated candidate could be generated at iteration {iteration}")
                break
            self._absorb(self.evaluator.evaluate_many(selected))
            self._snapshot(iteration, started)

        records = self.records
        return SearchResult(
            front=pareto_front(records), records=records, history=list(self.history),
            timings=list(self.timings), exhausted=exhausted,
        )


def run_search_loop(evaluator: Evaluator, cfg: Optional[SearchConfig] = None, space: Optional[SearchSpace] = None,
                    initial_records: Iterable[EvalRecord] = ()) -> SearchResult:
    return SearchService(evaluator, cfg, space, initial_records).run()
