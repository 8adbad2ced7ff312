import math

import numpy as np
import pytest

from conftest import PlantedEvaluator, make_genotype
from models.genotype import Genotype
from models.request import SearchConfig
from services.search_service import (
    SearchService, dominates, hypervolume, non_dominated_sort, pareto_front, run_search_loop, thompson_select,
    worst_point,
)
from services.search_space import SearchSpace, random_genotype, space_size
from services.surrogate_service import fit_surrogate

FAST = dict(ensemble_size=2, ensemble_hidden=16, ensemble_epochs=40)


def _sixteen_genotype_space():
    pins = {gene: [label] for gene, label in make_genotype().labels().items()}
    pins.update({"sm": ["None", "RevIN"], "fem": ["None", "Decomp"], "ln": ["1", "2"], "hs": ["64", "128"]})
    return SearchSpace(pins)


class TestDominance:
    def test_dominates(self):
        assert dominates((1.0, 1.0), (2.0, 2.0))
        assert dominates((1.0, 2.0), (1.0, 3.0))
        assert not dominates((1.0, 2.0), (1.0, 2.0))
        assert not dominates((1.0, 5.0), (2.0, 2.0))

    def test_front_example(self):
        fronts = non_dominated_sort([(1, 5), (2, 2), (5, 1), (3, 3)])
        assert fronts == [[(1, 5), (2, 2), (5, 1)], [(3, 3)]]

    def test_infinite_errors_come_last(self):
        items = [(math.inf, 1, "a"), (4.0, 100, "b"), (1.0, 500, "c"), (math.inf, 2, "d")]
        fronts = non_dominated_sort(items)
        assert fronts == [[(1.0, 500, "c"), (4.0, 100, "b")], [(math.inf, 1, "a")], [(math.inf, 2, "d")]]

    def test_ties_break_by_key(self):
        fronts = non_dominated_sort([(1.0, 2, "zz"), (1.0, 2, "aa")])
        assert fronts == [[(1.0, 2, "aa"), (1.0, 2, "zz")]]

    def test_front_members_are_mutually_non_dominated(self):
        rng = np.random.default_rng(0)
        points = [(float(e), float(p)) for e, p in rng.uniform(0, 10, (60, 2))]
        fronts = non_dominated_sort(points)
        assert fronts[0] == pareto_front(points)
        for a in fronts[0]:
            assert not any(dominates(b, a) for b in points)
        for previous, group in zip(fronts, fronts[1:]):
            for b in group:
                assert any(dominates(a, b) for a in previous)


def _peel_fronts(points):
    """Fronts by repeatedly removing every point no remaining point dominates"""
    fronts = []
    for group in ([p for p in points if math.isfinite(p[0])], [p for p in points if not math.isfinite(p[0])]):
        objectives = np.array([p[:2] for p in group], dtype=float).reshape(-1, 2)
        no_worse = (objectives[:, None, :] <= objectives[None, :, :]).all(axis=2)
        better = (objectives[:, None, :] < objectives[None, :, :]).any(axis=2)
        dominance = no_worse & better
        remaining = np.ones(len(group), dtype=bool)
        while remaining.any():
            front = remaining & ~(dominance & remaining[:, None]).any(axis=0)
            fronts.append(sorted(group[i] for i in np.flatnonzero(front)))
            remaining &= ~front
    return fronts


class TestDominanceAgainstBruteForce:
    def test_random_populations(self):
        rng = np.random.default_rng(13)
        for trial in range(500):
            n = int(rng.integers(1, 201))
            errors = rng.integers(0, 40, n) / 8.0
            errors[rng.random(n) < 0.05] = math.inf
            params = rng.integers(1, 60, n)
            points = [(float(e), int(p), f"{i:03d}") for i, (e, p) in enumerate(zip(errors, params))]
            assert non_dominated_sort(points) == _peel_fronts(points), trial


class TestHypervolume:
    def test_staircase_area(self):
        assert hypervolume([(1, 5), (2, 2), (5, 1)], (6, 6)) == 18.0

    def test_points_outside_reference_are_ignored(self):
        assert hypervolume([(7, 1), (math.inf, 0)], (6, 6)) == 0.0

    def test_dominated_points_add_nothing(self):
        assert hypervolume([(1, 1), (2, 2)], (3, 3)) == hypervolume([(1, 1)], (3, 3)) == 4.0

    def test_worst_point(self):
        assert worst_point([(1, 5), (3, 2), (math.inf, 9)]) == (3.0, 5.0)
        assert worst_point([(math.inf, 1)]) is None


class TestThompsonSelection:
    @pytest.fixture
    def setup(self, planted):
        rng = np.random.default_rng(0)
        records = planted.evaluate_many(random_genotype(rng) for _ in range(12))
        ensemble = fit_surrogate(records, SearchConfig(**FAST), seed=0)
        candidates = {}
        while len(candidates) < 20:
            g = random_genotype(rng)
            candidates[g.key] = g
        return ensemble, list(candidates.values())

    def test_selects_k_l_distinct_candidates(self, setup, planted):
        ensemble, candidates = setup
        chosen = thompson_select(ensemble, candidates, 5, np.random.default_rng(1), planted.count_parameters)
        assert len(chosen) == 5
        assert len({g.key for g in chosen}) == 5
        assert all(g in candidates for g in chosen)

    def test_fewer_candidates_than_slots(self, setup, planted):
        ensemble, candidates = setup
        chosen = thompson_select(ensemble, candidates[:3], 5, np.random.default_rng(1), planted.count_parameters)
        assert chosen == candidates[:3]

    def test_seeded(self, setup, planted):
        ensemble, candidates = setup
        a = thompson_select(ensemble, candidates, 6, np.random.default_rng(9), planted.count_parameters)
        b = thompson_select(ensemble, candidates, 6, np.random.default_rng(9), planted.count_parameters)
        assert a == b


class TestSearchLoop:
    def test_monotone_best_and_no_repeats(self, planted):
        cfg = SearchConfig(k_ini=6, k_p=4, k_m=3, k_l=3, t_max=4, seed=2, **FAST)
        result = SearchService(planted, cfg).run()
        assert len(result.history) == 5
        best = [s.best_error for s in result.history]
        assert all(b <= a for a, b in zip(best, best[1:]))
        assert all(count == 1 for count in planted.calls.values())
        assert [s.evaluations for s in result.history] == sorted(s.evaluations for s in result.history)
        assert result.history[0].evaluations == 6
        assert len(result.records) <= 6 + 4 * 3

    def test_front_is_non_dominated(self, planted):
        cfg = SearchConfig(k_ini=8, k_l=4, t_max=3, seed=1, **FAST)
        result = run_search_loop(planted, cfg)
        for a in result.front:
            assert not any(dominates(b.objectives, a.objectives) for b in result.records)
        assert result.best.measured_error == min(r.measured_error for r in result.records)

    def test_rerun_is_identical(self):
        cfg = SearchConfig(k_ini=5, k_l=3, t_max=3, seed=7, **FAST)
        a = SearchService(PlantedEvaluator(), cfg).run()
        b = SearchService(PlantedEvaluator(), cfg).run()
        assert [s.model_dump_json() for s in a.history] == [s.model_dump_json() for s in b.history]

    def test_target_error_stops_early(self, planted):
        cfg = SearchConfig(k_ini=5, t_max=10, target_error=10.0, seed=0, **FAST)
        result = SearchService(planted, cfg).run()
        assert len(result.history) == 1
        assert len(result.records) == 5

    def test_iteration_callback(self, planted):
        seen = []
        cfg = SearchConfig(k_ini=4, k_l=2, t_max=2, seed=0, **FAST)
        SearchService(planted, cfg, on_iteration=lambda snap, timing: seen.append((snap.iteration, timing.iteration))).run()
        assert seen == [(0, 0), (1, 1), (2, 2)]

    def test_failed_candidates_never_reach_the_front(self):
        space = _sixteen_genotype_space()
        failing = [g.key for g in space.enumerate() if g.sm.value == "RevIN"]
        evaluator = PlantedEvaluator(fail_hashes=failing)
        cfg = SearchConfig(k_ini=8, k_l=4, t_max=3, seed=3, **FAST)
        result = SearchService(evaluator, cfg, space).run()
        assert all(r.finite for r in result.front)
        assert all(s.best_error < math.inf for s in result.history)

    def test_small_space_is_exhausted(self, planted):
        pins = {gene: [label] for gene, label in make_genotype().labels().items()}
        pins["hs"] = ["64", "128"]
        cfg = SearchConfig(k_ini=10, t_max=5, seed=0, **FAST)
        result = SearchService(planted, cfg, SearchSpace(pins)).run()
        assert len(result.records) == 2
        assert result.exhausted
        assert result.history[-1].exhausted

    def test_resumed_records_are_not_reevaluated(self, planted):
        rng = np.random.default_rng(4)
        previous = PlantedEvaluator().evaluate_many(random_genotype(rng) for _ in range(5))
        cfg = SearchConfig(k_ini=5, k_l=2, t_max=1, seed=0, **FAST)
        result = SearchService(planted, cfg, initial_records=previous).run()
        assert all(r.genotype_hash not in planted.calls for r in previous)
        assert result.history[0].evaluations == 5


PLANTED_OPTIMUM = make_genotype(
    fsm="Pearson", fst=0.4, dgm="Gaussian", sm="RevIN", fam="TimeFeatures", fem="Decomp",
    cps="TCN", ln=2, hs=128, lr=0.0005, of="SGD", bs=64,
)


class SeparableEvaluator(PlantedEvaluator):
    """Additive per-gene penalty with a unique zero-penalty genotype"""

    @staticmethod
    def planted_error(g: Genotype) -> float:
        target = PLANTED_OPTIMUM.genes()
        error = 0.5
        for i, (gene, value) in enumerate(g.genes().items()):
            error += (0.05 + 0.01 * i) * (value != target[gene])
        return round(error, 6)


@pytest.mark.slow
class TestPlantedLandscape:
    def test_exhaustive_front_of_sixteen_genotypes(self):
        space = _sixteen_genotype_space()
        assert space.size(canonical=True) == 16
        evaluator = PlantedEvaluator()
        cfg = SearchConfig(k_ini=4, k_p=10, k_m=5, k_l=4, p_m=0.5, t_max=20, seed=5, **FAST)
        result = SearchService(evaluator, cfg, space).run()
        assert len(result.records) <= 16
        truth = pareto_front(PlantedEvaluator().evaluate_many(space.enumerate()))
        assert {r.genotype_hash for r in result.front} == {r.genotype_hash for r in truth}

    def test_search_finds_a_planted_optimum(self):
        evaluator = PlantedEvaluator()
        cfg = SearchConfig(k_ini=10, k_l=10, t_max=15, seed=11, ensemble_size=3, ensemble_hidden=32,
                           ensemble_epochs=100)
        result = SearchService(evaluator, cfg).run()
        assert result.history[-1].best_error <= 0.8

    def test_beats_random_search_on_a_separable_objective(self):
        evaluations = []
        for seed in range(20):
            cfg = SearchConfig(k_ini=10, k_p=10, k_m=20, k_l=10, p_m=0.2, t_max=120, seed=seed, target_error=0.5,
                               ensemble_size=2, ensemble_hidden=32, ensemble_epochs=60)
            result = SearchService(SeparableEvaluator(), cfg).run()
            keys = [r.genotype_hash for r in result.records]
            evaluations.append(keys.index(PLANTED_OPTIMUM.key) + 1 if PLANTED_OPTIMUM.key in keys else math.inf)
        # uniform sampling without replacement hits a single optimum at a uniform position
        canonical = space_size(canonical=True)
        random_search = np.random.default_rng(0).integers(1, canonical + 1, 20)
        assert np.median(evaluations) <= 0.5 * np.median(random_search)
