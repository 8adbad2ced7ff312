import math
from typing import Dict, Iterable, List, Optional

import pytest

from core.config import parse_run_config
from models.frame import SplitSpec, TaskKind, TaskSpec
from models.genotype import Genotype
from models.request import TrainConfig
from models.response import EvalRecord, EvalStatus
from services.dataset_service import prepare_splits, save_csv
from services.pipeline_service import run_search
from services.synth_service import synth_pv

BASE_GENES = {
    "fsm": "NoFilter", "fst": 0.3, "dgm": "None", "sm": "None", "fam": "None", "fem": "None",
    "cps": "MLP", "ln": 1, "hs": 64, "lr": 0.001, "of": "Adam", "bs": 32,
}


def make_genotype(**genes) -> Genotype:
    return Genotype(**{**BASE_GENES, **genes})


class PlantedEvaluator:
    """Deterministic stand-in evaluator with a known error landscape, no training"""

    def __init__(self, fail_hashes: Iterable[str] = ()):
        self.calls: Dict[str, int] = {}
        self.fail_hashes = set(fail_hashes)

    @staticmethod
    def planted_error(g: Genotype) -> float:
        error = 1.0
        error -= 0.2 * (g.sm.value == "RevIN")
        error -= 0.1 * (g.fem.value == "Decomp")
        error += 0.05 * (g.ln - 1)
        error += 0.01 * (g.bs == 64)
        return round(error, 6)

    def count_parameters(self, g: Genotype) -> int:
        return g.hs * g.ln + (100 if g.fem.value != "None" else 0)

    def evaluate(self, g: Genotype) -> EvalRecord:
        self.calls[g.key] = self.calls.get(g.key, 0) + 1
        if g.key in self.fail_hashes:
            return EvalRecord(genotype=g, genotype_hash=g.key, measured_error=math.inf,
                              param_count=self.count_parameters(g), status=EvalStatus.FAILED, message="planted")
        return EvalRecord(genotype=g, genotype_hash=g.key, measured_error=self.planted_error(g),
                          param_count=self.count_parameters(g))

    def evaluate_many(self, genotypes: Iterable[Genotype]) -> List[EvalRecord]:
        return [self.evaluate(g) for g in genotypes]


@pytest.fixture(scope="session")
def pv_frame():
    return synth_pv(20, seed=7)


@pytest.fixture(scope="session")
def small_task():
    return TaskSpec(kind=TaskKind.TASK1, history=24, horizon=12)


@pytest.fixture(scope="session")
def small_splits(pv_frame, small_task):
    return prepare_splits(pv_frame, small_task, SplitSpec(train_ratio=0.6, val_ratio=0.2, test_ratio=0.2))


@pytest.fixture
def quick_train():
    return TrainConfig(max_epochs=2, patience=1)


@pytest.fixture
def planted():
    return PlantedEvaluator()


TINY_RUN = {
    "data.synth_days": "10", "task.history": "24", "task.horizon": "12",
    "search.k_ini": "3", "search.k_l": "2", "search.t_max": "1",
    "search.ensemble_size": "2", "search.ensemble_hidden": "8", "search.ensemble_epochs": "10",
    "train.max_epochs": "1", "space.cps": "MLP", "space.ln": "1", "space.hs": "64",
}


def write_run_file(path, extra: Optional[Dict[str, str]] = None) -> None:
    lines = [f"{key} = {value}" for key, value in {**TINY_RUN, **(extra or {})}.items()]
    path.write_text("\n".join(lines) + "\n")


@pytest.fixture(scope="session")
def search_run(tmp_path_factory):
    """A finished tiny search: (config, result, output directory)"""
    out = tmp_path_factory.mktemp("run")
    cfg = parse_run_config({**TINY_RUN, "output_dir": str(out)})
    return cfg, run_search(cfg), out


@pytest.fixture(scope="session")
def station_csv(tmp_path_factory):
    return save_csv(synth_pv(3, seed=1), tmp_path_factory.mktemp("data") / "station.csv")
