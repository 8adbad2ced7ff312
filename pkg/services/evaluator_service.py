"""
Candidate evaluation: train on the train split, score MAE on validation,
count parameters, cache by canonical genotype hash.
"""
import hashlib
import logging
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

import numpy as np

from core.exceptions import AllZeroTruth, InsufficientData, LengthMismatch, NonFiniteLoss
from models.genotype import FeatureSelection, Genotype
from models.request import BlockConfig, TrainConfig
from models.response import EpochStats, EvalRecord, EvalStatus, HoldoutReportEntry
from nn.assembly import ModelGraph, assemble
from nn.autodiff import Tensor, absolute, backward, forward, mean, sub
from nn.optim import make_optimizer
from nn.selection import FeatureMask, select_features
from services.dataset_service import DataSplits, WindowArrays
from services.search_service import dominates

logger = logging.getLogger(__name__)


# Metrics

def mae(pred, truth) -> float:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.size != truth.size:
        raise LengthMismatch(f"mae: {pred.size} predictions for {truth.size} targets")
    if pred.size == 0:
        raise LengthMismatch("mae: empty inputs")
    return float(np.mean(np.abs(pred - truth)))


def wmape(pred, truth) -> float:
    """Weighted MAPE with weights |y|: sum |y| |yhat - y| / sum y^2"""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.size != truth.size:
        raise LengthMismatch(f"wmape: {pred.size} predictions for {truth.size} targets")
    denominator = float(np.sum(truth * truth))
    if denominator == 0.0:
        raise AllZeroTruth("wmape: every target value is zero")
    return float(np.sum(np.abs(truth) * np.abs(pred - truth)) / denominator)


def l1_loss(pred: Tensor, truth: np.ndarray) -> Tensor:
    return mean(absolute(sub(pred, truth)))


# Training

class EarlyStopping:
    """Stops after `patience` consecutive epochs without a strict improvement"""

    def __init__(self, patience: int = 3):
        if patience < 1:
            raise ValueError("patience must be >= 1")
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def step(self, epoch: int, value: float) -> bool:
        if value < self.best:
            self.best = value
            self.best_epoch = epoch
            self.bad_epochs = 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


@dataclass
class TrainOutcome:
    history: List[EpochStats] = field(default_factory=list)
    best_epoch: int = 0
    best_val: float = math.inf

    @property
    def epochs_run(self) -> int:
        return len(self.history)


def score(model: ModelGraph, arrays: WindowArrays) -> float:
    """Validation MAE over every window and horizon step, eval mode"""
    return mae(model.predict(arrays.inputs, arrays.marks), arrays.targets)


def train(model: ModelGraph, train_arrays: WindowArrays, val_arrays: WindowArrays, cfg: TrainConfig) -> TrainOutcome:
    """Mini-batch L1 training with early stopping; the best epoch's parameters are restored"""
    if len(train_arrays) == 0 or len(val_arrays) == 0:
        raise InsufficientData("Training needs at least one train and one validation window")
    rng = np.random.default_rng(cfg.seed)
    optimizer = make_optimizer(cfg.optimizer, model.graph.parameters, cfg.lr)
    bound = model.feed(train_arrays.inputs, train_arrays.marks)
    n = len(train_arrays)
    stopper = EarlyStopping(cfg.patience)
    outcome = TrainOutcome()
    best_state = model.state_dict()

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = {name: value[idx] for name, value in bound.items()}
            pred = forward(model.graph, batch, train=True, rng=rng)["forecast"]
            loss = l1_loss(pred, train_arrays.targets[idx])
            value = loss.item()
            if not math.isfinite(value):
                raise NonFiniteLoss(f"Non-finite training loss at epoch {epoch}")
            optimizer.step(backward(model.graph, loss))
            losses.append(value)

        val_loss = score(model, val_arrays)
        if not math.isfinite(val_loss):
            raise NonFiniteLoss(f"Non-finite validation loss at epoch {epoch}")
        outcome.history.append(EpochStats(epoch=epoch, train_loss=float(np.mean(losses)), val_loss=val_loss))
        if stopper.step(epoch, val_loss):
            best_state = model.state_dict()
        if stopper.should_stop:
            break

    model.load_state_dict(best_state)
    outcome.best_epoch = stopper.best_epoch
    outcome.best_val = stopper.best
    return outcome


def derive_seed(genotype_hash: str, run_seed: int) -> int:
    """Per-(genotype, run) seed: reproducible and distinct across genotypes"""
    digest = hashlib.sha256(f"{genotype_hash}:{run_seed}".encode("ascii")).hexdigest()
    return int(digest[:8], 16)


class EvaluatorService:
    """Caching evaluator; each distinct canonical genotype is trained at most once"""

    def __init__(self, splits: DataSplits, train_cfg: Optional[TrainConfig] = None,
                 blocks: Optional[BlockConfig] = None, seed: int = 0, workers: int = 1,
                 log_path: Optional[Union[str, Path]] = None):
        self.splits = splits
        self.train_cfg = train_cfg or TrainConfig()
        self.blocks = blocks or BlockConfig()
        self.seed = seed
        self.workers = max(1, workers)
        self.log_path = Path(log_path) if log_path else None
        self.train_invocations = 0
        self._cache: Dict[str, EvalRecord] = {}
        self._order: List[str] = []
        self._pending: Dict[str, threading.Event] = {}
        self._aborted: Dict[str, BaseException] = {}
        self._counts: Dict[str, int] = {}
        self._masks: Dict[Tuple[FeatureSelection, float], FeatureMask] = {}
        self._weights: Dict[str, Tuple[EvalRecord, Dict[str, np.ndarray]]] = {}
        self._lock = threading.Lock()
        self._log_lock = threading.Lock()

    # cache views

    def __len__(self) -> int:
        return len(self._cache)

    def __contains__(self, g: Genotype) -> bool:
        return g.key in self._cache

    @property
    def records(self) -> List[EvalRecord]:
        with self._lock:
            return [self._cache[key] for key in self._order]

    def get(self, g: Genotype) -> Optional[EvalRecord]:
        return self._cache.get(g.key)

    # assembly

    def feature_mask(self, g: Genotype) -> FeatureMask:
        key = (g.fsm, g.fst)
        with self._lock:
            if key not in self._masks:
                self._masks[key] = select_features(g.fsm, g.fst, self.splits.train)
            return self._masks[key]

    def build(self, g: Genotype, seed: Optional[int] = None, shape_only: bool = False) -> ModelGraph:
        return assemble(
            g, self.splits.task, seed=derive_seed(g.key, self.seed) if seed is None else seed,
            blocks=self.blocks, shape_only=shape_only, feature_mask=self.feature_mask(g),
            feature_std=self.splits.feature_std, feature_names=self.splits.feature_names,
        )

    def count_parameters(self, g: Genotype) -> int:
        """Exact parameter count from shapes alone, no training"""
        key = g.key
        if key not in self._counts:
            self._counts[key] = self.build(g, seed=0, shape_only=True).param_count()
        return self._counts[key]

    def train_config(self, g: Genotype) -> TrainConfig:
        return self.train_cfg.model_copy(update={
            "lr": g.lr, "optimizer": g.of, "batch_size": g.bs, "seed": derive_seed(g.key, self.seed),
        })

    def fit(self, g: Genotype) -> Tuple[ModelGraph, TrainOutcome]:
        model = self.build(g)
        outcome = train(model, self.splits.arrays("train"), self.splits.arrays("val"), self.train_config(g))
        return model, outcome

    # evaluation

    def evaluate(self, g: Genotype) -> EvalRecord:
        key = g.key
        with self._lock:
            if key in self._cache:
                return self._cache[key]
            waiter = self._pending.get(key)
            if waiter is None:
                self._pending[key] = threading.Event()
                self._aborted.pop(key, None)
        if waiter is not None:
            waiter.wait()
            with self._lock:
                record = self._cache.get(key)
                error = self._aborted.get(key)
            if record is not None:
                return record
            if error is not None:
                raise error
            return self.evaluate(g)

        record = None
        try:
            record = self._evaluate_uncached(g)
        except BaseException as e:
            with self._lock:
                self._aborted[key] = e
            raise
        finally:
            with self._lock:
                if record is not None:
                    self._cache[key] = record
                    self._order.append(key)
                self._pending.pop(key).set()
        self._append_log(record)
        return record

    def evaluate_many(self, genotypes: Iterable[Genotype]) -> List[EvalRecord]:
        genotypes = list(genotypes)
        if self.workers == 1 or len(genotypes) < 2:
            return [self.evaluate(g) for g in genotypes]
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            return list(pool.map(self.evaluate, genotypes))

    def _evaluate_uncached(self, g: Genotype) -> EvalRecord:
        key = g.key
        with self._lock:
            self.train_invocations += 1
        started = time.perf_counter()
        logger.info(f"Evaluating {key}: {g.labels()}")
        count = 0
        try:
            count = self.count_parameters(g)
            model, outcome = self.fit(g)
            record = EvalRecord(
                genotype=g, genotype_hash=key, measured_error=outcome.best_val, param_count=count,
                epochs_run=outcome.epochs_run, best_epoch=outcome.best_epoch, history=outcome.history,
                wall_seconds=time.perf_counter() - started,
            )
            self._retain(record, model.state_dict())
            logger.info(f"Evaluated {key}: error={record.measured_error:.6g} params={count} "
                        f"epochs={record.epochs_run}")
            return record
        except NonFiniteLoss as e:
            logger.warning(f"Evaluation of {key} diverged: {str(e)}")
            status, message = EvalStatus.DIVERGED, str(e)
        except Exception as e:
            logger.error(f"Evaluation of {key} failed: {str(e)}")
            status, message = EvalStatus.FAILED, str(e)
        return EvalRecord(
            genotype=g, genotype_hash=key, measured_error=math.inf, param_count=count,
            wall_seconds=time.perf_counter() - started, status=status, message=message,
        )

    # trained weights

    def _retain(self, record: EvalRecord, state: Dict[str, np.ndarray]) -> None:
        """Keep weights of currently non-dominated records only"""
        with self._lock:
            if any(dominates(kept.objectives, record.objectives) for kept, _ in self._weights.values()):
                return
            for key in [k for k, (kept, _) in self._weights.items() if dominates(record.objectives, kept.objectives)]:
                del self._weights[key]
            self._weights[record.genotype_hash] = (record, state)

    def trained_model(self, g: Genotype) -> ModelGraph:
        """Trained network of an evaluated genotype; retrains deterministically when weights were dropped"""
        key = g.key
        with self._lock:
            kept = self._weights.get(key)
        if kept is not None:
            model = self.build(g)
            model.load_state_dict(kept[1])
            return model
        logger.info(f"Retraining {key} to recover its weights")
        model, _ = self.fit(g)
        return model

    # record log

    def _append_log(self, record: EvalRecord) -> None:
        if self.log_path is None:
            return
        with self._log_lock:
            self.log_path.parent.mkdir(parents=True, exist_ok=True)
            with self.log_path.open("a", encoding="utf-8") as handle:
                handle.write(record.model_dump_json() + "\n")

    def resume(self, records: Iterable[EvalRecord]) -> int:
        """Seed the cache from a previous run's record log; no training happens"""
        added = 0
        with self._lock:
            for record in records:
                if record.genotype_hash not in self._cache:
                    self._cache[record.genotype_hash] = record
                    self._order.append(record.genotype_hash)
                    added += 1
        logger.info(f"Resumed {added} evaluation record(s)")
        return added

    # held-out scoring

    def test_report(self, records: Iterable[EvalRecord]) -> List[HoldoutReportEntry]:
        """Re-score finite records on the test split with MAE and WMAPE"""
        arrays = self.splits.arrays("test")
        entries = []
        for record in records:
            if not record.finite:
                continue
            model = self.trained_model(record.genotype)
            pred = model.predict(arrays.inputs, arrays.marks)
            try:
                test_wmape = wmape(pred, arrays.targets)
            except AllZeroTruth:
                test_wmape = None
            entries.append(HoldoutReportEntry(
                genotype_hash=record.genotype_hash, genotype=record.genotype,
                measured_error=record.measured_error, param_count=record.param_count,
                test_mae=mae(pred, arrays.targets), test_wmape=test_wmape,
            ))
        return entries


def load_log(path: Union[str, Path]) -> List[EvalRecord]:
    """Parse an evaluation log; a truncated final line from a crash is skipped"""
    path = Path(path)
    if not path.exists():
        return []
    records = []
    lines = path.read_text(encoding="utf-8").splitlines()
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            records.append(EvalRecord.model_validate_json(line))
        except ValueError as e:
            if number == len(lines):
                logger.warning(f"Skipping truncated record at {path}:{number}")
                continue
            raise
    return records
