"""
End-to-end runs driven by a RunConfig: search, baselines and task comparison.
"""
import json
import logging
from pathlib import Path
from typing import Dict, List, Optional

from core.exceptions import ConfigError
from models.frame import TaskKind, TimeSeriesFrame
from models.request import RunConfig
from models.response import ArchitectureManifest, BaselineEntry, EvalRecord, IterationSnapshot, IterationTiming
from services.baseline_service import run_baselines
from services.dataset_service import DataSplits, load_csv, prepare_splits, preprocess
from services.evaluator_service import EvaluatorService, derive_seed, load_log
from services.report_service import (
    append_jsonl, convergence_svg, export_weights, write_baselines_csv, write_manifest, write_pareto_csv,
    write_test_report, write_text,
)
from services.search_service import SearchResult, SearchService
from services.search_space import SearchSpace
from services.synth_service import synth_pv

logger = logging.getLogger(__name__)

EVALUATION_LOG = "evaluations.jsonl"


def load_frame(cfg: RunConfig) -> TimeSeriesFrame:
    """The configured CSV (or synthetic data), preprocessed to clean hourly rows"""
    if cfg.data.path is None:
        frame = synth_pv(cfg.data.synth_days, seed=cfg.seed)
    else:
        path = Path(cfg.data.path)
        if not path.is_file():
            raise ConfigError(f"Data file not found: {path}")
        frame = load_csv(path, schema=cfg.data.features, target=cfg.data.target)
    return preprocess(frame, cfg.data.zero_ratio_limit, cfg.data.outlier_run_limit)


def prepare(cfg: RunConfig, frame: Optional[TimeSeriesFrame] = None) -> DataSplits:
    frame = load_frame(cfg) if frame is None else frame
    return prepare_splits(frame, cfg.task, cfg.split, cfg.noise, cfg.data.step)


def build_evaluator(cfg: RunConfig, splits: DataSplits, log_path: Optional[Path] = None) -> EvaluatorService:
    return EvaluatorService(splits, cfg.train, cfg.blocks, seed=cfg.seed, workers=cfg.workers, log_path=log_path)


def architecture_manifest(record: EvalRecord, evaluator: EvaluatorService, cfg: RunConfig,
                          weights_file: str = "weights.bin") -> ArchitectureManifest:
    splits = evaluator.splits
    mask = evaluator.feature_mask(record.genotype)
    names = list(splits.feature_names)
    return ArchitectureManifest(
        genotype=record.genotype,
        genotype_hash=record.genotype_hash,
        task=cfg.task,
        noise=cfg.noise,
        blocks=cfg.blocks,
        feature_names=names,
        kept_features=[name for name, keep in zip(names, mask.keep) if keep],
        target_name=splits.train.target_name,
        feature_std=[float(v) for v in splits.feature_std],
        measured_error=record.measured_error,
        param_count=record.param_count,
        seed=derive_seed(record.genotype_hash, evaluator.seed),
        weights_file=weights_file,
    )


def export_architecture(record: EvalRecord, evaluator: EvaluatorService, cfg: RunConfig, out_dir: Path) -> Path:
    """architectures/<hash>/ with arch.json, weights.bin and weights.json"""
    directory = out_dir / "architectures" / record.genotype_hash
    model = evaluator.trained_model(record.genotype)
    export_weights(model.state_dict(), directory)
    return write_manifest(directory / "arch.json", architecture_manifest(record, evaluator, cfg))


def _reset(paths: List[Path]) -> None:
    for path in paths:
        if path.exists():
            path.unlink()


def run_search(cfg: RunConfig, resume: bool = False, frame: Optional[TimeSeriesFrame] = None) -> SearchResult:
    """Dataset pipeline, search, then every artifact of the run"""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / EVALUATION_LOG
    history_path = out / "history.jsonl"
    timings_path = out / "timings.jsonl"
    _reset([history_path, timings_path] + ([] if resume else [log_path]))

    splits = prepare(cfg, frame)
    evaluator = build_evaluator(cfg, splits, log_path)
    initial = load_log(log_path) if resume else []
    evaluator.resume(initial)

    def on_iteration(snapshot: IterationSnapshot, timing: IterationTiming) -> None:
        append_jsonl(history_path, snapshot)
        append_jsonl(timings_path, timing)

    service = SearchService(evaluator, cfg.search, SearchSpace.from_pins(cfg.space), initial, on_iteration)
    result = service.run()

    front = [r for r in result.front if r.finite]
    write_pareto_csv(out / "pareto.csv", front)
    write_text(out / "convergence.svg", convergence_svg(result.history))
    for record in front:
        export_architecture(record, evaluator, cfg, out)
    best = result.best
    if best is not None:
        write_manifest(out / "best_arch.json", architecture_manifest(
            best, evaluator, cfg, weights_file=f"architectures/{best.genotype_hash}/weights.bin"))
    write_test_report(out / "test_report.json", evaluator.test_report(front))
    logger.info(f"Search finished: {len(result.records)} evaluated, {len(front)} on the front, "
                f"artifacts in {out}")
    return result


def run_baseline_suite(cfg: RunConfig, names: Optional[List[str]] = None,
                       frame: Optional[TimeSeriesFrame] = None) -> List[BaselineEntry]:
    out = Path(cfg.output_dir)
    evaluator = build_evaluator(cfg, prepare(cfg, frame))
    entries = run_baselines(evaluator, names)
    write_baselines_csv(out / "baselines.csv", entries)
    return entries


def run_compare(cfg: RunConfig, frame: Optional[TimeSeriesFrame] = None) -> Dict[str, float]:
    """Same-budget searches for task 1 and task 2 on the same data"""
    out = Path(cfg.output_dir)
    frame = load_frame(cfg) if frame is None else frame
    best: Dict[str, float] = {}
    for kind in (TaskKind.TASK1, TaskKind.TASK2):
        task_cfg = cfg.model_copy(update={
            "task": cfg.task.model_copy(update={"kind": kind}),
            "output_dir": out / kind.value,
        })
        result = run_search(task_cfg, frame=frame)
        best[kind.value] = result.best.measured_error if result.best else float("inf")
    e1, e2 = best[TaskKind.TASK1.value], best[TaskKind.TASK2.value]
    summary = {
        "task1_best_error": e1,
        "task2_best_error": e2,
        "relative_reduction": (e1 - e2) / e1 if e1 > 0 and e1 != float("inf") else 0.0,
    }
    out.mkdir(parents=True, exist_ok=True)
    write_text(out / "compare.json", json.dumps(summary, indent=2))
    logger.info(f"Task comparison: {summary}")
    return summary
