"""
Forecasting with an exported architecture and its trained weights.
"""
import logging
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np
import pandas as pd

from core.exceptions import AllZeroTruth, InsufficientData, ShapeMismatch
from models.frame import TimeSeriesFrame
from models.response import ArchitectureManifest, ForecastResponse, ForecastRow
from nn.assembly import ModelGraph, assemble
from nn.selection import FeatureMask
from services.dataset_service import load_csv, make_windows, preprocess
from services.evaluator_service import mae, wmape
from services.report_service import forecast_svg, load_weights, read_manifest, write_text

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def rebuild_model(manifest: ArchitectureManifest, state: Dict[str, np.ndarray]) -> ModelGraph:
    """Assemble the recorded architecture and load its trained parameters"""
    names = tuple(manifest.feature_names)
    keep = np.array([name in manifest.kept_features for name in names], dtype=bool)
    mask = FeatureMask(keep=keep, scores=keep.astype(np.float64), target_index=names.index(manifest.target_name))
    model = assemble(
        manifest.genotype, manifest.task, seed=manifest.seed, blocks=manifest.blocks, feature_mask=mask,
        feature_std=np.asarray(manifest.feature_std, dtype=np.float64), feature_names=names,
    )
    model.load_state_dict(state)
    return model


def forecast_frame(manifest: ArchitectureManifest, model: ModelGraph,
                   frame: TimeSeriesFrame) -> Tuple[ForecastResponse, pd.DataFrame]:
    """Forecast every window of `frame`; rows are (window, step) pairs"""
    if tuple(frame.feature_names) != tuple(manifest.feature_names):
        raise ShapeMismatch("predict", (frame.n_features,), (len(manifest.feature_names),),
                            detail=f"features {list(frame.feature_names)} differ from {manifest.feature_names}")
    task = manifest.task
    windows = make_windows(frame, task.history, task.horizon)
    if len(windows) == 0:
        raise InsufficientData(f"Data has no window of {task.window_length} consecutive rows")
    arrays = windows.to_arrays(task, manifest.noise, np.asarray(manifest.feature_std, dtype=np.float64))
    pred = model.predict(arrays.inputs, arrays.marks)

    n, horizon = pred.shape
    table = pd.DataFrame({
        "anchor": np.repeat(arrays.anchors, horizon),
        "timestamp": arrays.target_times.ravel(),
        "step": np.tile(np.arange(1, horizon + 1), n),
        "forecast": pred.ravel(),
        "actual": arrays.targets.ravel(),
    })
    try:
        score_wmape = wmape(pred, arrays.targets)
    except AllZeroTruth:
        score_wmape = None
    response = ForecastResponse(
        genotype_hash=manifest.genotype_hash,
        windows=n,
        mae=mae(pred, arrays.targets),
        wmape=score_wmape,
        rows=[
            ForecastRow(anchor=row.anchor, timestamp=row.timestamp, step=int(row.step),
                        forecast=float(row.forecast), actual=float(row.actual))
            for row in table.itertuples(index=False)
        ],
    )
    return response, table


def run_predict(arch_path: PathLike, data_path: PathLike, horizon: int, weights_path: Optional[PathLike] = None,
                out_dir: Optional[PathLike] = None) -> ForecastResponse:
    """Load arch.json + weights, forecast a CSV, write forecast.csv and forecast.svg"""
    arch_path = Path(arch_path)
    manifest = read_manifest(arch_path)
    if horizon != manifest.task.horizon:
        raise ShapeMismatch("predict", (horizon,), (manifest.task.horizon,),
                            detail="requested horizon differs from the trained architecture")
    weights_path = Path(weights_path) if weights_path else arch_path.parent / manifest.weights_file
    model = rebuild_model(manifest, load_weights(weights_path))

    frame = preprocess(load_csv(data_path, target=manifest.target_name))
    response, table = forecast_frame(manifest, model, frame)

    out_dir = Path(out_dir) if out_dir else arch_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "forecast.csv"
    written = table.copy()
    for column in ("anchor", "timestamp"):
        written[column] = pd.to_datetime(written[column]).dt.strftime("%Y-%m-%dT%H:%M:%S")
    written.to_csv(csv_path, index=False)

    first = table[table["step"] == 1]
    write_text(out_dir / "forecast.svg", forecast_svg(
        list(pd.to_datetime(first["timestamp"])), first["actual"].tolist(), first["forecast"].tolist(),
        title=f"One-step forecasts of {manifest.genotype_hash}",
    ))
    logger.info(f"Forecast {response.windows} window(s) with {manifest.genotype_hash}: "
                f"MAE {response.mae:.6g}; wrote {csv_path}")
    return response


def load_forecast_csv(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(path, parse_dates=["anchor", "timestamp"])

