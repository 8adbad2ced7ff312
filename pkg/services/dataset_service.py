"""
Dataset pipeline: CSV ingest, day cleaning, imputation, hourly downsampling,
chronological split, lazy sliding windows and the task-2 future-weather input.
"""
import logging
import math
import re
import threading
from collections.abc import Sequence as SequenceABC
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from core.exceptions import (
    DuplicateTimestamp, EmptyFile, EmptyResult, InvalidSplit, MalformedRow, MissingFuture, SchemaMismatch,
    TooSmall, UnimputableGap,
)
from models.frame import SplitSpec, TaskKind, TaskSpec, TimeSeriesFrame, WindowSample
from models.request import NoiseConfig
from nn.blocks import time_feature_matrix

logger = logging.getLogger(__name__)

TIMESTAMP_COLUMN = "timestamp"
NIGHT_START_HOUR = 21
NIGHT_END_HOUR = 3
MAX_IMPUTE_PASSES = 10
OUTLIER_MAD_FACTOR = 5.0


# Ingest

def load_csv(path: Union[str, Path], schema: Optional[Sequence[str]] = None,
             target: Union[str, int] = 0) -> TimeSeriesFrame:
    """Read `timestamp,<feature_1>,...` into a frame sorted by time.

    Empty or non-numeric cells become missing. `schema`, when given, must match
    the header's feature columns exactly.
    """
    path = Path(path)
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, skip_blank_lines=True)
    except pd.errors.EmptyDataError:
        raise EmptyFile(f"CSV file is empty: {path}")
    except pd.errors.ParserError as e:
        match = re.search(r"line (\d+)", str(e))
        raise MalformedRow(int(match.group(1)) if match else -1, str(e).strip())

    columns = [c.strip() for c in df.columns]
    if not columns or columns[0] != TIMESTAMP_COLUMN:
        raise SchemaMismatch(f"First CSV column must be '{TIMESTAMP_COLUMN}', got {columns[:1]}")
    features = columns[1:]
    if schema is not None and list(schema) != features:
        raise SchemaMismatch(f"CSV features {features} differ from expected {list(schema)}")
    if not features:
        raise SchemaMismatch("CSV has no feature columns")
    if df.empty:
        raise EmptyFile(f"CSV file has no data rows: {path}")
    df.columns = columns

    stamps = pd.to_datetime(df[TIMESTAMP_COLUMN].str.strip(), errors="coerce")
    bad = np.flatnonzero(stamps.isna().to_numpy())
    if bad.size:
        # header is line 1
        raise MalformedRow(int(bad[0]) + 2, f"unparseable timestamp {df[TIMESTAMP_COLUMN].iloc[bad[0]]!r}")
    duplicated = stamps.duplicated()
    if duplicated.any():
        raise DuplicateTimestamp(stamps[duplicated].iloc[0])

    numeric = df[features].apply(lambda col: pd.to_numeric(col.str.strip(), errors="coerce"))
    missing = numeric.isna().to_numpy()
    values = numeric.fillna(0.0).to_numpy(dtype=np.float64)

    order = np.argsort(stamps.to_numpy(), kind="stable")
    if isinstance(target, str):
        if target not in features:
            raise SchemaMismatch(f"Target column '{target}' not found in {features}")
        target = features.index(target)
    frame = TimeSeriesFrame(
        timestamps=pd.DatetimeIndex(stamps.to_numpy()[order]),
        values=values[order],
        feature_names=tuple(features),
        target_index=int(target),
        missing_mask=missing[order],
    )
    logger.info(f"Loaded {frame.n_rows} rows x {frame.n_features} features from {path}")
    return frame


def save_csv(frame: TimeSeriesFrame, path: Union[str, Path]) -> Path:
    """Write a frame in the load_csv format; missing cells are left empty"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df = frame.to_dataframe()
    df.index = df.index.strftime("%Y-%m-%dT%H:%M:%S")
    df.to_csv(path, index=True, index_label=TIMESTAMP_COLUMN, na_rep="")
    return path


# Cleaning

def _day_bounds(timestamps: pd.DatetimeIndex) -> Tuple[np.ndarray, np.ndarray]:
    days = timestamps.normalize().asi8
    starts = np.flatnonzero(np.r_[True, days[1:] != days[:-1]])
    ends = np.r_[starts[1:], len(days)]
    return starts, ends


def _has_outlier_run(values: np.ndarray, missing: np.ndarray, run_limit: int) -> bool:
    observed = values[~missing]
    if observed.size == 0:
        return False
    median = np.median(observed)
    mad = np.median(np.abs(observed - median))
    outlier = values < 0
    if mad > 0:
        outlier = outlier | (np.abs(values - median) > OUTLIER_MAD_FACTOR * mad)
    outlier &= ~missing
    run = 0
    for i in range(values.size):
        if outlier[i] and run > 0 and values[i] == values[i - 1]:
            run += 1
        else:
            run = 1 if outlier[i] else 0
        if run >= run_limit:
            return True
    return False


def clean_days(frame: TimeSeriesFrame, zero_ratio_limit: float = 0.8, outlier_run_limit: int = 10) -> TimeSeriesFrame:
    """Drop calendar days with too many missing/zero targets or a run of repeated outliers"""
    t = frame.target_index
    keep = np.zeros(frame.n_rows, dtype=bool)
    dropped = 0
    for start, end in zip(*_day_bounds(frame.timestamps)):
        target = frame.values[start:end, t]
        missing = frame.missing_mask[start:end, t]
        ratio = (missing.sum() + ((target == 0) & ~missing).sum()) / (end - start)
        if ratio > zero_ratio_limit or _has_outlier_run(target, missing, outlier_run_limit):
            dropped += 1
            continue
        keep[start:end] = True
    if not keep.any():
        raise EmptyResult("Every day was removed by cleaning")
    if dropped:
        logger.info(f"Cleaning removed {dropped} day(s)")
    return frame.take(keep)


def _fill_day(values: np.ndarray, missing: np.ndarray) -> None:
    n = values.size
    for p in range(MAX_IMPUTE_PASSES):
        if not missing.any():
            return
        order = range(n) if p % 2 == 0 else range(n - 1, -1, -1)
        progressed = False
        for i in order:
            if not missing[i]:
                continue
            neighbours = [values[j] for j in (i - 1, i + 1) if 0 <= j < n and not missing[j]]
            if neighbours:
                values[i] = sum(neighbours) / len(neighbours)
                missing[i] = False
                progressed = True
        if not progressed:
            break


def impute(frame: TimeSeriesFrame) -> TimeSeriesFrame:
    """Zero night-time power, then fill gaps with the window-3 mean of observed neighbours"""
    values = frame.values.copy()
    missing = frame.missing_mask.copy()
    t = frame.target_index
    hours = frame.timestamps.hour.to_numpy()
    night = (hours >= NIGHT_START_HOUR) | (hours < NIGHT_END_HOUR)
    values[night, t] = 0.0
    missing[night, t] = False
    for start, end in zip(*_day_bounds(frame.timestamps)):
        for col in np.flatnonzero(missing[start:end].any(axis=0)):
            day_values = values[start:end, col]
            day_missing = missing[start:end, col]
            _fill_day(day_values, day_missing)
            if day_missing.any():
                where = frame.timestamps[start + int(np.flatnonzero(day_missing)[0])]
                raise UnimputableGap(f"No observed neighbour for '{frame.feature_names[col]}' at {where}")
            values[start:end, col] = day_values
            missing[start:end, col] = day_missing
    return frame.replace(values=values, missing_mask=missing)


def downsample_hourly(frame: TimeSeriesFrame) -> TimeSeriesFrame:
    """One row per hour holding the mean of that hour's observed values"""
    df = frame.to_dataframe()
    hourly = df.groupby(df.index.floor("h")).mean()
    missing = hourly.isna().to_numpy()
    return TimeSeriesFrame(
        timestamps=pd.DatetimeIndex(hourly.index),
        values=hourly.fillna(0.0).to_numpy(dtype=np.float64),
        feature_names=frame.feature_names,
        target_index=frame.target_index,
        missing_mask=missing,
    )


def granularity(frame: TimeSeriesFrame) -> pd.Timedelta:
    """Most common spacing between consecutive rows (one hour for a single row)"""
    if frame.n_rows < 2:
        return pd.Timedelta(hours=1)
    diffs, counts = np.unique(np.diff(frame.timestamps.asi8), return_counts=True)
    return pd.Timedelta(int(diffs[np.argmax(counts)]), unit="ns")


def preprocess(frame: TimeSeriesFrame, zero_ratio_limit: float = 0.8, outlier_run_limit: int = 10) -> TimeSeriesFrame:
    """clean_days -> impute -> downsample_hourly for sub-hourly data; hourly data is only imputed"""
    if granularity(frame) < pd.Timedelta(hours=1):
        frame = clean_days(frame, zero_ratio_limit, outlier_run_limit)
        frame = impute(frame)
        frame = downsample_hourly(frame)
        if frame.missing_mask.any():
            frame = impute(frame)
        return frame
    return impute(frame)


# Splitting

def split(frame: TimeSeriesFrame, spec: SplitSpec,
          min_rows: Optional[int] = None) -> Tuple[TimeSeriesFrame, TimeSeriesFrame, TimeSeriesFrame]:
    """Contiguous chronological partition; floor sizes with the remainder going to test"""
    ratios = (spec.train_ratio, spec.val_ratio, spec.test_ratio)
    if any(not 0.0 < r < 1.0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise InvalidSplit(f"Invalid split ratios {ratios}")
    n = frame.n_rows
    n_train = math.floor(n * spec.train_ratio + 1e-9)
    n_val = math.floor(n * spec.val_ratio + 1e-9)
    parts = (frame.take(slice(0, n_train)), frame.take(slice(n_train, n_train + n_val)),
             frame.take(slice(n_train + n_val, n)))
    if min_rows is not None:
        for name, part in zip(("train", "val", "test"), parts):
            if part.n_rows < min_rows:
                raise TooSmall(f"{name} split has {part.n_rows} rows, needs at least {min_rows}")
    return parts


# Windows

def future_noise(horizon: int, std: np.ndarray, sigma0: float, gamma: float, rng_seed: int) -> np.ndarray:
    """Gaussian noise with sigma(h) = sigma0 * exp(gamma * h / T_p) * std, h = 1..T_p"""
    steps = np.arange(1, horizon + 1, dtype=np.float64)
    sigma = sigma0 * np.exp(gamma * steps / horizon)[:, None] * np.asarray(std, dtype=np.float64)[None, :]
    return np.random.default_rng(rng_seed).standard_normal(sigma.shape) * sigma


def window_seed(base: int, start: int) -> int:
    return int(base) * 1_000_003 + int(start)


def to_task2(sample: WindowSample, sigma0: float = 0.05, gamma: float = 1.0, rng_seed: int = 0,
             feature_std: Optional[np.ndarray] = None) -> WindowSample:
    """Append the noisy future weather rows; future power stays exactly zero"""
    if sample.future is None or sample.future_timestamps is None:
        raise MissingFuture(f"Window anchored at {sample.t_anchor} has no future rows")
    if sample.task_kind != TaskKind.TASK1:
        raise ValueError("to_task2 expects a task 1 window")
    std = sample.input.std(axis=0) if feature_std is None else feature_std
    future = sample.future + future_noise(sample.horizon, std, sigma0, gamma, rng_seed)
    future[:, sample.target_index] = 0.0
    return WindowSample(
        input=np.vstack([sample.input, future]),
        target=sample.target,
        t_anchor=sample.t_anchor,
        task_kind=TaskKind.TASK2,
        history=sample.history,
        horizon=sample.horizon,
        target_index=sample.target_index,
        input_timestamps=sample.input_timestamps.append(sample.future_timestamps),
    )


@dataclass(frozen=True)
class WindowArrays:
    """Materialised windows ready for training."""
    inputs: np.ndarray
    targets: np.ndarray
    marks: np.ndarray
    anchors: np.ndarray
    target_times: np.ndarray
    starts: np.ndarray

    def __len__(self) -> int:
        return self.inputs.shape[0]


class WindowSet(SequenceABC):
    """Lazy sliding windows: only start offsets into the frame are stored"""

    def __init__(self, frame: TimeSeriesFrame, history: int, horizon: int, starts: np.ndarray):
        self.frame = frame
        self.history = history
        self.horizon = horizon
        self.starts = np.asarray(starts, dtype=np.int64)

    def __len__(self) -> int:
        return int(self.starts.size)

    def __getitem__(self, i: int) -> WindowSample:
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        s = int(self.starts[i])
        h, p = self.history, self.horizon
        f = self.frame
        return WindowSample(
            input=f.values[s:s + h].copy(),
            target=f.values[s + h:s + h + p, f.target_index].copy(),
            t_anchor=f.timestamps[s + h - 1],
            task_kind=TaskKind.TASK1,
            history=h,
            horizon=p,
            target_index=f.target_index,
            input_timestamps=f.timestamps[s:s + h],
            future=f.values[s + h:s + h + p].copy(),
            future_timestamps=f.timestamps[s + h:s + h + p],
        )

    def to_arrays(self, task: TaskSpec, noise: Optional[NoiseConfig] = None,
                  feature_std: Optional[np.ndarray] = None) -> WindowArrays:
        h, p = self.history, self.horizon
        f = self.frame
        t = f.target_index
        index = self.starts[:, None] + np.arange(h + p)[None, :]
        block = f.values[index] if len(self) else np.zeros((0, h + p, f.n_features))
        times = f.timestamps.to_numpy()[index] if len(self) else np.zeros((0, h + p), dtype="datetime64[ns]")
        targets = block[:, h:, t].copy()
        if task.kind == TaskKind.TASK1:
            inputs = block[:, :h].copy()
            input_times = times[:, :h]
        else:
            noise = noise or NoiseConfig()
            std = f.values.std(axis=0) if feature_std is None else feature_std
            inputs = block.copy()
            for i, s in enumerate(self.starts):
                inputs[i, h:] += future_noise(p, std, noise.sigma0, noise.gamma, window_seed(noise.seed, s))
            inputs[:, h:, t] = 0.0
            input_times = times
        return WindowArrays(
            inputs=inputs,
            targets=targets,
            marks=time_feature_matrix(input_times),
            anchors=times[:, h - 1] if len(self) else np.zeros(0, dtype="datetime64[ns]"),
            target_times=times[:, h:],
            starts=self.starts.copy(),
        )


def make_windows(frame: TimeSeriesFrame, history: int, horizon: int, step: int = 1,
                 freq: Optional[pd.Timedelta] = None) -> WindowSet:
    """Windows of history+horizon consecutive rows that never straddle a calendar gap"""
    if history < 1 or horizon < 1 or step < 1:
        raise ValueError("history, horizon and step must all be >= 1")
    length = history + horizon
    freq = granularity(frame) if freq is None else pd.Timedelta(freq)
    breaks = np.r_[0, np.flatnonzero(np.diff(frame.timestamps.asi8) != freq.value) + 1, frame.n_rows]
    starts = []
    for seg_start, seg_end in zip(breaks[:-1], breaks[1:]):
        if seg_end - seg_start >= length:
            starts.append(np.arange(seg_start, seg_end - length + 1, step))
    starts = np.concatenate(starts) if starts else np.zeros(0, dtype=np.int64)
    return WindowSet(frame, history, horizon, starts)


class DataSplits:
    """Split frames, their windows and train statistics for one task"""

    def __init__(self, task: TaskSpec, train: TimeSeriesFrame, val: TimeSeriesFrame, test: TimeSeriesFrame,
                 noise: Optional[NoiseConfig] = None, step: int = 1):
        self.task = task
        self.noise = noise or NoiseConfig()
        self.frames: Dict[str, TimeSeriesFrame] = {"train": train, "val": val, "test": test}
        self.windows: Dict[str, WindowSet] = {
            name: make_windows(frame, task.history, task.horizon, step) for name, frame in self.frames.items()
        }
        self.feature_std = train.values.std(axis=0)
        self._arrays: Dict[str, WindowArrays] = {}
        self._lock = threading.Lock()

    @property
    def train(self) -> TimeSeriesFrame:
        return self.frames["train"]

    @property
    def val(self) -> TimeSeriesFrame:
        return self.frames["val"]

    @property
    def test(self) -> TimeSeriesFrame:
        return self.frames["test"]

    @property
    def feature_names(self) -> Tuple[str, ...]:
        return self.train.feature_names

    def arrays(self, name: str) -> WindowArrays:
        with self._lock:
            if name not in self._arrays:
                self._arrays[name] = self.windows[name].to_arrays(self.task, self.noise, self.feature_std)
            return self._arrays[name]


def prepare_splits(frame: TimeSeriesFrame, task: TaskSpec, spec: Optional[SplitSpec] = None,
                   noise: Optional[NoiseConfig] = None, step: int = 1) -> DataSplits:
    train, val, test = split(frame, spec or SplitSpec(), min_rows=task.window_length)
    splits = DataSplits(task, train, val, test, noise, step)
    logger.info(
        f"Prepared {task.kind.value} splits: "
        + ", ".join(f"{name}={len(ws)} windows" for name, ws in splits.windows.items())
    )
    return splits
