from enum import Enum
from typing import Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator


class TaskKind(str, Enum):
    TASK1 = "task1"
    TASK2 = "task2"


class TaskSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: TaskKind = Field(TaskKind.TASK1, description="task1: history only; task2: history plus future weather")
    history: int = Field(96, ge=1, description="Historical sequence length T_s")
    horizon: int = Field(12, ge=1, description="Forecast horizon T_p")

    @property
    def input_length(self) -> int:
        return self.history + self.horizon if self.kind == TaskKind.TASK2 else self.history

    @property
    def window_length(self) -> int:
        return self.history + self.horizon


class SplitSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    train_ratio: float = Field(0.6, gt=0.0, lt=1.0)
    val_ratio: float = Field(0.2, gt=0.0, lt=1.0)
    test_ratio: float = Field(0.2, gt=0.0, lt=1.0)

    @model_validator(mode="after")
    def _sums_to_one(self):
        total = self.train_ratio + self.val_ratio + self.test_ratio
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"split ratios must sum to 1, got {total}")
        return self


class TimeSeriesFrame(BaseModel):
    """Timestamped multivariate series; the target column is PV power."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    timestamps: pd.DatetimeIndex
    values: np.ndarray
    feature_names: Tuple[str, ...]
    target_index: int = 0
    missing_mask: np.ndarray

    @model_validator(mode="before")
    @classmethod
    def _coerce(cls, data):
        if not isinstance(data, dict):
            return data
        data = dict(data)
        data["timestamps"] = pd.DatetimeIndex(data["timestamps"])
        values = np.asarray(data["values"], dtype=np.float64)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        data["values"] = values
        data["feature_names"] = tuple(data["feature_names"])
        mask = data.get("missing_mask")
        data["missing_mask"] = np.zeros(values.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        return data

    @model_validator(mode="after")
    def _check(self):
        rows, cols = self.values.shape
        if len(self.timestamps) != rows:
            raise ValueError(f"{len(self.timestamps)} timestamps for {rows} rows")
        if len(self.feature_names) != cols:
            raise ValueError(f"{len(self.feature_names)} feature names for {cols} columns")
        if self.missing_mask.shape != self.values.shape:
            raise ValueError("missing_mask shape differs from values")
        if not 0 <= self.target_index < cols:
            raise ValueError(f"target_index {self.target_index} out of range for {cols} features")
        if rows > 1 and not (np.diff(self.timestamps.asi8) > 0).all():
            raise ValueError("timestamps must be strictly increasing")
        return self

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    @property
    def target_name(self) -> str:
        return self.feature_names[self.target_index]

    @property
    def target(self) -> np.ndarray:
        return self.values[:, self.target_index]

    def replace(self, values: Optional[np.ndarray] = None, missing_mask: Optional[np.ndarray] = None,
                timestamps: Optional[pd.DatetimeIndex] = None) -> "TimeSeriesFrame":
        return TimeSeriesFrame(
            timestamps=self.timestamps if timestamps is None else timestamps,
            values=self.values if values is None else values,
            feature_names=self.feature_names,
            target_index=self.target_index,
            missing_mask=self.missing_mask if missing_mask is None else missing_mask,
        )

    def take(self, rows) -> "TimeSeriesFrame":
        """Row subset by slice, integer index or boolean mask; order is preserved"""
        return self.replace(values=self.values[rows], missing_mask=self.missing_mask[rows],
                            timestamps=self.timestamps[rows])

    def to_dataframe(self) -> pd.DataFrame:
        df = pd.DataFrame(np.where(self.missing_mask, np.nan, self.values),
                          index=self.timestamps, columns=list(self.feature_names))
        df.index.name = "timestamp"
        return df


class WindowSample(BaseModel):
    """One (input sequence, target sequence) pair cut from a frame."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    input: np.ndarray
    target: np.ndarray
    t_anchor: pd.Timestamp
    task_kind: TaskKind
    history: int
    horizon: int
    target_index: int
    input_timestamps: pd.DatetimeIndex
    future: Optional[np.ndarray] = Field(None, description="The T_p source rows after the anchor, used by task 2")
    future_timestamps: Optional[pd.DatetimeIndex] = None

    @model_validator(mode="after")
    def _check(self):
        expected = self.history + self.horizon if self.task_kind == TaskKind.TASK2 else self.history
        if self.input.ndim != 2 or self.input.shape[0] != expected:
            raise ValueError(f"input has {self.input.shape[0]} rows, expected {expected} for {self.task_kind.value}")
        if self.target.shape != (self.horizon,):
            raise ValueError(f"target length {self.target.shape} differs from horizon {self.horizon}")
        if self.task_kind == TaskKind.TASK2 and np.any(self.input[self.history:, self.target_index] != 0.0):
            raise ValueError("future power must stay zero in task 2 inputs")
        if len(self.input_timestamps) != expected:
            raise ValueError("input_timestamps length differs from input rows")
        if self.future is not None and self.future.shape != (self.horizon, self.input.shape[1]):
            raise ValueError("future rows must be horizon x D")
        return self
