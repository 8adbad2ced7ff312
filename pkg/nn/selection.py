"""
Train-split feature selection: Pearson threshold filter and greedy mRMR.
"""
import logging
from typing import List

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, model_validator

from models.frame import TimeSeriesFrame
from models.genotype import FeatureSelection

logger = logging.getLogger(__name__)

SCORE_RANGE_EPS = 1e-12


class FeatureMask(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    keep: np.ndarray
    scores: np.ndarray
    target_index: int = 0

    @model_validator(mode="after")
    def _check(self):
        if self.keep.dtype != bool or self.keep.ndim != 1:
            raise ValueError("keep must be a boolean vector")
        if self.scores.shape != self.keep.shape:
            raise ValueError("scores and keep must have equal length")
        if not self.keep[self.target_index]:
            raise ValueError("the target feature must always be kept")
        return self

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.keep)

    @property
    def n_kept(self) -> int:
        return int(self.keep.sum())

    @property
    def kept_target_index(self) -> int:
        """Position of the target among the kept columns"""
        return int(np.count_nonzero(self.keep[:self.target_index]))

    def apply(self, values: np.ndarray) -> np.ndarray:
        return values[..., self.keep]


def _frame(train_frame: TimeSeriesFrame) -> pd.DataFrame:
    return pd.DataFrame(train_frame.values, columns=range(train_frame.n_features))


def abs_correlations(train_frame: TimeSeriesFrame) -> pd.DataFrame:
    """|Pearson r| between all feature pairs; zero-variance columns correlate as 0"""
    corr = _frame(train_frame).corr(method="pearson").abs()
    return corr.fillna(0.0)


def no_filter(train_frame: TimeSeriesFrame) -> FeatureMask:
    d = train_frame.n_features
    return FeatureMask(keep=np.ones(d, dtype=bool), scores=np.ones(d), target_index=train_frame.target_index)


def pearson_select(train_frame: TimeSeriesFrame, threshold: float) -> FeatureMask:
    t = train_frame.target_index
    relevance = abs_correlations(train_frame)[t].to_numpy()
    keep = relevance >= threshold
    keep[t] = True
    relevance = relevance.copy()
    relevance[t] = 1.0
    logger.info(f"Pearson selection kept {int(keep.sum())}/{keep.size} features at threshold {threshold}")
    return FeatureMask(keep=keep, scores=relevance, target_index=t)


def mrmr_select(train_frame: TimeSeriesFrame, threshold: float) -> FeatureMask:
    """Greedy max-relevance min-redundancy selection.

    At each step every remaining candidate is scored with
    |r(f, target)| - mean_s |r(f, s)| over the already selected non-target
    features, and the scores are min-max normalized over those candidates.
    The best one is added while its normalized score stays at or above the
    threshold. When all candidates score the same (a single one left, or
    exact ties) the raw score clipped to [0, 1] is compared instead. Ties go
    to the lower column index.
    """
    t = train_frame.target_index
    corr = abs_correlations(train_frame)
    relevance = corr[t]
    candidates: List[int] = [j for j in range(train_frame.n_features) if j != t]
    selected: List[int] = []
    scores = np.zeros(train_frame.n_features)
    scores[t] = 1.0
    while candidates:
        if selected:
            redundancy = corr.loc[candidates, selected].mean(axis=1)
        else:
            redundancy = pd.Series(0.0, index=candidates)
        raw = relevance.loc[candidates] - redundancy
        lo, hi = raw.min(), raw.max()
        step = (raw - lo) / (hi - lo) if hi - lo > SCORE_RANGE_EPS else raw.clip(0.0, 1.0)
        best = int(step.idxmax())
        if step[best] < threshold:
            break
        scores[best] = step[best]
        selected.append(best)
        candidates.remove(best)
    keep = np.zeros(train_frame.n_features, dtype=bool)
    keep[t] = True
    keep[selected] = True
    logger.info(f"mRMR selection kept {int(keep.sum())}/{keep.size} features at threshold {threshold}")
    return FeatureMask(keep=keep, scores=scores, target_index=t)


def select_features(method: FeatureSelection, threshold: float, train_frame: TimeSeriesFrame) -> FeatureMask:
    if method == FeatureSelection.PEARSON:
        return pearson_select(train_frame, threshold)
    if method == FeatureSelection.MRMR:
        return mrmr_select(train_frame, threshold)
    return no_filter(train_frame)
