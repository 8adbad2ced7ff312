import numpy as np
import pandas as pd
import pytest

from models.frame import TimeSeriesFrame
from models.genotype import FeatureSelection
from nn.selection import FeatureMask, abs_correlations, mrmr_select, no_filter, pearson_select, select_features


@pytest.fixture
def frame():
    rng = np.random.default_rng(0)
    n = 500
    target = rng.standard_normal(n)
    close = target + 0.1 * rng.standard_normal(n)
    noise = rng.standard_normal(n)
    values = np.column_stack([noise, target, close, close, np.full(n, 4.0)])
    return TimeSeriesFrame(
        timestamps=pd.date_range("2023-01-01", periods=n, freq="h"),
        values=values,
        feature_names=("noise", "power", "close", "close_copy", "flat"),
        target_index=1,
    )


class TestFeatureSelection:
    def test_no_filter_keeps_everything(self, frame):
        mask = no_filter(frame)
        assert mask.keep.all()
        assert mask.n_kept == 5

    def test_pearson_threshold(self, frame):
        mask = pearson_select(frame, 0.5)
        assert mask.keep.tolist() == [False, True, True, True, False]
        assert mask.kept_target_index == 0

    def test_zero_variance_column_correlates_as_zero(self, frame):
        corr = abs_correlations(frame)
        assert corr.loc[4, 1] == 0.0
        assert not corr.isna().any().any()

    def test_target_always_kept(self, frame):
        for method in FeatureSelection:
            mask = select_features(method, 0.5, frame)
            assert mask.keep[frame.target_index]

    def test_apply_selects_columns(self, frame):
        mask = pearson_select(frame, 0.5)
        assert mask.apply(frame.values).shape == (frame.n_rows, 3)
        assert mask.indices.tolist() == [1, 2, 3]

    def test_mask_must_keep_target(self):
        with pytest.raises(ValueError):
            FeatureMask(keep=np.array([False, True]), scores=np.zeros(2), target_index=0)


def _frame_of(values: np.ndarray, target_index: int = 0) -> TimeSeriesFrame:
    n, d = values.shape
    return TimeSeriesFrame(
        timestamps=pd.date_range("2023-01-01", periods=n, freq="h"),
        values=values,
        feature_names=tuple(f"f{j}" for j in range(d)),
        target_index=target_index,
    )


def _textbook_r(a: np.ndarray, b: np.ndarray) -> float:
    da, db = a - a.mean(), b - b.mean()
    return float(np.sum(da * db) / np.sqrt(np.sum(da * da) * np.sum(db * db)))


def _reference_mrmr(values: np.ndarray, target: int, threshold: float) -> list:
    d = values.shape[1]
    corr = [[abs(_textbook_r(values[:, i], values[:, j])) for j in range(d)] for i in range(d)]
    candidates = [j for j in range(d) if j != target]
    selected = []
    while candidates:
        raw = []
        for f in candidates:
            redundancy = sum(corr[f][s] for s in selected) / len(selected) if selected else 0.0
            raw.append(corr[f][target] - redundancy)
        lo, hi = min(raw), max(raw)
        if hi - lo > 1e-12:
            normalized = [(r - lo) / (hi - lo) for r in raw]
        else:
            normalized = [min(max(r, 0.0), 1.0) for r in raw]
        best = max(range(len(candidates)), key=lambda k: (normalized[k], -candidates[k]))
        if normalized[best] < threshold:
            break
        selected.append(candidates.pop(best))
    return sorted(selected)


def _correlated_columns(seed: int, d: int, n: int = 300) -> np.ndarray:
    rng = np.random.default_rng(seed)
    target = rng.standard_normal(n)
    columns = [target]
    for _ in range(d - 1):
        weight = rng.uniform(-1.0, 1.0)
        columns.append(weight * target + rng.uniform(0.2, 1.5) * rng.standard_normal(n))
    return np.column_stack(columns)


class TestPearson:
    def test_scores_match_textbook_correlation(self):
        values = _correlated_columns(3, 5)
        mask = pearson_select(_frame_of(values), 0.3)
        for j in range(1, 5):
            assert mask.scores[j] == pytest.approx(abs(_textbook_r(values[:, j], values[:, 0])), abs=1e-12)

    def test_sign_does_not_matter(self):
        target = np.random.default_rng(1).standard_normal(100)
        mask = pearson_select(_frame_of(np.column_stack([target, target, -target])), 0.5)
        assert mask.keep.tolist() == [True, True, True]

    def test_constant_feature_is_dropped(self):
        target = np.random.default_rng(2).standard_normal(100)
        mask = pearson_select(_frame_of(np.column_stack([target, np.full(100, 7.0)])), 0.3)
        assert mask.scores[1] == 0.0
        assert mask.keep.tolist() == [True, False]


class TestMRMR:
    @pytest.mark.parametrize("seed", range(30))
    @pytest.mark.parametrize("threshold", [0.3, 0.4, 0.5])
    def test_matches_reference_selection(self, seed, threshold):
        d = 2 + seed % 4
        target = seed % d
        values = _correlated_columns(seed, d)
        mask = mrmr_select(_frame_of(values, target), threshold)
        expected = sorted(set(_reference_mrmr(values, target, threshold)) | {target})
        assert mask.indices.tolist() == expected

    def test_best_candidate_normalizes_to_one(self):
        rng = np.random.default_rng(0)
        n = 2000
        target = rng.standard_normal(n)
        strong = 0.45 * target + np.sqrt(1 - 0.45 ** 2) * rng.standard_normal(n)
        weak = 0.05 * target + np.sqrt(1 - 0.05 ** 2) * rng.standard_normal(n)
        mask = mrmr_select(_frame_of(np.column_stack([target, strong, weak])), 0.5)
        assert mask.keep.tolist() == [True, True, False]
        assert mask.scores[1] == 1.0

    def test_redundant_copy_is_dropped(self):
        rng = np.random.default_rng(4)
        n = 1000
        target = rng.standard_normal(n)
        first = target + 0.3 * rng.standard_normal(n)
        other = target + 0.5 * rng.standard_normal(n)
        mask = mrmr_select(_frame_of(np.column_stack([target, first, first, other])), 0.3)
        assert mask.keep[0] and mask.keep[3]
        assert mask.keep[1] != mask.keep[2]

    def test_uninformative_features_leave_only_the_target(self):
        target = np.random.default_rng(5).standard_normal(50)
        values = np.column_stack([target, np.full(50, 1.0), np.full(50, -2.0)])
        assert mrmr_select(_frame_of(values), 0.3).keep.tolist() == [True, False, False]

    def test_target_only_frame(self):
        values = np.random.default_rng(6).standard_normal((40, 1))
        assert mrmr_select(_frame_of(values), 0.5).keep.tolist() == [True]
