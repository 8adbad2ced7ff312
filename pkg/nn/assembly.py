"""
Genotype -> trainable forecasting network.

Pipeline order: feature mask -> training noise -> stationarization -> time
features -> feature extraction -> core structure (on the seasonal stream when
decomposing) + trend branch -> aggregate head -> RevIN denormalization.
"""
import logging
from typing import Dict, Optional, Tuple

import numpy as np

from core.exceptions import InvalidOption, ShapeMismatch
from models.frame import TaskSpec, TimeSeriesFrame
from models.genotype import (
    GENE_NAMES, FeatureExtraction, Generalization, Genotype, Stationarization, TimeFeatures, coerce_option,
)
from models.request import BlockConfig, TrainConfig
from nn.autodiff import Context, Graph, Tensor, add, forward, reshape
from nn.blocks import (
    DAIN, AggregateHead, Block, Decomposition, FrequencyMix, GaussianNoise, LinearEmbed, ParamFactory,
    RevIN, TIME_FEATURE_COUNT, TimeFeatureMix, TrendLinear, append_marks, build_cps,
)
from nn.selection import FeatureMask, select_features

logger = logging.getLogger(__name__)


class ForecastNetwork(Block):
    kind = "ForecastNetwork"

    def __init__(self, genotype: Genotype, steps_in: int, horizon: int, n_features: int, target_index: int,
                 feature_std: np.ndarray, factory: ParamFactory, blocks: BlockConfig):
        super().__init__()
        g = genotype
        self.target_index = target_index
        self.horizon = horizon
        self.noise = GaussianNoise(feature_std, blocks.noise_sigma_frac) if g.dgm == Generalization.GAUSSIAN else None

        self.stationarizer: Optional[Block] = None
        if g.sm == Stationarization.REVIN:
            self.stationarizer = self.add_child("revin", RevIN(n_features, factory))
        elif g.sm == Stationarization.DAIN:
            self.stationarizer = self.add_child("dain", DAIN(n_features, factory, blocks.dain_gate_bias))

        self.uses_marks = g.fam == TimeFeatures.TIME_FEATURES
        width = n_features + TIME_FEATURE_COUNT if self.uses_marks else n_features
        self.width = width

        self.extractor: Optional[Block] = None
        self.trend: Optional[TrendLinear] = None
        if g.fem == FeatureExtraction.LINEAR_EMBED:
            self.extractor = self.add_child("embed", LinearEmbed(width, g.hs, factory))
        elif g.fem == FeatureExtraction.DECOMP:
            self.extractor = Decomposition((blocks.decomp_kernel,))
        elif g.fem == FeatureExtraction.MULTI_SCALE_DECOMP:
            self.extractor = Decomposition(blocks.multi_scale_kernels)
        elif g.fem == FeatureExtraction.TIME_FEATURE_MIX:
            self.extractor = self.add_child("mix", TimeFeatureMix(steps_in, width, g.hs, factory, blocks.mixing_dropout))
        elif g.fem == FeatureExtraction.FREQ_MIX:
            self.extractor = self.add_child("freq", FrequencyMix(steps_in, width, factory))
        if isinstance(self.extractor, Decomposition):
            self.trend = self.add_child("trend", TrendLinear(steps_in, horizon, factory))

        self.core = self.add_child("core", build_cps(g.cps, g.ln, g.hs, steps_in, horizon, width, factory))
        self.head = self.add_child("head", AggregateHead(width, factory))

    def forward_all(self, x: Tensor, marks: Optional[Tensor], ctx: Context) -> Tensor:
        if self.noise is not None:
            x = self.noise(x, ctx)
        stats = None
        if isinstance(self.stationarizer, RevIN):
            x, stats = self.stationarizer.norm(x)
        elif self.stationarizer is not None:
            x = self.stationarizer(x, ctx)
        if self.uses_marks:
            x = append_marks(x, marks.data if isinstance(marks, Tensor) else marks)

        trend = None
        if isinstance(self.extractor, Decomposition):
            x, trend = self.extractor.split(x)
        elif self.extractor is not None:
            x = self.extractor(x, ctx)

        y = self.core(x, ctx)
        if trend is not None:
            y = add(y, self.trend(trend, ctx))
        y = self.head(y, ctx)
        if stats is not None:
            y = self.stationarizer.denorm(y, stats, self.target_index)
        return reshape(y, y.shape[:-1])

    def forward(self, x, ctx):
        return self.forward_all(x, None, ctx)


class ModelGraph:
    """An assembled candidate: graph, feature mask, training settings and I/O shapes"""

    def __init__(self, genotype: Genotype, task: TaskSpec, feature_mask: FeatureMask, feature_names: Tuple[str, ...],
                 network: ForecastNetwork, seed: int):
        self.genotype = genotype
        self.task = task
        self.feature_mask = feature_mask
        self.feature_names = tuple(feature_names)
        self.network = network
        self.seed = seed
        self.train_cfg = TrainConfig(lr=genotype.lr, optimizer=genotype.of, batch_size=genotype.bs)
        self.io_shapes = (task.input_length, network.width, task.horizon)
        input_names = ("x", "marks") if network.uses_marks else ("x",)
        self.graph = Graph(self._run, network.named_parameters(), input_names)

    def _run(self, inputs: Dict[str, Tensor], ctx: Context) -> Dict[str, Tensor]:
        return {"forecast": self.network.forward_all(inputs["x"], inputs.get("marks"), ctx)}

    @property
    def kept_features(self) -> Tuple[str, ...]:
        return tuple(name for name, keep in zip(self.feature_names, self.feature_mask.keep) if keep)

    def param_count(self) -> int:
        return self.graph.param_count()

    def feed(self, inputs: np.ndarray, marks: Optional[np.ndarray] = None) -> Dict[str, np.ndarray]:
        """Apply the feature mask to full-width (N, T_in, D) inputs and bind graph inputs"""
        inputs = np.asarray(inputs, dtype=np.float64)
        if inputs.shape[-1] != len(self.feature_names):
            raise ShapeMismatch("feed", inputs.shape, (self.io_shapes[0], len(self.feature_names)),
                                detail="input features differ from the recorded feature set")
        if inputs.shape[-2] != self.io_shapes[0]:
            raise ShapeMismatch("feed", inputs.shape, (self.io_shapes[0], len(self.feature_names)))
        bound = {"x": self.feature_mask.apply(inputs)}
        if self.network.uses_marks:
            if marks is None:
                raise ShapeMismatch("feed", inputs.shape, detail="time marks are required for time features")
            bound["marks"] = np.asarray(marks, dtype=np.float64)
        return bound

    def predict(self, inputs: np.ndarray, marks: Optional[np.ndarray] = None, batch_size: int = 256) -> np.ndarray:
        """Eval-mode forecasts of shape (N, T_p)"""
        bound = self.feed(inputs, marks)
        n = bound["x"].shape[0]
        outputs = []
        for start in range(0, n, batch_size):
            chunk = {name: value[start:start + batch_size] for name, value in bound.items()}
            outputs.append(forward(self.graph, chunk, train=False)["forecast"].data)
        return np.concatenate(outputs, axis=0) if outputs else np.zeros((0, self.task.horizon))

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.numpy() for name, p in self.graph.parameters.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        missing = set(self.graph.parameters) - set(state)
        if missing:
            raise ShapeMismatch("load_state_dict", (len(state),), (len(self.graph.parameters),),
                                detail=f"missing {sorted(missing)[0]}")
        for name, p in self.graph.parameters.items():
            p.assign(np.array(state[name], dtype=np.float64))


def validate_genotype(g: Genotype) -> None:
    for gene in GENE_NAMES:
        value = getattr(g, gene, None)
        if value is None:
            raise InvalidOption(gene, value)
        coerce_option(gene, value)


def train_feature_std(train_frame: TimeSeriesFrame) -> np.ndarray:
    return train_frame.values.std(axis=0)


def assemble(g: Genotype, task: TaskSpec, train_frame: Optional[TimeSeriesFrame] = None, seed: int = 0,
             blocks: Optional[BlockConfig] = None, shape_only: bool = False,
             feature_mask: Optional[FeatureMask] = None, feature_std: Optional[np.ndarray] = None,
             feature_names: Optional[Tuple[str, ...]] = None) -> ModelGraph:
    """Build the forecasting network a genotype describes.

    The feature mask and per-feature std are fitted on `train_frame` unless
    given explicitly (as when rebuilding from an exported architecture).
    """
    validate_genotype(g)
    blocks = blocks or BlockConfig()
    if feature_mask is None or feature_std is None or feature_names is None:
        if train_frame is None:
            raise ValueError("assemble needs a train frame or an explicit mask, std and feature names")
        feature_mask = feature_mask or select_features(g.fsm, g.fst, train_frame)
        feature_std = train_feature_std(train_frame) if feature_std is None else feature_std
        feature_names = train_frame.feature_names if feature_names is None else feature_names
    factory = ParamFactory(np.random.default_rng(seed), shape_only=shape_only)
    network = ForecastNetwork(
        g, task.input_length, task.horizon, feature_mask.n_kept, feature_mask.kept_target_index,
        np.asarray(feature_std, dtype=np.float64)[feature_mask.keep], factory, blocks,
    )
    return ModelGraph(g, task, feature_mask, feature_names, network, seed)


def param_count(m: ModelGraph) -> int:
    return m.param_count()
