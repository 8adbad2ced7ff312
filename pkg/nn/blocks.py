"""
Selectable architecture blocks over the autodiff core.

Tensors are laid out (batch, time, features). Blocks that mix along time
swap the last two axes, apply a shared linear map and swap back.
"""
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from core.exceptions import InvalidOption
from models.genotype import GENE_OPTIONS, CoreStructure, FeatureExtraction, Generalization, Stationarization
from nn.autodiff import (
    Context, Tensor, absolute, add, as_tensor, concat, conv1d, div, dropout, exact_split, expand, irfft, matmul,
    mean, moving_average, mul, parameter, relu, reshape, rfft, sigmoid, slice_axis, sqrt, sub,
    swap_last, tanh,
)

logger = logging.getLogger(__name__)

REVIN_EPS = 1e-5


class ParamFactory:
    """Creates parameter leaves; in shape-only mode no values are allocated."""

    def __init__(self, rng: Optional[np.random.Generator] = None, shape_only: bool = False):
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.shape_only = shape_only

    def _leaf(self, shape: Sequence[int], make) -> Tensor:
        shape = tuple(int(s) for s in shape)
        if self.shape_only:
            return parameter(np.broadcast_to(np.float64(0.0), shape))
        return parameter(make(shape))

    def uniform(self, shape: Sequence[int], fan_in: int) -> Tensor:
        bound = 1.0 / np.sqrt(max(fan_in, 1))
        return self._leaf(shape, lambda s: self.rng.uniform(-bound, bound, size=s))

    def constant(self, shape: Sequence[int], value: float) -> Tensor:
        return self._leaf(shape, lambda s: np.full(s, float(value)))

    def eye(self, n: int) -> Tensor:
        return self._leaf((n, n), lambda s: np.eye(n))


class Block:
    kind: Any = "block"

    def __init__(self):
        self.params: Dict[str, Tensor] = {}
        self.children: Dict[str, "Block"] = {}
        self.hyper: Dict[str, Any] = {}

    def add_param(self, name: str, tensor: Tensor) -> Tensor:
        self.params[name] = tensor
        return tensor

    def add_child(self, name: str, block: "Block") -> "Block":
        self.children[name] = block
        return block

    def named_parameters(self, prefix: str = "") -> Dict[str, Tensor]:
        named = {f"{prefix}{name}": p for name, p in self.params.items()}
        for child_name, child in self.children.items():
            named.update(child.named_parameters(f"{prefix}{child_name}."))
        return named

    def param_count(self) -> int:
        return sum(p.size for p in self.named_parameters().values())

    def forward(self, x: Tensor, ctx: Context) -> Tensor:
        raise NotImplementedError

    def __call__(self, x, ctx: Optional[Context] = None) -> Tensor:
        return self.forward(as_tensor(x), ctx if ctx is not None else Context())


class Linear(Block):
    kind = "Linear"

    def __init__(self, n_in: int, n_out: int, factory: ParamFactory, bias: bool = True):
        super().__init__()
        self.hyper = {"n_in": n_in, "n_out": n_out}
        self.weight = self.add_param("weight", factory.uniform((n_in, n_out), n_in))
        self.bias = self.add_param("bias", factory.uniform((n_out,), n_in)) if bias else None

    def forward(self, x, ctx):
        y = matmul(x, self.weight)
        return add(y, self.bias) if self.bias is not None else y


def along_time(block: Block, x: Tensor, ctx: Context) -> Tensor:
    return swap_last(block(swap_last(x), ctx))


# Stage 2: generalization, stationarization, time features

def gaussian_augment(x, sigma_frac: float, rng_seed: Optional[int] = None, train: bool = True,
                     feature_std: Optional[np.ndarray] = None,
                     rng: Optional[np.random.Generator] = None) -> Tensor:
    """Add N(0, (sigma_frac * std_d)^2) noise per feature; identity outside training"""
    x = as_tensor(x)
    if sigma_frac < 0:
        raise ValueError(f"sigma_frac must be non-negative, got {sigma_frac}")
    if not train or sigma_frac == 0.0:
        return x
    std = feature_std if feature_std is not None else x.data.reshape(-1, x.shape[-1]).std(axis=0)
    gen = rng if rng is not None else np.random.default_rng(rng_seed)
    noise = gen.standard_normal(x.shape) * (sigma_frac * np.asarray(std, dtype=np.float64))
    return add(x, Tensor(noise))


class GaussianNoise(Block):
    kind = Generalization.GAUSSIAN

    def __init__(self, feature_std: np.ndarray, sigma_frac: float):
        super().__init__()
        self.feature_std = np.asarray(feature_std, dtype=np.float64)
        self.hyper = {"sigma_frac": sigma_frac}

    def forward(self, x, ctx):
        return gaussian_augment(x, self.hyper["sigma_frac"], train=ctx.train,
                                feature_std=self.feature_std, rng=ctx.rng)


@dataclass(frozen=True)
class RevINStats:
    mean: np.ndarray
    std: np.ndarray


def revin_norm(x, gain: Optional[Tensor] = None, bias: Optional[Tensor] = None,
               eps: float = REVIN_EPS) -> Tuple[Tensor, RevINStats]:
    x = as_tensor(x)
    center = x.data.mean(axis=-2, keepdims=True)
    std = np.sqrt(x.data.var(axis=-2, keepdims=True) + eps)
    stats = RevINStats(mean=center, std=std)
    out = div(sub(x, Tensor(np.broadcast_to(center, x.shape))), Tensor(np.broadcast_to(std, x.shape)))
    if gain is not None:
        out = add(mul(out, gain), bias)
    return out, stats


def revin_denorm(y, stats: RevINStats, target_index: int = 0, gain: Optional[Tensor] = None,
                 bias: Optional[Tensor] = None, eps: float = REVIN_EPS) -> Tensor:
    """Undo revin_norm for a (..., T_p, 1) forecast using the target feature's stats"""
    y = as_tensor(y)
    if gain is not None:
        g = slice_axis(gain, 0, target_index, target_index + 1)
        b = slice_axis(bias, 0, target_index, target_index + 1)
        y = div(sub(y, b), add(g, eps * eps))
    t = slice(target_index, target_index + 1)
    scale = np.broadcast_to(stats.std[..., t], y.shape)
    shift = np.broadcast_to(stats.mean[..., t], y.shape)
    return add(mul(y, Tensor(scale)), Tensor(shift))


class RevIN(Block):
    kind = Stationarization.REVIN

    def __init__(self, n_features: int, factory: ParamFactory, eps: float = REVIN_EPS):
        super().__init__()
        self.hyper = {"eps": eps}
        self.gain = self.add_param("gain", factory.constant((n_features,), 1.0))
        self.bias = self.add_param("bias", factory.constant((n_features,), 0.0))

    def norm(self, x) -> Tuple[Tensor, RevINStats]:
        return revin_norm(x, self.gain, self.bias, self.hyper["eps"])

    def denorm(self, y, stats: RevINStats, target_index: int) -> Tensor:
        return revin_denorm(y, stats, target_index, self.gain, self.bias, self.hyper["eps"])

    def forward(self, x, ctx):
        return self.norm(x)[0]


class DAIN(Block):
    """Adaptive shift, adaptive scale and adaptive gating, each identity at init."""
    kind = Stationarization.DAIN

    def __init__(self, n_features: int, factory: ParamFactory, gate_bias: float = 10.0, eps: float = 1e-8):
        super().__init__()
        self.hyper = {"gate_bias": gate_bias, "eps": eps}
        self.shift = self.add_param("shift", factory.eye(n_features))
        self.scale = self.add_param("scale", factory.eye(n_features))
        self.gate_weight = self.add_param("gate_weight", factory.constant((n_features, n_features), 0.0))
        self.gate_bias = self.add_param("gate_bias", factory.constant((n_features,), gate_bias))

    def forward(self, x, ctx):
        eps = self.hyper["eps"]
        alpha = matmul(mean(x, axis=-2, keepdims=True), self.shift)
        centered = sub(x, expand(alpha, x.shape))
        std = sqrt(add(mean(mul(centered, centered), axis=-2, keepdims=True), eps))
        beta = add(absolute(matmul(std, self.scale)), eps)
        scaled = div(centered, expand(beta, x.shape))
        summary = mean(scaled, axis=-2, keepdims=True)
        gate = sigmoid(add(matmul(summary, self.gate_weight), self.gate_bias))
        return mul(scaled, expand(gate, x.shape))


def dain_transform(x, factory: Optional[ParamFactory] = None, gate_bias: float = 10.0) -> Tensor:
    x = as_tensor(x)
    return DAIN(x.shape[-1], factory or ParamFactory(), gate_bias)(x)


TIME_FEATURE_COUNT = 4


def time_feature_matrix(timestamps) -> np.ndarray:
    """hour, day-of-week, day-of-month and month, each scaled to [-0.5, 0.5]"""
    ts = pd.DatetimeIndex(np.asarray(timestamps).reshape(-1))
    marks = np.stack([
        ts.hour.to_numpy() / 23.0 - 0.5,
        ts.dayofweek.to_numpy() / 6.0 - 0.5,
        (ts.day.to_numpy() - 1) / 30.0 - 0.5,
        (ts.month.to_numpy() - 1) / 11.0 - 0.5,
    ], axis=-1)
    return marks.reshape(np.shape(timestamps) + (TIME_FEATURE_COUNT,))


def append_marks(x, marks) -> Tensor:
    x = as_tensor(x)
    marks = np.asarray(marks, dtype=np.float64)
    if marks.shape != x.shape[:-1] + (TIME_FEATURE_COUNT,):
        marks = np.broadcast_to(marks, x.shape[:-1] + (TIME_FEATURE_COUNT,))
    return concat([x, Tensor(marks)], axis=-1)


def add_time_features(x, timestamps) -> Tensor:
    return append_marks(x, time_feature_matrix(timestamps))


# Stage 3: feature extraction

def decompose(x, kernel: int) -> Tuple[Tensor, Tensor]:
    if kernel < 3 or kernel % 2 == 0:
        raise ValueError(f"decomposition kernel must be odd and >= 3, got {kernel}")
    x = as_tensor(x)
    return exact_split(x, moving_average(x, kernel, axis=-2))


def multi_scale_decompose(x, kernels: Sequence[int]) -> Tuple[Tensor, Tensor]:
    kernels = list(kernels)
    if len(kernels) < 2 or any(k < 3 or k % 2 == 0 for k in kernels):
        raise ValueError(f"need at least two odd kernels >= 3, got {kernels}")
    x = as_tensor(x)
    averages = [moving_average(x, k, axis=-2) for k in kernels]
    base = averages[0]
    trend = base
    for other in averages[1:]:
        trend = add(trend, div(sub(other, base), float(len(kernels))))
    return exact_split(x, trend)


class Decomposition(Block):
    kind = FeatureExtraction.DECOMP

    def __init__(self, kernels: Sequence[int]):
        super().__init__()
        self.hyper = {"kernels": tuple(kernels)}
        if len(self.hyper["kernels"]) > 1:
            self.kind = FeatureExtraction.MULTI_SCALE_DECOMP

    def split(self, x) -> Tuple[Tensor, Tensor]:
        kernels = self.hyper["kernels"]
        if len(kernels) == 1:
            return decompose(x, kernels[0])
        return multi_scale_decompose(x, kernels)

    def forward(self, x, ctx):
        return self.split(x)[0]


class LinearEmbed(Block):
    kind = FeatureExtraction.LINEAR_EMBED

    def __init__(self, n_features: int, hidden: int, factory: ParamFactory):
        super().__init__()
        self.hyper = {"hidden": hidden}
        self.up = self.add_child("up", Linear(n_features, hidden, factory))
        self.down = self.add_child("down", Linear(hidden, n_features, factory))

    def forward(self, x, ctx):
        return self.down(self.up(x, ctx), ctx)


class TimeFeatureMix(Block):
    """Residual MLP along time, then residual MLP along features."""
    kind = FeatureExtraction.TIME_FEATURE_MIX

    def __init__(self, steps: int, n_features: int, hidden: int, factory: ParamFactory, dropout_rate: float = 0.1):
        super().__init__()
        self.hyper = {"hidden": hidden, "dropout": dropout_rate}
        self.time_in = self.add_child("time_in", Linear(steps, hidden, factory))
        self.time_out = self.add_child("time_out", Linear(hidden, steps, factory))
        self.feat_in = self.add_child("feat_in", Linear(n_features, hidden, factory))
        self.feat_out = self.add_child("feat_out", Linear(hidden, n_features, factory))

    def forward(self, x, ctx):
        rate = self.hyper["dropout"]
        h = dropout(relu(self.time_in(swap_last(x), ctx)), rate, ctx.train, ctx.rng)
        x = add(x, swap_last(self.time_out(h, ctx)))
        h = dropout(relu(self.feat_in(x, ctx)), rate, ctx.train, ctx.rng)
        return add(x, self.feat_out(h, ctx))


def time_feature_mix(x, hidden: int, factory: Optional[ParamFactory] = None, ctx: Optional[Context] = None) -> Tensor:
    x = as_tensor(x)
    return TimeFeatureMix(x.shape[-2], x.shape[-1], hidden, factory or ParamFactory())(x, ctx)


class ComplexLinear(Block):
    """(re, im) -> (re W_r - im W_i + b_r, re W_i + im W_r + b_i) over the last axis"""
    kind = "ComplexLinear"

    def __init__(self, n_in: int, n_out: int, factory: ParamFactory):
        super().__init__()
        self.real = self.add_param("real", factory.uniform((n_in, n_out), n_in))
        self.imag = self.add_param("imag", factory.uniform((n_in, n_out), n_in))
        self.real_bias = self.add_param("real_bias", factory.constant((n_out,), 0.0))
        self.imag_bias = self.add_param("imag_bias", factory.constant((n_out,), 0.0))

    def apply(self, re: Tensor, im: Tensor) -> Tuple[Tensor, Tensor]:
        out_re = add(sub(matmul(re, self.real), matmul(im, self.imag)), self.real_bias)
        out_im = add(add(matmul(re, self.imag), matmul(im, self.real)), self.imag_bias)
        return out_re, out_im

    def forward(self, x, ctx):
        raise TypeError("ComplexLinear works on (re, im) pairs; use apply()")


def _complex_parts(z: Tensor) -> Tuple[Tensor, Tensor]:
    shape = z.shape[:-1]
    return reshape(slice_axis(z, -1, 0, 1), shape), reshape(slice_axis(z, -1, 1, 2), shape)


def _complex_join(re: Tensor, im: Tensor) -> Tensor:
    return concat([reshape(re, re.shape + (1,)), reshape(im, im.shape + (1,))], axis=-1)


class FrequencyMix(Block):
    """Frequency-domain channel learner followed by a frequency temporal learner."""
    kind = FeatureExtraction.FREQ_MIX

    def __init__(self, steps: int, n_features: int, factory: ParamFactory, hidden: Optional[int] = None):
        super().__init__()
        bins = steps // 2 + 1
        self.hyper = {"steps": steps, "bins": bins, "hidden": hidden}
        self.channel: List[ComplexLinear] = []
        widths = [n_features, n_features] if hidden in (None, n_features) else [n_features, hidden, n_features]
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            self.channel.append(self.add_child(f"channel{i}", ComplexLinear(a, b, factory)))
        self.temporal = self.add_child("temporal", ComplexLinear(bins, bins, factory))

    def forward(self, x, ctx):
        re, im = _complex_parts(rfft(x, axis=-2))
        for layer in self.channel:
            re, im = layer.apply(re, im)
        re, im = self.temporal.apply(swap_last(re), swap_last(im))
        z = _complex_join(swap_last(re), swap_last(im))
        return irfft(z, n=self.hyper["steps"], axis=-2)


def frequency_mix(x, hidden: Optional[int] = None, factory: Optional[ParamFactory] = None) -> Tensor:
    x = as_tensor(x)
    return FrequencyMix(x.shape[-2], x.shape[-1], factory or ParamFactory(), hidden)(x)


# Stage 3: core predictive structures

def _as_batch(x: Tensor) -> Tuple[Tensor, bool]:
    if x.ndim == 2:
        return reshape(x, (1,) + x.shape), True
    return x, False


class MLPPredictor(Block):
    """Per-feature MLP along time; a single layer is one linear map with no activation."""
    kind = CoreStructure.MLP

    def __init__(self, steps_in: int, steps_out: int, layers: int, hidden: int, factory: ParamFactory):
        super().__init__()
        self.hyper = {"layers": layers, "hidden": hidden}
        widths = [steps_in] + [hidden] * (layers - 1) + [steps_out]
        self.layers = [self.add_child(f"fc{i}", Linear(a, b, factory))
                       for i, (a, b) in enumerate(zip(widths[:-1], widths[1:]))]

    def forward(self, x, ctx):
        h = swap_last(x)
        for i, layer in enumerate(self.layers):
            h = layer(h, ctx)
            if i < len(self.layers) - 1:
                h = relu(h)
        return swap_last(h)


class LSTMCell(Block):
    kind = "LSTMCell"

    def __init__(self, n_in: int, hidden: int, factory: ParamFactory):
        super().__init__()
        self.hyper = {"hidden": hidden}
        self.input_weight = self.add_param("input_weight", factory.uniform((n_in, 4 * hidden), hidden))
        self.hidden_weight = self.add_param("hidden_weight", factory.uniform((hidden, 4 * hidden), hidden))
        self.bias = self.add_param("bias", factory.uniform((4 * hidden,), hidden))

    def step(self, x: Tensor, h: Tensor, c: Tensor) -> Tuple[Tensor, Tensor]:
        n = self.hyper["hidden"]
        gates = add(add(matmul(x, self.input_weight), matmul(h, self.hidden_weight)), self.bias)
        i = sigmoid(slice_axis(gates, -1, 0, n))
        f = sigmoid(slice_axis(gates, -1, n, 2 * n))
        g = tanh(slice_axis(gates, -1, 2 * n, 3 * n))
        o = sigmoid(slice_axis(gates, -1, 3 * n, 4 * n))
        c = add(mul(f, c), mul(i, g))
        return mul(o, tanh(c)), c

    def forward(self, x, ctx):
        zeros = Tensor(np.zeros(x.shape[:-1] + (self.hyper["hidden"],)))
        return self.step(x, zeros, zeros)[0]


class LSTMPredictor(Block):
    """Stacked LSTM over time; a linear head maps the last hidden state to T_out per feature."""
    kind = CoreStructure.LSTM

    def __init__(self, n_features: int, hidden: int, layers: int, steps_in: int, steps_out: int,
                 factory: ParamFactory):
        super().__init__()
        self.hyper = {"layers": layers, "hidden": hidden, "steps_out": steps_out}
        self.cells = [self.add_child(f"cell{i}", LSTMCell(n_features if i == 0 else hidden, hidden, factory))
                      for i in range(layers)]
        self.head = self.add_child("head", Linear(hidden, steps_out * n_features, factory))

    def forward(self, x, ctx):
        x, squeeze = _as_batch(x)
        batch, steps, features = x.shape
        hidden = self.hyper["hidden"]
        state = [(Tensor(np.zeros((batch, hidden))), Tensor(np.zeros((batch, hidden)))) for _ in self.cells]
        for t in range(steps):
            h = reshape(slice_axis(x, 1, t, t + 1), (batch, features))
            for layer, cell in enumerate(self.cells):
                h, c = cell.step(h, *state[layer])
                state[layer] = (h, c)
        out = reshape(self.head(state[-1][0], ctx), (batch, self.hyper["steps_out"], features))
        return reshape(out, out.shape[1:]) if squeeze else out


class ConvPredictor(Block):
    """Kernel-3 convolution stack, a feature projection and a linear time head.

    causal=True gives the TCN variant: dilation 2^layer, left-only padding and
    residual connections between equal-width layers.
    """

    def __init__(self, n_features: int, hidden: int, layers: int, steps_in: int, steps_out: int,
                 factory: ParamFactory, causal: bool = False, kernel: int = 3):
        super().__init__()
        self.kind = CoreStructure.TCN if causal else CoreStructure.CNN
        dilations = [2 ** i if causal else 1 for i in range(layers)]
        self.hyper = {"layers": layers, "hidden": hidden, "kernel": kernel, "causal": causal, "dilations": dilations}
        self.convs = []
        for i in range(layers):
            c_in = n_features if i == 0 else hidden
            w = self.add_param(f"conv{i}.weight", factory.uniform((kernel, c_in, hidden), kernel * c_in))
            b = self.add_param(f"conv{i}.bias", factory.uniform((hidden,), kernel * c_in))
            self.convs.append((w, b, dilations[i]))
        self.project = self.add_child("project", Linear(hidden, n_features, factory))
        self.time_head = self.add_child("time_head", Linear(steps_in, steps_out, factory))

    @property
    def receptive_field(self) -> int:
        return 1 + (self.hyper["kernel"] - 1) * sum(self.hyper["dilations"])

    def forward(self, x, ctx):
        x, squeeze = _as_batch(x)
        h = x
        for i, (w, b, dilation) in enumerate(self.convs):
            y = relu(conv1d(h, w, b, dilation=dilation, causal=self.hyper["causal"]))
            h = add(y, h) if self.hyper["causal"] and i > 0 else y
        out = along_time(self.time_head, self.project(h, ctx), ctx)
        return reshape(out, out.shape[1:]) if squeeze else out


def _check_option(gene: str, value) -> None:
    if value not in GENE_OPTIONS[gene]:
        raise InvalidOption(gene, value)


def build_cps(kind, layers: int, hidden: int, steps_in: int, steps_out: int, n_features: int,
              factory: Optional[ParamFactory] = None) -> Block:
    """Core predictive structure mapping (T_in, D) to per-feature (T_out, D) forecasts"""
    try:
        kind = CoreStructure(kind)
    except ValueError:
        raise InvalidOption("cps", kind)
    _check_option("ln", layers)
    _check_option("hs", hidden)
    factory = factory or ParamFactory()
    if kind == CoreStructure.MLP:
        return MLPPredictor(steps_in, steps_out, layers, hidden, factory)
    if kind == CoreStructure.LSTM:
        return LSTMPredictor(n_features, hidden, layers, steps_in, steps_out, factory)
    return ConvPredictor(n_features, hidden, layers, steps_in, steps_out, factory,
                         causal=kind == CoreStructure.TCN)


class TrendLinear(Block):
    """Fully connected trend branch along time, shared across features."""
    kind = "TrendLinear"

    def __init__(self, steps_in: int, steps_out: int, factory: ParamFactory):
        super().__init__()
        self.fc = self.add_child("fc", Linear(steps_in, steps_out, factory))

    def forward(self, x, ctx):
        return along_time(self.fc, x, ctx)


class AggregateHead(Block):
    """Fully connected map across features (D -> 1), shared over timesteps."""
    kind = "AggregateHead"

    def __init__(self, n_features: int, factory: ParamFactory):
        super().__init__()
        self.fc = self.add_child("fc", Linear(n_features, 1, factory))

    def forward(self, x, ctx):
        return self.fc(x, ctx)


def aggregate_head(per_feature_forecasts, factory: Optional[ParamFactory] = None) -> Tensor:
    x = as_tensor(per_feature_forecasts)
    return AggregateHead(x.shape[-1], factory or ParamFactory())(x)


