"""
Dense reverse-mode automatic differentiation over float64 numpy arrays.

Every primitive returns a new Tensor that remembers its parents and a closure
which pushes the upstream gradient back to them. A Graph binds named parameter
leaves to a forward function; `forward` evaluates it and records the
topologically ordered tape, `backward` walks that tape in reverse.

Broadcasting is limited to leading-dimension expansion: the smaller operand's
shape must be a suffix of the larger one. Anything else needs an explicit
`reshape` or `expand`.
"""
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from core.exceptions import NotScalarLoss, ShapeMismatch, UnboundInput

logger = logging.getLogger(__name__)

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]


class Tensor:
    __slots__ = ("_data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf"):
        self._data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self.op = op

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self._data.shape)

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return int(self._data.size)

    def assign(self, values) -> None:
        """Replace the stored values; the shape is fixed at creation."""
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self._data.shape:
            raise ShapeMismatch("assign", self.shape, values.shape)
        self._data = values

    def numpy(self) -> np.ndarray:
        return np.array(self._data, copy=True)

    def item(self) -> float:
        return float(self._data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(value: ArrayLike) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True, op="param")


def _result(data: np.ndarray, parents: Sequence[Tensor], op: str,
            backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(data, op=op)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accumulate(tensor: Tensor, grad: np.ndarray) -> None:
    if not tensor.requires_grad:
        return
    if tensor.grad is None:
        tensor.grad = np.array(grad, dtype=np.float64, copy=True)
    else:
        tensor.grad = tensor.grad + grad


# Elementwise binary ops

def _check_leading(op: str, a: Tensor, b: Tensor) -> None:
    sa, sb = a.shape, b.shape
    if sa == sb:
        return
    short, long_ = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    if len(short) == len(long_) or long_[len(long_) - len(short):] != short:
        raise ShapeMismatch(op, sa, sb, detail="only leading-dimension expansion is allowed")


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    return grad.reshape((-1,) + tuple(shape)).sum(axis=0) if lead > 0 else grad


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_leading("add", a, b)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), "add", backward)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_leading("sub", a, b)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _result(a.data - b.data, (a, b), "sub", backward)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_leading("mul", a, b)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), "mul", backward)


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_leading("div", a, b)
    out = a.data / b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g * out / b.data, b.shape))

    return _result(out, (a, b), "div", backward)


def neg(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), "neg", lambda g: _accumulate(a, -g))


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Batched matrix product; b is either a shared 2-D weight or carries a's leading dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch("matmul", a.shape, b.shape)
    if b.ndim > 2 and b.shape[:-2] != a.shape[:-2]:
        raise ShapeMismatch("matmul", a.shape, b.shape, detail="batched operands need equal leading dims")
    if a.ndim == 2 and b.ndim > 2:
        raise ShapeMismatch("matmul", a.shape, b.shape)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, np.matmul(g, np.swapaxes(b.data, -1, -2)))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            _accumulate(b, _unbroadcast(gb, b.shape))

    return _result(np.matmul(a.data, b.data), (a, b), "matmul", backward)


# Elementwise unary ops

def relu(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    positive = x.data > 0
    return _result(np.where(positive, x.data, 0.0), (x,), "relu",
                   lambda g: _accumulate(x, g * positive))


def tanh(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _result(out, (x,), "tanh", lambda g: _accumulate(x, g * (1.0 - out * out)))


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    out = _stable_sigmoid(x.data)
    return _result(out, (x,), "sigmoid", lambda g: _accumulate(x, g * out * (1.0 - out)))


def absolute(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    return _result(np.abs(x.data), (x,), "abs", lambda g: _accumulate(x, g * np.sign(x.data)))


def sqrt(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    out = np.sqrt(x.data)
    return _result(out, (x,), "sqrt", lambda g: _accumulate(x, g * 0.5 / out))


# Reductions and shape ops

def _axes(axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def mean(x: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    out = x.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        _accumulate(x, np.broadcast_to(g, x.shape) / count)

    return _result(out, (x,), "mean", backward)


def reduce_sum(x: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        _accumulate(x, np.broadcast_to(g, x.shape))

    return _result(out, (x,), "sum", backward)


def transpose(x: ArrayLike, axes: Optional[Sequence[int]] = None) -> Tensor:
    x = as_tensor(x)
    axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(a % x.ndim for a in axes)
    inverse = tuple(np.argsort(axes))
    return _result(np.transpose(x.data, axes), (x,), "transpose",
                   lambda g: _accumulate(x, np.transpose(g, inverse)))


def swap_last(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def reshape(x: ArrayLike, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeMismatch("reshape", x.shape, tuple(shape))
    return _result(out, (x,), "reshape", lambda g: _accumulate(x, g.reshape(x.shape)))


def expand(x: ArrayLike, shape: Sequence[int]) -> Tensor:
    """Broadcast size-1 axes to `shape`; the rank must already match."""
    x = as_tensor(x)
    shape = tuple(shape)
    if len(shape) != x.ndim or any(s != t and s != 1 for s, t in zip(x.shape, shape)):
        raise ShapeMismatch("expand", x.shape, shape)
    stretched = tuple(i for i, (s, t) in enumerate(zip(x.shape, shape)) if s == 1 and t != 1)
    return _result(np.broadcast_to(x.data, shape).copy(), (x,), "expand",
                   lambda g: _accumulate(x, g.sum(axis=stretched, keepdims=True)))


def concat(tensors: Sequence[ArrayLike], axis: int = -1) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ShapeMismatch("concat", ())
    ndim = parts[0].ndim
    ax = axis % ndim
    for p in parts[1:]:
        if p.ndim != ndim or p.shape[:ax] + p.shape[ax + 1:] != parts[0].shape[:ax] + parts[0].shape[ax + 1:]:
            raise ShapeMismatch("concat", parts[0].shape, p.shape)
    sizes = [p.shape[ax] for p in parts]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        for p, piece in zip(parts, np.split(g, cuts, axis=ax)):
            _accumulate(p, piece)

    return _result(np.concatenate([p.data for p in parts], axis=ax), parts, "concat", backward)


def slice_axis(x: ArrayLike, axis: int, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    ax = axis % x.ndim
    if not 0 <= start < stop <= x.shape[ax]:
        raise ShapeMismatch("slice", x.shape, (start, stop), detail=f"axis {ax}")
    index = [slice(None)] * x.ndim
    index[ax] = slice(start, stop)
    index = tuple(index)

    def backward(g):
        full = np.zeros(x.shape)
        full[index] = g
        _accumulate(x, full)

    return _result(x.data[index], (x,), "slice", backward)


# Sequence ops

def conv1d(x: ArrayLike, weight: ArrayLike, bias: Optional[ArrayLike] = None, stride: int = 1,
           dilation: int = 1, causal: bool = False) -> Tensor:
    """1-D convolution over (batch, time, channels) with weight (kernel, c_in, c_out).

    Causal mode pads only the past so output[t] reads inputs at t, t-d, ...;
    otherwise zero padding is split evenly ("same" length for stride 1).
    """
    x, w = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or w.ndim != 3 or x.shape[2] != w.shape[1]:
        raise ShapeMismatch("conv1d", x.shape, w.shape)
    batch, steps, c_in = x.shape
    kernel, _, c_out = w.shape
    span = dilation * (kernel - 1)
    left, right = (span, 0) if causal else (span // 2, span - span // 2)
    padded = np.pad(x.data, ((0, 0), (left, right), (0, 0)))
    out_steps = (steps + left + right - span - 1) // stride + 1
    if out_steps < 1:
        raise ShapeMismatch("conv1d", x.shape, w.shape, detail="input shorter than receptive field")
    taps = [slice(k * dilation, k * dilation + (out_steps - 1) * stride + 1, stride) for k in range(kernel)]
    out = np.zeros((batch, out_steps, c_out))
    for k, tap in enumerate(taps):
        out += padded[:, tap, :] @ w.data[k]
    parents: List[Tensor] = [x, w]
    b = None
    if bias is not None:
        b = as_tensor(bias)
        if b.shape != (c_out,):
            raise ShapeMismatch("conv1d bias", b.shape, (c_out,))
        out = out + b.data
        parents.append(b)

    def backward(g):
        if x.requires_grad:
            gpad = np.zeros_like(padded)
            for k, tap in enumerate(taps):
                gpad[:, tap, :] += g @ w.data[k].T
            _accumulate(x, gpad[:, left:left + steps, :])
        if w.requires_grad:
            flat_g = g.reshape(-1, c_out)
            gw = np.stack([padded[:, tap, :].reshape(-1, c_in).T @ flat_g for tap in taps])
            _accumulate(w, gw)
        if b is not None:
            _accumulate(b, g.sum(axis=(0, 1)))

    return _result(out, parents, "conv1d", backward)


def moving_average(x: ArrayLike, kernel: int, axis: int = -2) -> Tensor:
    """Centered moving average with replicate padding; output length equals input length.

    Accumulates deviations from the window centre so constant series come back
    bit-exact.
    """
    x = as_tensor(x)
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"moving_average kernel must be odd and positive, got {kernel}")
    ax = axis % x.ndim
    half = kernel // 2
    moved = np.moveaxis(x.data, ax, 0)
    steps = moved.shape[0]
    index = np.clip(np.arange(-half, steps + half), 0, steps - 1)
    padded = moved[index]
    acc = np.zeros_like(moved)
    for j in range(kernel):
        acc += padded[j:j + steps] - moved
    out = np.moveaxis(moved + acc / kernel, 0, ax)

    def backward(g):
        gm = np.moveaxis(g, ax, 0) / kernel
        gpad = np.zeros(padded.shape)
        for j in range(kernel):
            gpad[j:j + steps] += gm
        gx = np.zeros_like(moved)
        np.add.at(gx, index, gpad)
        _accumulate(x, np.moveaxis(gx, 0, ax))

    return _result(out, (x,), "moving_average", backward)


def exact_split(x: ArrayLike, trend: ArrayLike) -> Tuple[Tensor, Tensor]:
    """Split x into (x - trend, trend) whose float sum gives back x exactly.

    The trend is snapped to the spacing of x so the subtraction is exact. Where
    no representable trend satisfies the identity (an average dwarfing its
    sample by ~2**53) the sample goes wholly to the seasonal part. Gradients
    pass through as if the trend were unchanged.
    """
    x, trend = as_tensor(x), as_tensor(trend)
    if x.shape != trend.shape:
        raise ShapeMismatch("exact_split", x.shape, trend.shape)
    xv, mv = x.data, trend.data
    step = np.spacing(np.abs(xv))
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        snapped = np.where(np.spacing(np.abs(mv)) >= step, mv, np.rint(mv / step) * step)
        seasonal = xv - snapped
        off = seasonal + snapped != xv
    snapped = np.where(off, 0.0, snapped)
    seasonal = np.where(off, xv, seasonal)

    def seasonal_backward(g):
        _accumulate(x, g)
        _accumulate(trend, -g)

    def trend_backward(g):
        _accumulate(trend, g)

    return (_result(seasonal, (x, trend), "exact_split", seasonal_backward),
            _result(snapped, (trend,), "exact_split", trend_backward))


def dropout(x: ArrayLike, rate: float, train: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    x = as_tensor(x)
    if not train or rate <= 0.0:
        return x
    rng = rng if rng is not None else np.random.default_rng()
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _result(x.data * keep, (x,), "dropout", lambda g: _accumulate(x, g * keep))


# Real FFT (unnormalised forward, 1/N on the inverse)

@lru_cache(maxsize=64)
def _dft_basis(n: int) -> Tuple[np.ndarray, np.ndarray]:
    bins = n // 2 + 1
    angle = 2.0 * np.pi * np.outer(np.arange(bins), np.arange(n)) / n
    cos, sin = np.cos(angle), -np.sin(angle)
    cos.setflags(write=False)
    sin.setflags(write=False)
    return cos, sin


@lru_cache(maxsize=64)
def _inverse_basis(n: int) -> Tuple[np.ndarray, np.ndarray]:
    bins = n // 2 + 1
    weights = np.full(bins, 2.0)
    weights[0] = 1.0
    if n % 2 == 0:
        weights[-1] = 1.0
    angle = 2.0 * np.pi * np.outer(np.arange(n), np.arange(bins)) / n
    real = weights * np.cos(angle) / n
    imag = -weights * np.sin(angle) / n
    real.setflags(write=False)
    imag.setflags(write=False)
    return real, imag


def rfft(x: ArrayLike, axis: int = -2) -> Tensor:
    """Half-spectrum FFT along `axis`; the result gains a trailing (real, imag) axis."""
    x = as_tensor(x)
    ax = axis % x.ndim
    moved = np.moveaxis(x.data, ax, -1)
    n = moved.shape[-1]
    spectrum = np.fft.rfft(moved, axis=-1)
    out = np.moveaxis(np.stack([spectrum.real, spectrum.imag], axis=-1), -2, ax)

    def backward(g):
        gm = np.moveaxis(g, ax, -2)
        cos, sin = _dft_basis(n)
        gx = gm[..., 0] @ cos + gm[..., 1] @ sin
        _accumulate(x, np.moveaxis(gx, -1, ax))

    return _result(out, (x,), "rfft", backward)


def irfft(z: ArrayLike, n: int, axis: int = -2) -> Tensor:
    """Inverse of `rfft`: `z` holds n//2+1 bins along `axis` and a trailing pair axis."""
    z = as_tensor(z)
    if z.ndim < 2 or z.shape[-1] != 2:
        raise ShapeMismatch("irfft", z.shape, detail="expected trailing (real, imag) axis")
    ax = axis % (z.ndim - 1)
    if z.shape[ax] != n // 2 + 1:
        raise ShapeMismatch("irfft", z.shape, (n // 2 + 1,), detail=f"bins along axis {ax} for n={n}")
    moved = np.moveaxis(z.data, ax, -2)
    out = np.moveaxis(np.fft.irfft(moved[..., 0] + 1j * moved[..., 1], n=n, axis=-1), -1, ax)

    def backward(g):
        gm = np.moveaxis(g, ax, -1)
        real, imag = _inverse_basis(n)
        gz = np.stack([gm @ real, gm @ imag], axis=-1)
        _accumulate(z, np.moveaxis(gz, -2, ax))

    return _result(out, (z,), "irfft", backward)


# Graph evaluation

@dataclass
class Context:
    """Per-pass evaluation state handed to every block."""
    train: bool = False
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))


ForwardFn = Callable[[Mapping[str, Tensor], Context], Dict[str, Tensor]]


class Graph:
    def __init__(self, fn: ForwardFn, parameters: Mapping[str, Tensor], input_names: Sequence[str]):
        self.fn = fn
        self.parameters: Dict[str, Tensor] = dict(parameters)
        self.input_names: Tuple[str, ...] = tuple(input_names)
        self.nodes: List[Tensor] = []

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters.values())


def topological_order(*roots: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    seen = set()
    for root in roots:
        if id(root) in seen:
            continue
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
    return order


def forward(graph: Graph, inputs: Mapping[str, ArrayLike], train: bool = False,
            rng: Optional[np.random.Generator] = None) -> Dict[str, Tensor]:
    missing = [name for name in graph.input_names if name not in inputs]
    if missing:
        raise UnboundInput(f"Unbound graph inputs: {', '.join(missing)}")
    bound = {name: as_tensor(value) for name, value in inputs.items()}
    ctx = Context(train=train, rng=rng if rng is not None else np.random.default_rng(0))
    outputs = graph.fn(bound, ctx)
    graph.nodes = topological_order(*outputs.values())
    return outputs


def backward(graph: Graph, loss: Tensor) -> Dict[str, np.ndarray]:
    if loss.size != 1:
        raise NotScalarLoss(f"Loss must be scalar, got shape {loss.shape}")
    order = topological_order(loss)
    for node in order:
        node.grad = None
    for p in graph.parameters.values():
        p.grad = None
    loss.grad = np.ones(loss.shape)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    return {
        name: (p.grad if p.grad is not None else np.zeros(p.shape))
        for name, p in graph.parameters.items()
    }


def grad_check(graph: Graph, inputs: Mapping[str, ArrayLike], eps: float = 1e-5,
               max_entries: Optional[int] = None, seed: int = 0, floor: float = 1e-3) -> float:
    """Max elementwise relative error between analytic and central-difference gradients.

    Non-scalar outputs are reduced with a fixed random projection so every
    output element contributes. `max_entries` samples that many entries per
    parameter tensor instead of perturbing all of them.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    rng = np.random.default_rng(seed)
    outputs = forward(graph, inputs)
    first = next(iter(outputs))
    projection = rng.standard_normal(outputs[first].shape)

    def objective() -> float:
        return float(np.sum(forward(graph, inputs)[first].data * projection))

    analytic = backward(graph, reduce_sum(mul(outputs[first], projection)))
    worst = 0.0
    for name, p in graph.parameters.items():
        if not p.requires_grad:
            continue
        original = p.data
        work = np.array(original, copy=True)
        flat = work.reshape(-1)
        p.assign(work)
        entries = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            entries = rng.choice(flat.size, size=max_entries, replace=False)
        for i in entries:
            base = flat[i]
            flat[i] = base + eps
            upper = objective()
            flat[i] = base - eps
            lower = objective()
            flat[i] = base
            numeric = (upper - lower) / (2.0 * eps)
            exact = analytic[name].reshape(-1)[i]
            worst = max(worst, abs(exact - numeric) / max(abs(exact), abs(numeric), floor))
        p.assign(original)
    return worst


def count_parameters(parameters: Iterable[Tensor]) -> int:
    return sum(p.size for p in parameters)
