"""Layer container, MIMO valid convolution and reverse-mode gradients.

Signals are float64 arrays shaped ``(count, channels, height, width)``.
A layer holds ``n x m`` kernels of size ``a x b`` in an ``(n, m, a, b)``
array; a dense layer is the ``a = b = 1`` case. Convolution is "valid"
correlation: ``out[k] = sum_j theta[k, j] * x[j] + bias[k]`` where
``*`` slides the kernel without flipping it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

ACTIVATIONS = ("relu", "identity")

# Above this many output coordinates, exact per-coordinate backprop is
# replaced by random Gaussian probes.
EXACT_OUTPUT_LIMIT = 256


class ShapeError(ValueError):
    """Raised when a layer and a signal (or two layers) do not conform."""

    def __init__(self, message: str, layer: str | int | None = None, expected=None, actual=None):
        self.layer = layer
        self.expected = expected
        self.actual = actual
        where = f"layer {layer!r}: " if layer is not None else ""
        detail = ""
        if expected is not None or actual is not None:
            detail = f" (expected {expected}, got {actual})"
        super().__init__(f"{where}{message}{detail}")


@dataclass(frozen=True)
class WeightTensor:
    """Weights of one dense or convolutional layer, ``(n, m, a, b)`` layout."""

    data: np.ndarray
    bias: np.ndarray | None = None
    kind: str | None = None
    name: str = ""

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None, None]
        if data.ndim != 4 or min(data.shape) < 1:
            raise ShapeError("weights must be a non-empty (n, m, a, b) array",
                             self.name or None, "4-d", data.shape)
        if not np.all(np.isfinite(data)):
            raise ValueError(f"layer {self.name!r}: weights contain NaN or Inf")
        n = data.shape[0]
        if self.bias is None:
            bias = np.zeros(n)
        else:
            bias = np.array(self.bias, dtype=np.float64).reshape(-1)
            if bias.shape != (n,):
                raise ShapeError("bias length must equal output channels",
                                 self.name or None, (n,), bias.shape)
            if not np.all(np.isfinite(bias)):
                raise ValueError(f"layer {self.name!r}: bias contains NaN or Inf")
        kind = self.kind
        if kind is None:
            kind = "dense" if data.shape[2:] == (1, 1) else "conv"
        if kind not in ("dense", "conv"):
            raise ValueError(f"unknown layer kind {kind!r}")
        if kind == "dense" and data.shape[2:] != (1, 1):
            raise ShapeError("dense layers need 1x1 kernels", self.name or None,
                             (1, 1), data.shape[2:])
        data.setflags(write=False)
        bias.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "bias", bias)
        object.__setattr__(self, "kind", kind)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def m(self) -> int:
        return self.data.shape[1]

    @property
    def a(self) -> int:
        return self.data.shape[2]

    @property
    def b(self) -> int:
        return self.data.shape[3]

    @property
    def size(self) -> int:
        return self.data.size

    def with_data(self, data: np.ndarray) -> "WeightTensor":
        """Copy of this layer with the weights replaced and the bias kept."""
        return WeightTensor(np.asarray(data).reshape(self.shape), self.bias, self.kind, self.name)

    def scaled(self, alpha: float) -> "WeightTensor":
        return self.with_data(alpha * self.data)


def as_signal(x, channels: int | None = None, layer=None) -> np.ndarray:
    """Validate and convert a signal batch to a float64 4-d array."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, :, None, None]
    if x.ndim != 4:
        raise ShapeError("signal batch must be (count, channels, H, W)", layer, "4-d", x.shape)
    if channels is not None and x.shape[1] != channels:
        raise ShapeError("input channel count mismatch", layer, channels, x.shape[1])
    return x


def _windows(x: np.ndarray, a: int, b: int) -> np.ndarray:
    # (count, m, H', W', a, b) read-only view
    return sliding_window_view(x, (a, b), axis=(2, 3))


def conv_forward(layer: WeightTensor, x) -> np.ndarray:
    """Apply a layer to a signal batch using valid 2-d correlation."""
    label = layer.name or None
    x = as_signal(x, layer.m, label)
    h, w = x.shape[2:]
    if h < layer.a or w < layer.b:
        raise ShapeError("input smaller than kernel", label, (layer.a, layer.b), (h, w))
    if layer.a == 1 and layer.b == 1:
        out = np.einsum("cmhw,nm->cnhw", x, layer.data[:, :, 0, 0])
    else:
        win = _windows(x, layer.a, layer.b)
        out = np.tensordot(win, layer.data, axes=([1, 4, 5], [1, 2, 3]))
        out = out.transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out) + layer.bias[None, :, None, None]


def _conv_input_grad(g: np.ndarray, data: np.ndarray, in_hw: tuple[int, int]) -> np.ndarray:
    """Adjoint of valid correlation w.r.t. its input.

    ``g`` has shape (..., n, H', W'); result has shape (..., m, H, W).
    """
    n, m, a, b = data.shape
    lead = g.shape[:-3]
    hp, wp = g.shape[-2:]
    dx = np.zeros(lead + (m,) + tuple(in_hw))
    for i in range(a):
        for j in range(b):
            dx[..., i:i + hp, j:j + wp] += np.einsum("...nhw,nm->...mhw", g, data[:, :, i, j])
    return dx


@dataclass(frozen=True)
class Network:
    """Feed-forward chain of layers, each followed by its activation."""

    layers: tuple
    activations: tuple
    input_shape: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        acts = tuple(self.activations)
        shape = tuple(int(s) for s in self.input_shape)
        if not layers:
            raise ValueError("network needs at least one layer")
        if len(acts) != len(layers):
            raise ValueError("one activation per layer is required")
        for act in acts:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        if acts[-1] != "identity":
            raise ValueError("the last layer must have identity activation (logits)")
        if len(shape) != 3:
            raise ShapeError("input_shape must be (channels, H, W)", None, 3, len(shape))
        c, h, w = shape
        for idx, layer in enumerate(layers):
            if layer.m != c:
                raise ShapeError("input channel count mismatch", layer.name or idx, layer.m, c)
            if h < layer.a or w < layer.b:
                raise ShapeError("input smaller than kernel", layer.name or idx,
                                 (layer.a, layer.b), (h, w))
            c, h, w = layer.n, h - layer.a + 1, w - layer.b + 1
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "activations", acts)
        object.__setattr__(self, "input_shape", shape)

    @classmethod
    def chain(cls, layers: Sequence[WeightTensor], input_shape) -> "Network":
        """ReLU after every layer except the last."""
        acts = ["relu"] * (len(layers) - 1) + ["identity"]
        return cls(tuple(layers), tuple(acts), tuple(input_shape))

    def shapes(self) -> list[tuple[int, int, int]]:
        """Signal shape at the input of each layer, followed by the output shape."""
        c, h, w = self.input_shape
        out = [(c, h, w)]
        for layer in self.layers:
            c, h, w = layer.n, h - layer.a + 1, w - layer.b + 1
            out.append((c, h, w))
        return out

    @property
    def output_shape(self) -> tuple[int, int, int]:
        return self.shapes()[-1]

    @property
    def output_size(self) -> int:
        return int(np.prod(self.output_shape))

    @property
    def weight_count(self) -> int:
        return sum(layer.size for layer in self.layers)

    def replace(self, index: int, layer: WeightTensor) -> "Network":
        if layer.shape != self.layers[index].shape:
            raise ShapeError("replacement layer has a different shape", index,
                             self.layers[index].shape, layer.shape)
        layers = list(self.layers)
        layers[index] = layer
        return Network(tuple(layers), self.activations, self.input_shape)

    def with_layers(self, layers: Sequence[WeightTensor]) -> "Network":
        return Network(tuple(layers), self.activations, self.input_shape)


def _activate(z: np.ndarray, act: str) -> np.ndarray:
    if act == "relu":
        return np.maximum(z, 0.0)
    return z


def _check_input(net: Network, x) -> np.ndarray:
    x = as_signal(x)
    if x.shape[1:] != net.input_shape:
        raise ShapeError("network input shape mismatch", None, net.input_shape, x.shape[1:])
    return x


def network_forward(net: Network, x) -> np.ndarray:
    """Evaluate ``f_L(... f_1(Theta_1 x))`` on a batch."""
    h = _check_input(net, x)
    for layer, act in zip(net.layers, net.activations):
        h = _activate(conv_forward(layer, h), act)
    return h


def layer_inputs(net: Network, x) -> list[np.ndarray]:
    """Activations entering each layer, plus the network output at the end."""
    h = _check_input(net, x)
    out = [h]
    for layer, act in zip(net.layers, net.activations):
        h = _activate(conv_forward(layer, h), act)
        out.append(h)
    return out


def forward_from(net: Network, start: int, h: np.ndarray, layer: WeightTensor | None = None) -> np.ndarray:
    """Run layers ``start..L-1`` on ``h``, optionally substituting layer ``start``."""
    for idx in range(start, len(net.layers)):
        lay = layer if (idx == start and layer is not None) else net.layers[idx]
        h = _activate(conv_forward(lay, h), net.activations[idx])
    return h


@dataclass(frozen=True)
class GradientBatch:
    """Gradients of output probes w.r.t. one layer's weights.

    ``values`` has shape ``(count, probes, n, m, a, b)``. With exact
    gradients each probe is one output coordinate and ``weight`` is 1; with
    random probes ``weight`` is ``1 / probes`` so that summing weighted
    outer products over probes is an unbiased estimate of the exact sum.
    """

    values: np.ndarray
    exact: bool
    weight: float


def layer_output_gradients(net: Network, layer_index: int, x, probes: int | None = None,
                           rng: np.random.Generator | None = None,
                           exact_limit: int = EXACT_OUTPUT_LIMIT) -> GradientBatch:
    """Reverse-mode gradients of the outputs w.r.t. ``net.layers[layer_index]``.

    Exact per-output-coordinate gradients are returned when the output has
    at most ``exact_limit`` coordinates and ``probes`` is None. Otherwise
    ``probes`` standard-normal vectors ``v`` are drawn per sample and the
    gradient of ``v . y`` is returned. ReLU has derivative 0 at 0.
    """
    if not 0 <= layer_index < len(net.layers):
        raise IndexError(f"layer index {layer_index} out of range")
    acts = layer_inputs(net, x)
    count = acts[0].shape[0]
    out_shape = net.output_shape
    n_out = int(np.prod(out_shape))
    exact = probes is None and n_out <= exact_limit
    if exact:
        eye = np.eye(n_out).reshape((n_out,) + out_shape)
        g = np.broadcast_to(eye, (count,) + eye.shape).copy()
        weight = 1.0
    else:
        p = probes or 64
        rng = rng if rng is not None else np.random.default_rng(0)
        g = rng.standard_normal((count, p) + out_shape)
        weight = 1.0 / p

    for idx in range(len(net.layers) - 1, layer_index - 1, -1):
        layer = net.layers[idx]
        if net.activations[idx] == "relu":
            # acts[idx + 1] = relu(z) > 0 exactly where z > 0
            g = g * (acts[idx + 1] > 0)[:, None]
        h_in = acts[idx]
        if idx == layer_index:
            win = _windows(h_in, layer.a, layer.b)  # (c, m, H', W', a, b)
            grads = np.einsum("cpnhw,cmhwab->cpnmab", g, win, optimize=True)
            return GradientBatch(grads, exact, weight)
        g = _conv_input_grad(g, layer.data, h_in.shape[2:])
    raise AssertionError("unreachable")


def output_distortion(net_ref: Network, net_quant: Network, calib) -> float:
    """Mean over samples of the squared Euclidean norm of the output difference."""
    x = as_signal(calib)
    if x.shape[0] == 0:
        raise ValueError("calibration batch is empty")
    if len(net_ref.layers) != len(net_quant.layers) or any(
            p.shape != q.shape for p, q in zip(net_ref.layers, net_quant.layers)):
        raise ShapeError("networks do not share an architecture")
    diff = network_forward(net_quant, x) - network_forward(net_ref, x)
    return float(np.mean(np.sum(diff.reshape(diff.shape[0], -1) ** 2, axis=1)))


def squared_error(y_ref: np.ndarray, y: np.ndarray) -> float:
    """Same statistic as :func:`output_distortion`, on precomputed outputs."""
    diff = (y - y_ref).reshape(y.shape[0], -1)
    return float(np.mean(np.sum(diff * diff, axis=1)))


def top1_agreement(y_ref: np.ndarray, y: np.ndarray) -> float:
    """Fraction of samples whose arg-max output coordinate is unchanged."""
    a = y_ref.reshape(y_ref.shape[0], -1).argmax(axis=1)
    b = y.reshape(y.shape[0], -1).argmax(axis=1)
    return float(np.mean(a == b))
