"""Layer primitives with explicit forward and reverse passes.

Every layer is stateless: parameters are passed in, and forward returns the
output together with a cache that backward consumes. Inputs are batched
NCHW (or N x features) float64 arrays.
"""
from typing import Dict, List, Tuple
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

Params = Dict[str, np.ndarray]


def _out_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


class Layer:
    """Base layer; parameter-free by default."""

    def init(self, rng: np.random.Generator, in_shape: Tuple[int, ...]) -> Params:
        return {}

    def output_shape(self, in_shape: Tuple[int, ...]) -> Tuple[int, ...]:
        return in_shape

    def forward(self, params: Params, x: np.ndarray):
        raise NotImplementedError

    def backward(self, params: Params, cache, dy: np.ndarray) -> Tuple[np.ndarray, Params]:
        raise NotImplementedError


class Conv2D(Layer):
    """Cross-correlation via im2col over strided sliding windows."""

    def __init__(self, out_channels: int, kernel: int, stride: int = 1, pad: int = 0):
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.pad = pad

    def init(self, rng, in_shape):
        c = in_shape[0]
        fan_in = c * self.kernel * self.kernel
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(self.out_channels, c, self.kernel, self.kernel))
        return {"W": w, "b": np.zeros(self.out_channels)}

    def output_shape(self, in_shape):
        c, h, w = in_shape
        return (self.out_channels,
                _out_size(h, self.kernel, self.stride, self.pad),
                _out_size(w, self.kernel, self.stride, self.pad))

    def _padded(self, x: np.ndarray) -> np.ndarray:
        if self.pad == 0:
            return x
        p = self.pad
        return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))

    def forward(self, params, x):
        n, c = x.shape[:2]
        k, s = self.kernel, self.stride
        xp = self._padded(x)
        windows = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        ho, wo = windows.shape[2], windows.shape[3]
        cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho, wo, c * k * k)
        w2 = params["W"].reshape(self.out_channels, -1)
        y = cols @ w2.T + params["b"]
        return y.transpose(0, 3, 1, 2), (x.shape, xp.shape, cols)

    def backward(self, params, cache, dy):
        x_shape, xp_shape, cols = cache
        n, c = x_shape[:2]
        k, s, p = self.kernel, self.stride, self.pad
        o = self.out_channels
        ho, wo = dy.shape[2], dy.shape[3]

        dy_t = dy.transpose(0, 2, 3, 1)
        w2 = params["W"].reshape(o, -1)
        dw = (dy_t.reshape(-1, o).T @ cols.reshape(-1, c * k * k)).reshape(params["W"].shape)
        db = dy_t.sum(axis=(0, 1, 2))

        dcols = (dy_t @ w2).reshape(n, ho, wo, c, k, k)
        dxp = np.zeros(xp_shape)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        dx = dxp[:, :, p:xp_shape[2] - p, p:xp_shape[3] - p] if p else dxp
        return dx, {"W": dw, "b": db}


class MaxPool2D(Layer):

    def __init__(self, kernel: int, stride: int):
        self.kernel = kernel
        self.stride = stride

    def output_shape(self, in_shape):
        c, h, w = in_shape
        return c, _out_size(h, self.kernel, self.stride, 0), _out_size(w, self.kernel, self.stride, 0)

    def forward(self, params, x):
        k, s = self.kernel, self.stride
        windows = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        flat = windows.reshape(windows.shape[:4] + (k * k,))
        argmax = flat.argmax(axis=-1)
        y = np.take_along_axis(flat, argmax[..., None], axis=-1)[..., 0]
        return y, (x.shape, argmax)

    def backward(self, params, cache, dy):
        x_shape, argmax = cache
        k, s = self.kernel, self.stride
        ho, wo = dy.shape[2], dy.shape[3]
        dx = np.zeros(x_shape)
        for i in range(k):
            for j in range(k):
                routed = np.where(argmax == i * k + j, dy, 0.0)
                dx[:, :, i:i + s * ho:s, j:j + s * wo:s] += routed
        return dx, {}


class ReLU(Layer):

    def forward(self, params, x):
        return np.maximum(x, 0.0), x > 0

    def backward(self, params, cache, dy):
        return dy * cache, {}


class Dense(Layer):
    """Fully connected layer; flattens spatial inputs."""

    def __init__(self, width: int, gain: float = 2.0):
        self.width = width
        self.gain = gain

    def init(self, rng, in_shape):
        fan_in = int(np.prod(in_shape))
        w = rng.normal(0.0, np.sqrt(self.gain / fan_in), size=(self.width, fan_in))
        return {"W": w, "b": np.zeros(self.width)}

    def output_shape(self, in_shape):
        return (self.width,)

    def forward(self, params, x):
        flat = x.reshape(x.shape[0], -1)
        return flat @ params["W"].T + params["b"], (x.shape, flat)

    def backward(self, params, cache, dy):
        x_shape, flat = cache
        dw = dy.T @ flat
        db = dy.sum(axis=0)
        dx = (dy @ params["W"]).reshape(x_shape)
        return dx, {"W": dw, "b": db}


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-sample cross-entropy and its gradient w.r.t. the logits."""
    z = logits - logits.max(axis=-1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    idx = np.arange(logits.shape[0])
    losses = -log_probs[idx, labels]
    dlogits = np.exp(log_probs)
    dlogits[idx, labels] -= 1.0
    return losses, dlogits


def run_forward(layers: List[Layer], params: List[Params], x: np.ndarray, stop: int = None):
    """Forward through layers[0..stop]; returns the per-layer outputs and caches."""
    last = len(layers) - 1 if stop is None else stop
    outputs, caches = [], []
    h = x
    for layer, p in zip(layers[:last + 1], params[:last + 1]):
        h, cache = layer.forward(p, h)
        outputs.append(h)
        caches.append(cache)
    return outputs, caches


def run_backward(layers: List[Layer], params: List[Params], caches: List, grads_out: Dict[int, np.ndarray]):
    """
    Reverse pass seeded by output gradients at one or more layer indices.

    Args:
        grads_out: layer index -> gradient of the objective w.r.t. that layer's output

    Returns:
        (gradient w.r.t. the network input, per-layer parameter gradients)
    """
    top = max(grads_out)
    param_grads: List[Params] = [{} for _ in layers]
    dy = None
    for i in range(top, -1, -1):
        if i in grads_out:
            dy = grads_out[i] if dy is None else dy + grads_out[i]
        dy, param_grads[i] = layers[i].backward(params[i], caches[i], dy)
    return dy, param_grads
