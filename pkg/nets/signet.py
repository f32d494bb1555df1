"""SigNet-style network specs, trained-net container and differentiation entry points."""
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple
import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from app.config import settings
from app.errors import DimensionMismatch, NonFiniteError
from app.utils.logger import get_logger
from nets.engine import Conv2D, Dense, Layer, MaxPool2D, Params, ReLU, cross_entropy, run_backward, run_forward

logger = get_logger(__name__)

PIXEL_SCALE = 255.0


class LayerKind(str, Enum):
    CONV = "conv"
    MAX_POOL = "max_pool"
    RELU = "relu"
    FC = "fc"
    SOFTMAX_HEAD = "softmax_head"


class LayerSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: LayerKind
    out_channels: Optional[int] = None
    kernel: Optional[int] = None
    stride: int = 1
    pad: int = 0
    width: Optional[int] = None

    def build(self) -> Layer:
        if self.kind is LayerKind.CONV:
            return Conv2D(self.out_channels, self.kernel, self.stride, self.pad)
        if self.kind is LayerKind.MAX_POOL:
            return MaxPool2D(self.kernel, self.stride)
        if self.kind is LayerKind.RELU:
            return ReLU()
        if self.kind is LayerKind.FC:
            return Dense(self.width)
        return Dense(self.width, gain=1.0)


def conv(out_channels: int, kernel: int, stride: int = 1, pad: int = 0) -> LayerSpec:
    return LayerSpec(kind=LayerKind.CONV, out_channels=out_channels, kernel=kernel, stride=stride, pad=pad)


def max_pool(kernel: int = 3, stride: int = 2) -> LayerSpec:
    return LayerSpec(kind=LayerKind.MAX_POOL, kernel=kernel, stride=stride)


def relu() -> LayerSpec:
    return LayerSpec(kind=LayerKind.RELU)


def fully_connected(width: int) -> LayerSpec:
    return LayerSpec(kind=LayerKind.FC, width=width)


def softmax_head(num_classes: int) -> LayerSpec:
    return LayerSpec(kind=LayerKind.SOFTMAX_HEAD, width=num_classes)


class NetSpec(BaseModel):
    """Ordered layers ending in exactly one softmax head; embedding_layer indexes phi(X)."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str
    input_shape: Tuple[int, int, int] = (1, 150, 220)
    layers: Tuple[LayerSpec, ...]
    embedding_layer: int

    @model_validator(mode="after")
    def check_head(self):
        heads = [i for i, l in enumerate(self.layers) if l.kind is LayerKind.SOFTMAX_HEAD]
        if heads != [len(self.layers) - 1]:
            raise ValueError("exactly one softmax head is required, as the last layer")
        if not 0 <= self.embedding_layer < heads[0]:
            raise ValueError("embedding layer must precede the softmax head")
        return self

    @property
    def num_classes(self) -> int:
        return self.layers[-1].width

    def build(self) -> List[Layer]:
        return [spec.build() for spec in self.layers]

    def shapes(self) -> List[Tuple[int, ...]]:
        """Output shape of every layer, excluding the batch axis."""
        shapes, shape = [], tuple(self.input_shape)
        for layer in self.build():
            shape = layer.output_shape(shape)
            shapes.append(shape)
        return shapes

    def init_params(self, rng: np.random.Generator) -> List[Params]:
        params, shape = [], tuple(self.input_shape)
        for layer in self.build():
            params.append(layer.init(rng, shape))
            shape = layer.output_shape(shape)
        return params


def _signet_layers(channels: Sequence[int], embedding: int, num_classes: int) -> Tuple[List[LayerSpec], int]:
    geometry = [(11, 4, 0), (5, 1, 2), (3, 1, 1)]
    layers: List[LayerSpec] = []
    for ch, (k, s, p) in zip(channels, geometry):
        layers += [conv(ch, k, s, p), relu(), max_pool(3, 2)]
    layers += [fully_connected(embedding), relu()]
    emb_index = len(layers) - 1
    layers.append(softmax_head(num_classes))
    return layers, emb_index


def mini_signet(num_classes: int, embedding: Optional[int] = None) -> NetSpec:
    """conv16@11 s4, conv32@5 p2, conv48@3 p1 (each ReLU + pool 3/2), FC embedding, softmax."""
    layers, emb = _signet_layers((16, 32, 48), embedding or settings.cnn_embedding_width, num_classes)
    return NetSpec(name="mini_signet", layers=tuple(layers), embedding_layer=emb)


def mini_signet_thin(num_classes: int, embedding: Optional[int] = None) -> NetSpec:
    layers, emb = _signet_layers((8, 16, 24), embedding or settings.cnn_embedding_width, num_classes)
    return NetSpec(name="mini_signet_thin", layers=tuple(layers), embedding_layer=emb)


def mini_signet_smaller(num_classes: int, embedding: Optional[int] = None) -> NetSpec:
    layers, emb = _signet_layers((16, 32), embedding or settings.cnn_embedding_width, num_classes)
    return NetSpec(name="mini_signet_smaller", layers=tuple(layers), embedding_layer=emb)


SPEC_BUILDERS: Dict[str, Callable[[int], NetSpec]] = {
    "mini_signet": mini_signet,
    "mini_signet_thin": mini_signet_thin,
    "mini_signet_smaller": mini_signet_smaller,
}


@dataclass(eq=False)
class TrainedNet:
    spec: NetSpec
    params: List[Params]
    training_users: Tuple[int, ...] = ()
    metadata: Dict[str, Any] = field(default_factory=dict)
    _layers: List[Layer] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self._layers is None:
            self._layers = self.spec.build()
        expected = self.spec.init_params(np.random.default_rng(0))
        for i, (got, want) in enumerate(zip(self.params, expected)):
            for key, arr in want.items():
                if key not in got or got[key].shape != arr.shape:
                    raise DimensionMismatch(f"layer {i} parameter {key} does not match spec")

    @property
    def layers(self) -> List[Layer]:
        return self._layers

    @property
    def class_count(self) -> int:
        return self.spec.num_classes


def _check_finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {what}")
    return arr


def _as_batch(net: TrainedNet, images: np.ndarray) -> np.ndarray:
    x = np.asarray(images, dtype=np.float64)
    c, h, w = net.spec.input_shape
    if x.ndim == 2:
        x = x[None]
    if x.shape[1:] != (h, w) or c != 1:
        raise DimensionMismatch(f"network expects {h}x{w} single-channel input, got {x.shape[1:]}")
    return x[:, None, :, :] / PIXEL_SCALE


def forward_batch(net: TrainedNet, images: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    outputs, _ = run_forward(net.layers, net.params, _as_batch(net, images))
    logits = _check_finite(outputs[-1], "logits")
    return logits, outputs[net.spec.embedding_layer]


def forward(net: TrainedNet, img: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Logits and embedding of a single image."""
    logits, emb = forward_batch(net, img)
    return logits[0], emb[0].ravel()


def embed_batch(net: TrainedNet, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Embeddings phi(X) for a stack of images (stops at the embedding layer)."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 2:
        images = images[None]
    chunks = []
    for start in range(0, len(images), batch_size):
        outputs, _ = run_forward(net.layers, net.params, _as_batch(net, images[start:start + batch_size]),
                                 stop=net.spec.embedding_layer)
        chunks.append(outputs[-1].reshape(outputs[-1].shape[0], -1))
    return _check_finite(np.concatenate(chunks), "embeddings")


# OBJECTIVES
# Each objective returns (value summed over the batch, gradient w.r.t. logits or None,
# gradient w.r.t. embedding or None).

class Objective:
    needs_logits = True

    def evaluate(self, logits: Optional[np.ndarray], embedding: np.ndarray):
        raise NotImplementedError


class CrossEntropyObjective(Objective):

    def __init__(self, labels: Sequence[int]):
        self.labels = np.asarray(labels, dtype=np.int64)

    def evaluate(self, logits, embedding):
        losses, dlogits = cross_entropy(logits, self.labels)
        return float(losses.sum()), dlogits, None


class LogitObjective(Objective):

    def __init__(self, index: int):
        self.index = index

    def evaluate(self, logits, embedding):
        d = np.zeros_like(logits)
        d[:, self.index] = 1.0
        return float(logits[:, self.index].sum()), d, None


class EmbeddingObjective(Objective):
    """Downstream scalar head on phi(X), e.g. an SVM score: fn(phi) -> (value, d value / d phi)."""
    needs_logits = False

    def __init__(self, fn: Callable[[np.ndarray], Tuple[float, np.ndarray]]):
        self.fn = fn

    def evaluate(self, logits, embedding):
        flat = embedding.reshape(embedding.shape[0], -1)
        values, grads = zip(*(self.fn(row) for row in flat))
        return float(np.sum(values)), None, np.stack(grads).reshape(embedding.shape)


class ConstantObjective(Objective):
    needs_logits = False

    def __init__(self, value: float = 0.0):
        self.value = value

    def evaluate(self, logits, embedding):
        return self.value * embedding.shape[0], None, np.zeros_like(embedding)


def objective_value_and_input_gradient(net: TrainedNet, images: np.ndarray,
                                       objective: Objective) -> Tuple[float, np.ndarray]:
    """Objective (summed over the batch) and per-image gradients in pixel units."""
    x = _as_batch(net, images)
    emb_index = net.spec.embedding_layer
    stop = None if objective.needs_logits else emb_index
    outputs, caches = run_forward(net.layers, net.params, x, stop=stop)
    logits = outputs[-1] if objective.needs_logits else None
    value, dlogits, demb = objective.evaluate(logits, outputs[emb_index])

    seeds = {}
    if dlogits is not None:
        seeds[len(net.layers) - 1] = dlogits
    if demb is not None:
        seeds[emb_index] = demb
    dx, _ = run_backward(net.layers[:len(caches)], net.params[:len(caches)], caches, seeds)
    grad = dx[:, 0] / PIXEL_SCALE
    return value, _check_finite(grad, "input gradient")


def input_gradient(net: TrainedNet, img: np.ndarray, objective: Objective) -> np.ndarray:
    """d objective / d X for a single image, shaped like the image."""
    _, grad = objective_value_and_input_gradient(net, img, objective)
    return grad[0]


def loss_and_param_gradients(params: List[Params], net: TrainedNet, images: np.ndarray,
                             labels: Sequence[int]) -> Tuple[float, List[Params], np.ndarray]:
    """Mean cross-entropy, its parameter gradients and the logits, for explicit params."""
    x = _as_batch(net, images)
    outputs, caches = run_forward(net.layers, params, x)
    logits = outputs[-1]
    losses, dlogits = cross_entropy(logits, np.asarray(labels, dtype=np.int64))
    n = x.shape[0]
    _, grads = run_backward(net.layers, params, caches, {len(net.layers) - 1: dlogits / n})
    return float(losses.mean()), grads, logits


def param_gradients(net: TrainedNet, batch: np.ndarray, labels: Sequence[int]) -> List[Params]:
    """Gradients of the mean cross-entropy w.r.t. every parameter tensor."""
    if len(batch) == 0:
        raise ValueError("batch must be nonempty")
    loss, grads, _ = loss_and_param_gradients(net.params, net, batch, labels)
    if not np.isfinite(loss):
        raise NonFiniteError("non-finite loss")
    for g in grads:
        for key, arr in g.items():
            _check_finite(arr, f"gradient {key}")
    return grads
