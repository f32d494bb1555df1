"""Feature extractors phi(X) used by the writer-dependent classifiers."""
from typing import Callable, Optional, Tuple
import numpy as np
from app.errors import CapabilityError
from app.models import ClbpParams, FeatureKind
from app.utils.logger import get_logger
from nets.signet import EmbeddingObjective, TrainedNet, embed_batch, input_gradient
from processors.clbp_processor import ClbpProcessor

logger = get_logger(__name__)


class ClbpFeatures:
    """Handcrafted CLBP histograms; not differentiable."""
    kind = FeatureKind.CLBP
    differentiable = False

    def __init__(self, params: Optional[ClbpParams] = None):
        self.params = params or ClbpParams()
        self.processor = ClbpProcessor(self.params)

    def extract(self, img: np.ndarray) -> np.ndarray:
        return self.processor.extract(img)

    def extract_batch(self, images: np.ndarray) -> np.ndarray:
        return np.stack([self.extract(img) for img in images])

    def input_gradient(self, img: np.ndarray, fn: Callable[[np.ndarray], Tuple[float, np.ndarray]]) -> np.ndarray:
        raise CapabilityError("CLBP features have no input gradient")


class CnnFeatures:
    """Embedding layer of a trained CNN; gradients flow back to the pixels."""
    kind = FeatureKind.CNN
    differentiable = True

    def __init__(self, net: TrainedNet):
        self.net = net

    def extract(self, img: np.ndarray) -> np.ndarray:
        return embed_batch(self.net, img)[0]

    def extract_batch(self, images: np.ndarray) -> np.ndarray:
        return embed_batch(self.net, images)

    def input_gradient(self, img: np.ndarray, fn: Callable[[np.ndarray], Tuple[float, np.ndarray]]) -> np.ndarray:
        """Gradient w.r.t. pixels of a scalar head fn(phi) -> (value, d value / d phi)."""
        return input_gradient(self.net, img, EmbeddingObjective(fn))
