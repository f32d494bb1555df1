"""Oracles the attacks query: normalized score (+ gradient) and decision-only views."""
import threading
from collections import Counter
from typing import Callable, Optional
import numpy as np
from app.errors import CapabilityError
from app.utils.logger import get_logger
from verification.wd_svm import WdModel, is_genuine

logger = get_logger(__name__)


class VerifierOracle:
    """
    s_tilde(X) = s(phi(X)) - tau for one user's model.

    The gradient is available only when the feature extractor is differentiable.
    `provenance` tells which side (target or attacker surrogate) the oracle belongs to.
    """
    has_score = True

    def __init__(self, extractor, model: WdModel, tau: float, provenance: str = "target"):
        self.extractor = extractor
        self.model = model
        self.tau = float(tau)
        self.provenance = provenance

    @property
    def has_gradient(self) -> bool:
        return bool(self.extractor.differentiable)

    def score(self, img: np.ndarray) -> float:
        return self.model.score(self.extractor.extract(img)) - self.tau

    def gradient(self, img: np.ndarray) -> np.ndarray:
        if not self.has_gradient:
            raise CapabilityError(f"{type(self.extractor).__name__} is not differentiable")

        def head(phi):
            return self.model.score(phi), self.model.gradient(phi)

        return self.extractor.input_gradient(img, head)

    def decide(self, img: np.ndarray) -> bool:
        return is_genuine(self.score(img))


class FunctionOracle:
    """Score oracle over plain callables; handy for analytic models."""
    has_score = True

    def __init__(self, score_fn: Callable[[np.ndarray], float],
                 gradient_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None):
        self.score_fn = score_fn
        self.gradient_fn = gradient_fn

    @property
    def has_gradient(self) -> bool:
        return self.gradient_fn is not None

    def score(self, img: np.ndarray) -> float:
        return float(self.score_fn(img))

    def gradient(self, img: np.ndarray) -> np.ndarray:
        if self.gradient_fn is None:
            raise CapabilityError("oracle has no gradient")
        return np.asarray(self.gradient_fn(img), dtype=np.float64)

    def decide(self, img: np.ndarray) -> bool:
        return is_genuine(self.score(img))


class DecisionOracle:
    """Exposes only accept/reject, from a callable or by hiding a score oracle."""
    has_score = False
    has_gradient = False

    def __init__(self, source):
        self._decide = source.decide if hasattr(source, "decide") else source

    def score(self, img: np.ndarray) -> float:
        raise CapabilityError("decision-only oracle has no score")

    def gradient(self, img: np.ndarray) -> np.ndarray:
        raise CapabilityError("decision-only oracle has no gradient")

    def decide(self, img: np.ndarray) -> bool:
        return bool(self._decide(img))


class CountingOracle:
    """Wraps an oracle and counts score, gradient and decision queries."""

    def __init__(self, inner):
        self.inner = inner
        self.calls = Counter()
        self._lock = threading.Lock()

    @property
    def has_score(self) -> bool:
        return getattr(self.inner, "has_score", False)

    @property
    def has_gradient(self) -> bool:
        return getattr(self.inner, "has_gradient", False)

    def _count(self, kind: str):
        with self._lock:
            self.calls[kind] += 1

    def score(self, img: np.ndarray) -> float:
        self._count("score")
        return self.inner.score(img)

    def gradient(self, img: np.ndarray) -> np.ndarray:
        self._count("gradient")
        return self.inner.gradient(img)

    def decide(self, img: np.ndarray) -> bool:
        self._count("decide")
        return self.inner.decide(img)
