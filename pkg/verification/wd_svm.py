"""Writer-dependent SVMs: training-set assembly, linear/RBF training, scores and gradients."""
import os
import warnings
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Sequence, Union
import numpy as np
from sklearn.exceptions import ConvergenceWarning
from sklearn.metrics.pairwise import euclidean_distances
from sklearn.svm import SVC
from app.config import settings
from app.errors import ConvergenceError, DimensionMismatch, FormatError, InsufficientData
from app.utils.logger import get_logger
from processors.image_processor import decode_sgf, encode_sgf

logger = get_logger(__name__)

SVM_MAGIC = b"SVM1"


def is_genuine(s_tilde: float) -> bool:
    """The acceptance rule used everywhere: normalized score >= 0 is genuine."""
    return bool(s_tilde >= 0.0)


@dataclass(frozen=True)
class WdTrainSet:
    """Positives: the target user's samples. Negatives: a fixed count from every other user."""
    positives: np.ndarray
    negatives: np.ndarray
    user: int

    def __post_init__(self):
        if len(self.positives) == 0 or len(self.negatives) == 0:
            raise InsufficientData("both classes need samples")
        if self.positives.shape[1] != self.negatives.shape[1]:
            raise DimensionMismatch("positive and negative features differ in length")

    def xy(self):
        x = np.vstack([self.positives, self.negatives])
        y = np.concatenate([np.ones(len(self.positives)), -np.ones(len(self.negatives))])
        return x, y


def assemble_wd_trainset(features_by_user: Mapping[int, np.ndarray], target_user: int,
                         per_user: Optional[int] = None, seed: Optional[int] = None) -> WdTrainSet:
    """
    First `per_user` vectors of the target as positives and of every other user as negatives.

    With a seed, each user's samples are drawn by a seeded permutation instead.
    """
    per_user = per_user or settings.wd_samples_per_user
    rng = np.random.default_rng(seed) if seed is not None else None

    def take(user: int) -> np.ndarray:
        vectors = np.asarray(features_by_user[user], dtype=np.float64)
        if len(vectors) < per_user:
            raise InsufficientData(f"user {user} has {len(vectors)} samples, {per_user} needed")
        idx = rng.permutation(len(vectors))[:per_user] if rng is not None else np.arange(per_user)
        return vectors[idx]

    if target_user not in features_by_user:
        raise InsufficientData(f"no features for user {target_user}")
    others = [u for u in sorted(features_by_user) if u != target_user]
    if not others:
        raise InsufficientData("negatives need at least one other user")
    return WdTrainSet(positives=take(target_user),
                      negatives=np.vstack([take(u) for u in others]),
                      user=target_user)


@dataclass(frozen=True)
class LinearSvm:
    w: np.ndarray
    b: float

    kind = "linear"

    def score(self, phi: np.ndarray) -> float:
        phi = _check_dim(phi, len(self.w))
        return float(self.w @ phi + self.b)

    def score_batch(self, phis: np.ndarray) -> np.ndarray:
        return np.asarray(phis, dtype=np.float64) @ self.w + self.b

    def gradient(self, phi: np.ndarray) -> np.ndarray:
        _check_dim(phi, len(self.w))
        return self.w.copy()


@dataclass(frozen=True)
class RbfSvm:
    """s(phi) = sum_i alpha_i k(phi, X_i) + b with alpha_i carrying the label sign."""
    support_vectors: np.ndarray
    alphas: np.ndarray
    gamma: float
    b: float
    squared: bool = True

    kind = "rbf"

    def _kernel_row(self, phis: np.ndarray) -> np.ndarray:
        d2 = euclidean_distances(phis, self.support_vectors, squared=True)
        d = d2 if self.squared else np.sqrt(d2)
        return np.exp(-self.gamma * d)

    def score(self, phi: np.ndarray) -> float:
        phi = _check_dim(phi, self.support_vectors.shape[1])
        return float(self.score_batch(phi[None])[0])

    def score_batch(self, phis: np.ndarray) -> np.ndarray:
        return self._kernel_row(np.asarray(phis, dtype=np.float64)) @ self.alphas + self.b

    def gradient(self, phi: np.ndarray) -> np.ndarray:
        phi = _check_dim(phi, self.support_vectors.shape[1])
        diff = phi[None, :] - self.support_vectors
        k = self._kernel_row(phi[None])[0]
        if self.squared:
            coef = self.alphas * k * (-2.0 * self.gamma)
        else:
            dist = np.sqrt((diff * diff).sum(axis=1))
            coef = np.divide(self.alphas * k * (-self.gamma), dist, out=np.zeros_like(dist), where=dist > 0)
        return coef @ diff


WdModel = Union[LinearSvm, RbfSvm]


def _check_dim(phi: np.ndarray, dim: int) -> np.ndarray:
    phi = np.asarray(phi, dtype=np.float64).ravel()
    if phi.shape[0] != dim:
        raise DimensionMismatch(f"feature length {phi.shape[0]} != model dimension {dim}")
    return phi


def _class_weight(ts: WdTrainSet, class_weighting: bool) -> Optional[Dict[int, float]]:
    if not class_weighting:
        return None
    return {1: len(ts.negatives) / len(ts.positives), -1: 1.0}


def _fit(clf: SVC, x: np.ndarray, y: np.ndarray, user: int) -> SVC:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        clf.fit(x, y)
    if any(issubclass(w.category, ConvergenceWarning) for w in caught):
        raise ConvergenceError(f"SVM for user {user} hit the iteration cap ({clf.max_iter})")
    return clf


def train_linear(ts: WdTrainSet, c: float = None, class_weighting: bool = None) -> LinearSvm:
    """Soft-margin linear SVM (libsvm SMO, KKT tolerance from settings)."""
    c = settings.svm_c if c is None else c
    class_weighting = settings.svm_class_weighting if class_weighting is None else class_weighting
    if c <= 0:
        raise ValueError("C must be positive")
    x, y = ts.xy()
    clf = SVC(kernel="linear", C=c, class_weight=_class_weight(ts, class_weighting),
              tol=settings.svm_tol, max_iter=settings.svm_max_iter)
    _fit(clf, x, y, ts.user)
    return LinearSvm(w=np.asarray(clf.coef_[0], dtype=np.float64).copy(), b=float(clf.intercept_[0]))


def train_rbf(ts: WdTrainSet, c: float = None, gamma: float = None, class_weighting: bool = None,
              squared: bool = None) -> RbfSvm:
    """RBF SVM; the unsquared-distance kernel is trained through a precomputed Gram matrix."""
    c = settings.svm_c if c is None else c
    gamma = settings.svm_gamma_clbp if gamma is None else gamma
    class_weighting = settings.svm_class_weighting if class_weighting is None else class_weighting
    squared = settings.svm_squared_kernel if squared is None else squared
    if c <= 0 or gamma <= 0:
        raise ValueError("C and gamma must be positive")
    x, y = ts.xy()
    weights = _class_weight(ts, class_weighting)

    if squared:
        clf = SVC(kernel="rbf", C=c, gamma=gamma, class_weight=weights,
                  tol=settings.svm_tol, max_iter=settings.svm_max_iter)
        _fit(clf, x, y, ts.user)
        support = np.asarray(clf.support_vectors_, dtype=np.float64)
    else:
        gram = np.exp(-gamma * euclidean_distances(x, x))
        clf = SVC(kernel="precomputed", C=c, class_weight=weights,
                  tol=settings.svm_tol, max_iter=settings.svm_max_iter)
        _fit(clf, gram, y, ts.user)
        support = x[clf.support_]
    return RbfSvm(support_vectors=support.copy(), alphas=np.asarray(clf.dual_coef_[0], dtype=np.float64).copy(),
                  gamma=float(gamma), b=float(clf.intercept_[0]), squared=squared)


def score(model: WdModel, phi: np.ndarray) -> float:
    return model.score(phi)


def grad_wrt_features(model: WdModel, phi: np.ndarray) -> np.ndarray:
    return model.gradient(phi)


def normalized_score(model: WdModel, tau: float, phi: np.ndarray) -> float:
    """s_tilde = s - tau; genuine iff s_tilde >= 0."""
    return model.score(phi) - tau


# SERIALIZATION

def encode_svm(model: WdModel) -> bytes:
    if isinstance(model, LinearSvm):
        body = encode_sgf(model.w) + encode_sgf(np.array([model.b]))
        return SVM_MAGIC + b"L" + body
    extras = np.array([model.gamma, model.b, 1.0 if model.squared else 0.0])
    body = encode_sgf(model.support_vectors) + encode_sgf(model.alphas) + encode_sgf(extras)
    return SVM_MAGIC + b"R" + body


def decode_svm(buf: bytes) -> WdModel:
    if buf[:4] != SVM_MAGIC:
        raise FormatError("bad SVM1 magic")
    tag = buf[4:5]
    if tag == b"L":
        w, offset = decode_sgf(buf, 5)
        b, _ = decode_sgf(buf, offset)
        return LinearSvm(w=w.ravel(), b=float(b.ravel()[0]))
    if tag == b"R":
        sv, offset = decode_sgf(buf, 5)
        alphas, offset = decode_sgf(buf, offset)
        extras, _ = decode_sgf(buf, offset)
        gamma, b, squared = extras.ravel()
        return RbfSvm(support_vectors=sv, alphas=alphas.ravel(), gamma=float(gamma), b=float(b),
                      squared=bool(squared))
    raise FormatError(f"unknown SVM kind tag {tag!r}")


def save_svm(model: WdModel, path: str) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(encode_svm(model))
    return path


def load_svm(path: str) -> WdModel:
    with open(path, "rb") as f:
        return decode_svm(f.read())
