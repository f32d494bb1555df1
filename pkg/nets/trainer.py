"""CNN training: plain user classification, ensemble adversarial training and Madry training."""
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple
import numpy as np
from tqdm.auto import trange
from app.errors import ConfigError, InsufficientData, TrainingDivergence, ZeroGradient
from app.models import DefenseKind, OptimizerKind, TrainConfig
from app.utils.logger import get_logger, progress_enabled
from nets.engine import Params
from nets.signet import (
    CrossEntropyObjective,
    NetSpec,
    Objective,
    TrainedNet,
    forward_batch,
    input_gradient,
    loss_and_param_gradients,
    objective_value_and_input_gradient,
)

logger = get_logger(__name__)


@dataclass
class LabeledImages:
    """Canonical images with the user id of each one."""
    images: np.ndarray
    users: np.ndarray

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.users = np.asarray(self.users, dtype=np.int64)
        if len(self.images) != len(self.users):
            raise ValueError("images and users must have the same length")

    @property
    def classes(self) -> Tuple[int, ...]:
        return tuple(int(u) for u in np.unique(self.users))

    def labels(self) -> np.ndarray:
        """Class index (position in the sorted user list) of every image."""
        return np.searchsorted(np.asarray(self.classes), self.users)


# PERTURBATIONS

def fgm_delta(gradient: np.ndarray, epsilon: float) -> np.ndarray:
    """Unclipped step epsilon * g / ||g||_2."""
    norm = float(np.linalg.norm(gradient))
    if norm == 0.0:
        raise ZeroGradient("gradient norm is zero")
    return epsilon * gradient / norm


def fgm_perturb(net: TrainedNet, img: np.ndarray, label: int, epsilon: float) -> np.ndarray:
    """Single loss-increasing normalized gradient step, clipped to [0, 255]."""
    grad = input_gradient(net, img, CrossEntropyObjective([label]))
    return np.clip(img + fgm_delta(grad, epsilon), 0.0, 255.0)


def _per_sample_norms(arr: np.ndarray) -> np.ndarray:
    return np.sqrt((arr.reshape(arr.shape[0], -1) ** 2).sum(axis=1)).reshape((-1,) + (1,) * (arr.ndim - 1))


def fgm_batch(net: TrainedNet, images: np.ndarray, labels: Sequence[int], epsilon: float) -> np.ndarray:
    """FGM on every image of a batch; images with zero gradient are left unchanged."""
    _, grads = objective_value_and_input_gradient(net, images, CrossEntropyObjective(labels))
    norms = _per_sample_norms(grads)
    step = np.divide(grads, norms, out=np.zeros_like(grads), where=norms > 0)
    return np.clip(images + epsilon * step, 0.0, 255.0)


def pgd_batch(net: TrainedNet, images: np.ndarray, epsilon: float, steps: int, step_size: float,
              objective: Objective, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """
    L2 projected gradient ascent on a batch.

    Each step moves by step_size along the normalized gradient, projects the
    perturbation onto the epsilon ball and then onto the [0, 255] box. A
    sample whose gradient is zero at the start begins from a random point on
    the epsilon sphere.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    rng = rng or np.random.default_rng(0)
    x = np.asarray(images, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    delta = np.zeros_like(x)
    for k in range(steps):
        _, grads = objective_value_and_input_gradient(net, x + delta, objective)
        norms = _per_sample_norms(grads)
        if k == 0 and np.any(norms == 0):
            noise = rng.normal(size=x.shape)
            noise *= epsilon / _per_sample_norms(noise)
            delta = np.where(norms == 0, noise, delta)
        delta = delta + step_size * np.divide(grads, norms, out=np.zeros_like(grads), where=norms > 0)
        dnorms = _per_sample_norms(delta)
        delta = delta * np.minimum(1.0, np.divide(epsilon, dnorms, out=np.ones_like(dnorms), where=dnorms > 0))
        delta = np.clip(x + delta, 0.0, 255.0) - x
    return x + delta


def pgd_l2(net: TrainedNet, img: np.ndarray, label: int, epsilon: float, steps: int, step_size: float,
           objective: Optional[Objective] = None, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Inner maximizer X + delta of the objective (cross-entropy at label by default)."""
    objective = objective or CrossEntropyObjective([label])
    return pgd_batch(net, img, epsilon, steps, step_size, objective, rng)[0]


# OPTIMIZERS

class _Optimizer:
    """SGD with momentum or Adam; weight decay applies to weight tensors only."""

    def __init__(self, config: TrainConfig, params: List[Params]):
        self.config = config
        self.t = 0
        self.m = [{k: np.zeros_like(v) for k, v in p.items()} for p in params]
        self.v = [{k: np.zeros_like(v) for k, v in p.items()} for p in params]

    def step(self, params: List[Params], grads: List[Params], lr: float):
        cfg = self.config
        self.t += 1
        for p, g, m, v in zip(params, grads, self.m, self.v):
            for key in p:
                grad = g[key] + cfg.weight_decay * p[key] if key == "W" else g[key]
                if cfg.optimizer is OptimizerKind.SGD_MOMENTUM:
                    m[key] = cfg.momentum * m[key] - lr * grad
                    p[key] += m[key]
                else:
                    m[key] = 0.9 * m[key] + 0.1 * grad
                    v[key] = 0.999 * v[key] + 0.001 * grad * grad
                    m_hat = m[key] / (1 - 0.9 ** self.t)
                    v_hat = v[key] / (1 - 0.999 ** self.t)
                    p[key] -= lr * m_hat / (np.sqrt(v_hat) + 1e-8)


# TRAINING

BatchStep = Callable[[TrainedNet, np.ndarray, np.ndarray], Tuple[float, List[Params], np.ndarray, Dict]]


def _combine(a: List[Params], b: List[Params], wa: float, wb: float) -> List[Params]:
    return [{k: wa * ga[k] + wb * gb[k] for k in ga} for ga, gb in zip(a, b)]


def _fit(spec: NetSpec, data: LabeledImages, config: TrainConfig,
         make_step: Callable[[Sequence[np.random.Generator]], BatchStep]) -> TrainedNet:
    classes = data.classes
    if len(classes) < 2:
        raise InsufficientData("training needs at least 2 users")
    if spec.num_classes != len(classes):
        raise ConfigError(f"spec has {spec.num_classes} classes but data has {len(classes)} users")

    init_rng, shuffle_rng, source_rng, pgd_rng = [
        np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(4)
    ]
    net = TrainedNet(spec=spec, params=spec.init_params(init_rng), training_users=classes)
    batch_step = make_step((source_rng, pgd_rng))
    optimizer = _Optimizer(config, net.params)
    images, labels = data.images, data.labels()
    n = len(images)
    history: Dict[str, list] = {"epochs": [], "batches": []}

    logger.info(f"Training {spec.name} on {n} images of {len(classes)} users ({config.defense.value})")
    for epoch in trange(config.epochs, desc=spec.name, disable=not progress_enabled(logger)):
        lr = config.learning_rate * (config.lr_decay if epoch >= config.decay_epoch else 1.0)
        order = shuffle_rng.permutation(n)
        losses, correct = [], 0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            loss, grads, logits, components = batch_step(net, images[idx], labels[idx])
            if not np.isfinite(loss):
                raise TrainingDivergence(f"loss {loss} at epoch {epoch}, batch {b} ({spec.name})")
            optimizer.step(net.params, grads, lr)
            losses.append(loss)
            correct += int((logits.argmax(axis=1) == labels[idx]).sum())
            if components:
                history["batches"].append({"epoch": epoch, "batch": b, **components})

        epoch_loss = float(np.mean(losses))
        history["epochs"].append({"epoch": epoch, "loss": epoch_loss, "accuracy": correct / n, "lr": lr})
        logger.info(f"[{spec.name}] epoch {epoch + 1}/{config.epochs} loss {epoch_loss:.4f} "
                    f"acc {correct / n:.3f} lr {lr:g}")

    net.metadata = {
        "defense": config.defense.value,
        "seed": config.seed,
        "epochs": config.epochs,
        "train_accuracy": accuracy(net, images, labels),
        "history": history,
    }
    logger.info(f"[{spec.name}] final training accuracy {net.metadata['train_accuracy']:.3f}")
    return net


def accuracy(net: TrainedNet, images: np.ndarray, labels: np.ndarray, batch_size: int = 64) -> float:
    correct = 0
    for start in range(0, len(images), batch_size):
        logits, _ = forward_batch(net, images[start:start + batch_size])
        correct += int((logits.argmax(axis=1) == labels[start:start + batch_size]).sum())
    return correct / len(images)


def robust_accuracy(net: TrainedNet, images: np.ndarray, labels: np.ndarray, epsilon: float,
                    steps: int = 10, step_size: Optional[float] = None, seed: int = 0) -> float:
    """Accuracy on pgd_l2 worst cases within the epsilon ball."""
    rng = np.random.default_rng(seed)
    step_size = step_size or epsilon / 4.0
    correct = 0
    for start in range(0, len(images), 32):
        xb, yb = images[start:start + 32], labels[start:start + 32]
        adv = pgd_batch(net, xb, epsilon, steps, step_size, CrossEntropyObjective(yb), rng)
        logits, _ = forward_batch(net, adv)
        correct += int((logits.argmax(axis=1) == yb).sum())
    return correct / len(images)


def _plain_step(rngs) -> BatchStep:
    def step(net, xb, yb):
        loss, grads, logits = loss_and_param_gradients(net.params, net, xb, yb)
        return loss, grads, logits, {}
    return step


def train_classifier(spec: NetSpec, data: LabeledImages, config: TrainConfig) -> TrainedNet:
    """Multinomial user-classification training without a defense."""
    if config.defense is not DefenseKind.NONE:
        raise ConfigError("train_classifier runs without a defense")
    return _fit(spec, data, config, _plain_step)


def train_ens_adv(spec: NetSpec, data: LabeledImages, config: TrainConfig,
                  pretrained: Sequence[TrainedNet]) -> TrainedNet:
    """
    Ensemble adversarial training.

    Minimizes alpha * J(X) + (1 - alpha) * J(X_adv) where X_adv is an FGM
    example from a source drawn uniformly among the current model and the
    pretrained models.
    """
    if config.defense is not DefenseKind.ENS_ADV:
        raise ConfigError("train_ens_adv needs defense=ens_adv")
    if not pretrained:
        raise ConfigError("ensemble adversarial training needs at least one pretrained model")
    for aux in pretrained:
        if aux.training_users != data.classes:
            raise ConfigError(f"pretrained {aux.spec.name} was trained on different users")
    alpha, epsilon = config.ens_adv.alpha, config.ens_adv.epsilon

    def make_step(rngs):
        source_rng = rngs[0]

        def step(net, xb, yb):
            src = int(source_rng.integers(0, len(pretrained) + 1))
            source = net if src == 0 else pretrained[src - 1]
            x_adv = fgm_batch(source, xb, yb, epsilon)
            clean, g_clean, logits = loss_and_param_gradients(net.params, net, xb, yb)
            adv, g_adv, _ = loss_and_param_gradients(net.params, net, x_adv, yb)
            loss = alpha * clean + (1.0 - alpha) * adv
            components = {"clean": clean, "adversarial": adv, "combined": loss, "source": src}
            return loss, _combine(g_clean, g_adv, alpha, 1.0 - alpha), logits, components
        return step

    net = _fit(spec, data, config, make_step)
    net.metadata.update({"alpha": alpha, "epsilon": epsilon,
                         "pretrained": [aux.spec.name for aux in pretrained]})
    return net


def train_madry(spec: NetSpec, data: LabeledImages, config: TrainConfig) -> TrainedNet:
    """Saddle-point training: every batch loss is taken at its pgd_l2 maximizers."""
    if config.defense is not DefenseKind.MADRY:
        raise ConfigError("train_madry needs defense=madry")
    mcfg = config.madry

    def make_step(rngs):
        pgd_rng = rngs[1]

        def step(net, xb, yb):
            x_adv = pgd_batch(net, xb, mcfg.epsilon, mcfg.pgd_steps, mcfg.step_size,
                              CrossEntropyObjective(yb), pgd_rng)
            loss, grads, logits = loss_and_param_gradients(net.params, net, x_adv, yb)
            return loss, grads, logits, {}
        return step

    net = _fit(spec, data, config, make_step)
    net.metadata.update({"epsilon": mcfg.epsilon, "pgd_steps": mcfg.pgd_steps, "step_size": mcfg.step_size})
    return net
