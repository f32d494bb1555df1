"""Decision-based boundary attack: random walk along the boundary toward the start."""
from collections import deque
from typing import Optional, Union
import numpy as np
from app.errors import InitFailure
from app.models import AttackMethod, BoundaryConfig
from app.utils.logger import get_logger
from attacks.base import AttackGoal, AttackOutcome, as_start, finalize
from processors.image_processor import ImageProcessor

logger = get_logger(__name__)


class _StepAdapter:
    """Multiplicative step-size control from the success rate over a sliding window."""

    def __init__(self, size: float, config: BoundaryConfig):
        self.size = size
        self.config = config
        self.window = deque(maxlen=config.window)

    def record(self, success: bool):
        self.window.append(bool(success))
        if len(self.window) < self.config.window:
            return
        rate = sum(self.window) / len(self.window)
        if rate > 0.5:
            self.size *= self.config.step_up
        elif rate < 0.2:
            self.size *= self.config.step_down
        else:
            return
        self.window.clear()


def _find_init(is_adv, shape, config: BoundaryConfig, rng: np.random.Generator) -> np.ndarray:
    for draw in range(config.init_draws):
        candidate = rng.uniform(0.0, 255.0, size=shape)
        if is_adv(candidate):
            logger.debug(f"boundary: adversarial init after {draw + 1} draws")
            return candidate
    raise InitFailure(f"no adversarial image in {config.init_draws} uniform draws")


def _line_search(is_adv, start: np.ndarray, init: np.ndarray, steps: int) -> np.ndarray:
    """Bisection on the segment init -> start for the adversarial point closest to start."""
    lo, hi = 0.0, 1.0
    for _ in range(steps):
        mid = (lo + hi) / 2.0
        if is_adv((1.0 - mid) * init + mid * start):
            lo = mid
        else:
            hi = mid
    return (1.0 - lo) * init + lo * start


def boundary_attack(oracle, start: np.ndarray, goal: AttackGoal,
                    init: Optional[Union[np.ndarray, int]] = None,
                    config: Optional[BoundaryConfig] = None, seed: int = 0) -> AttackOutcome:
    """
    Walk along the decision boundary, shrinking the distance to the start.

    Args:
        oracle: anything with decide(img) -> accepted
        start: the image the adversarial example should stay close to
        goal: which side of the boundary counts as adversarial
        init: an adversarial starting image, or a seed for uniform random draws
        config: step sizes, adaptation window and iteration cap
        seed: random directions (and init draws when init is not a seed)

    Raises:
        InitFailure: the given init is not adversarial or no draw was
    """
    config = config or BoundaryConfig()
    x = as_start(start)
    given = isinstance(init, np.ndarray)
    rng = np.random.default_rng(seed if given or init is None else int(init))

    def is_adv(img: np.ndarray) -> bool:
        return goal.is_adversarial_decision(oracle.decide(img))

    if is_adv(x):
        return finalize(oracle, AttackMethod.BOUNDARY, goal, x, x, iterations=0,
                        diagnostics={"distance_trace": [0.0], "queries": 1})

    if given:
        current = ImageProcessor.clip(np.asarray(init, dtype=np.float64))
        if current.shape != x.shape or not is_adv(current):
            raise InitFailure("given init is not on the adversarial side")
    else:
        current = _find_init(is_adv, x.shape, config, rng)
    current = _line_search(is_adv, x, current, config.line_search_steps)

    orth = _StepAdapter(config.orthogonal_step, config)
    source = _StepAdapter(config.source_step, config)
    dist = float(np.linalg.norm(current - x))
    distances = [dist]
    iterations = 0

    for iterations in range(1, config.max_iter + 1):
        if dist == 0.0 or source.size < config.min_source_step:
            break
        diff = x - current
        eta = rng.normal(size=x.shape)
        eta -= (np.vdot(eta, diff) / (dist * dist)) * diff
        eta *= orth.size * dist / np.linalg.norm(eta)

        spherical = current + eta
        offset = spherical - x
        spherical = x + offset * (dist / np.linalg.norm(offset))
        spherical_ok = is_adv(ImageProcessor.clip(spherical))
        orth.record(spherical_ok)
        if not spherical_ok:
            continue

        candidate = ImageProcessor.clip(spherical + source.size * (x - spherical))
        candidate_ok = is_adv(candidate)
        source.record(candidate_ok)
        new_dist = float(np.linalg.norm(candidate - x))
        if candidate_ok and new_dist <= dist:
            current, dist = candidate, new_dist
            distances.append(dist)

    logger.debug(f"boundary: {iterations} iterations, final distance {dist:.4f}, "
                 f"steps orth={orth.size:.3g} source={source.size:.3g}")
    return finalize(oracle, AttackMethod.BOUNDARY, goal, x, current, iterations=iterations,
                    diagnostics={"distance_trace": distances, "orthogonal_step": orth.size,
                                 "source_step": source.size})
