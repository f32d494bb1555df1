"""Fast gradient method: one normalized gradient step on the verifier score."""
from typing import Optional
import numpy as np
from app.config import settings
from app.models import AttackMethod
from app.utils.logger import get_logger
from attacks.base import AttackGoal, AttackOutcome, as_start, finalize, require_gradient
from nets.trainer import fgm_delta

logger = get_logger(__name__)


def fgm_attack(oracle, start: np.ndarray, goal: AttackGoal, epsilon: Optional[float] = None) -> AttackOutcome:
    """
    X_adv = clip(X - sign(goal) * epsilon * grad / ||grad||).

    Args:
        oracle: score oracle with gradient capability
        start: canonical image to perturb
        goal: TYPE_I descends the score, TYPE_II ascends it
        epsilon: L2 size of the step before clipping

    Raises:
        CapabilityError: oracle has no gradient
        ZeroGradient: gradient at the start is zero
    """
    epsilon = settings.fgm_epsilon if epsilon is None else epsilon
    require_gradient(oracle, AttackMethod.FGM)
    x = as_start(start)
    s0 = oracle.score(x)
    delta = -goal.sign * fgm_delta(oracle.gradient(x), epsilon)
    return finalize(oracle, AttackMethod.FGM, goal, x, x + delta, iterations=1, score_trace=[s0],
                    start_score=s0, diagnostics={"delta_norm": float(np.linalg.norm(delta))})
