"""Attack goal convention, outcome record and helpers shared by every attack."""
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional
import numpy as np
from app.errors import CapabilityError
from app.models import AttackMethod, GoalKind
from app.utils.logger import get_logger
from processors.image_processor import ImageProcessor

logger = get_logger(__name__)


class AttackGoal(str, Enum):
    """TYPE_I pushes a genuine below the threshold, TYPE_II pushes a forgery above it."""
    TYPE_I = "type1"
    TYPE_II = "type2"

    @property
    def sign(self) -> int:
        """Lowering sign * s_tilde moves the sample toward the adversarial side."""
        return 1 if self is AttackGoal.TYPE_I else -1

    def is_adversarial(self, s_tilde: float) -> bool:
        if self is AttackGoal.TYPE_I:
            return bool(s_tilde < 0.0)
        return bool(s_tilde >= 0.0)

    def is_adversarial_decision(self, accepted: bool) -> bool:
        return (not accepted) if self is AttackGoal.TYPE_I else bool(accepted)

    @classmethod
    def for_goal_kind(cls, kind: GoalKind) -> "AttackGoal":
        return cls.TYPE_I if kind is GoalKind.TYPE1 else cls.TYPE_II


@dataclass
class AttackOutcome:
    method: AttackMethod
    goal: AttackGoal
    success: bool
    start: np.ndarray
    adversarial: np.ndarray
    noise_rmse: float
    iterations: int
    score_trace: List[float] = field(default_factory=list)
    start_score: Optional[float] = None
    final_score: Optional[float] = None
    diagnostics: Dict[str, Any] = field(default_factory=dict)
    error: Optional[str] = None

    @property
    def delta(self) -> np.ndarray:
        return self.adversarial - self.start


def rmse_of(outcome: AttackOutcome) -> float:
    return ImageProcessor.rmse(outcome.start, outcome.adversarial)


def require_gradient(oracle, method: AttackMethod):
    if not getattr(oracle, "has_gradient", False):
        raise CapabilityError(f"{method.value} needs a differentiable pipeline")


def as_start(img: np.ndarray) -> np.ndarray:
    return ImageProcessor.validate_gray(img).astype(np.float64, copy=True)


def finalize(oracle, method: AttackMethod, goal: AttackGoal, start: np.ndarray, adversarial: np.ndarray,
             iterations: int, score_trace: Optional[List[float]] = None, start_score: Optional[float] = None,
             diagnostics: Optional[Dict[str, Any]] = None) -> AttackOutcome:
    """Clip, re-query the oracle for the decision and build the outcome."""
    adversarial = ImageProcessor.clip(adversarial)
    final_score = oracle.score(adversarial) if getattr(oracle, "has_score", False) else None
    success = goal.is_adversarial_decision(oracle.decide(adversarial))
    outcome = AttackOutcome(
        method=method,
        goal=goal,
        success=success,
        start=start,
        adversarial=adversarial,
        noise_rmse=ImageProcessor.rmse(start, adversarial),
        iterations=iterations,
        score_trace=list(score_trace or []),
        start_score=start_score,
        final_score=final_score,
        diagnostics=diagnostics or {},
    )
    logger.debug(f"{method.value}/{goal.value}: success={success} rmse={outcome.noise_rmse:.4f} "
                 f"iterations={iterations}")
    return outcome


def discretized_success(outcome: AttackOutcome, oracle) -> bool:
    """Whether the attack still succeeds once the image is rounded to 8 bits."""
    return outcome.goal.is_adversarial_decision(oracle.decide(ImageProcessor.discretize(outcome.adversarial)))
