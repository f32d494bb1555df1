"""Carlini & Wagner L2 attack on a binary verifier score."""
from typing import List, Optional, Tuple
import numpy as np
from app.config import settings
from app.models import AdamConfig, AttackMethod, BinarySearchConfig
from app.utils.logger import get_logger
from attacks.base import AttackGoal, AttackOutcome, as_start, finalize, require_gradient

logger = get_logger(__name__)

PIXEL_MAX = 255.0
TANH_SMOOTHER = 0.999999


def to_tanh_space(x: np.ndarray) -> np.ndarray:
    return np.arctanh((2.0 * x / PIXEL_MAX - 1.0) * TANH_SMOOTHER)


def from_tanh_space(w: np.ndarray) -> np.ndarray:
    return np.clip((np.tanh(w) / TANH_SMOOTHER + 1.0) / 2.0 * PIXEL_MAX, 0.0, PIXEL_MAX)


def hinge(s_tilde: float, goal: AttackGoal, kappa: float) -> float:
    """max(Z_current - Z_target, -kappa) with pseudo-logits (s_tilde, -s_tilde)."""
    return max(2.0 * goal.sign * s_tilde, -kappa)


class _CarliniRun:
    """Adam optimization for one value of c, keeping the best iterates seen."""

    def __init__(self, oracle, start: np.ndarray, goal: AttackGoal, kappa: float, optim: AdamConfig):
        self.oracle = oracle
        self.start = start
        self.goal = goal
        self.kappa = kappa
        self.optim = optim
        self.w0 = to_tanh_space(start)
        self.best_success: Optional[Tuple[float, np.ndarray]] = None
        self.best_effort: Optional[Tuple[float, np.ndarray]] = None
        self.trace: List[float] = []
        self.steps_taken = 0

    def _loss_and_grad(self, w: np.ndarray, c: float):
        x = from_tanh_space(w)
        delta = x - self.start
        dist = float(np.linalg.norm(delta))
        s = self.oracle.score(x)
        f = hinge(s, self.goal, self.kappa)

        grad_x = delta / dist if dist > 0 else np.zeros_like(delta)
        if 2.0 * self.goal.sign * s > -self.kappa:
            grad_x = grad_x + c * 2.0 * self.goal.sign * self.oracle.gradient(x)
        t = np.tanh(w)
        grad_w = grad_x * PIXEL_MAX / 2.0 * (1.0 - t * t) / TANH_SMOOTHER
        return dist + c * f, grad_w, x, dist, s

    def _record(self, x: np.ndarray, dist: float, s: float) -> bool:
        self.trace.append(s)
        if self.goal.is_adversarial(s):
            if self.best_success is None or dist < self.best_success[0]:
                self.best_success = (dist, x.copy())
            return True
        margin = self.goal.sign * s
        if self.best_effort is None or margin < self.best_effort[0]:
            self.best_effort = (margin, x.copy())
        return False

    def run(self, c: float) -> bool:
        """Optimize with constant c; returns whether any iterate was adversarial."""
        opt = self.optim
        w = self.w0.copy()
        m = np.zeros_like(w)
        v = np.zeros_like(w)
        check_every = max(opt.steps // 10, 1)
        previous = np.inf
        succeeded = False

        for step in range(1, opt.steps + 1):
            loss, grad, x, dist, s = self._loss_and_grad(w, c)
            succeeded |= self._record(x, dist, s)

            m = opt.beta1 * m + (1 - opt.beta1) * grad
            v = opt.beta2 * v + (1 - opt.beta2) * grad * grad
            m_hat = m / (1 - opt.beta1 ** step)
            v_hat = v / (1 - opt.beta2 ** step)
            w = w - opt.learning_rate * m_hat / (np.sqrt(v_hat) + opt.eps)
            self.steps_taken += 1

            if opt.abort_early and step % check_every == 0:
                if loss > previous * 0.9999:
                    break
                previous = loss

        x = from_tanh_space(w)
        succeeded |= self._record(x, float(np.linalg.norm(x - self.start)), self.oracle.score(x))
        return succeeded


def carlini_attack(oracle, start: np.ndarray, goal: AttackGoal, kappa: Optional[float] = None,
                   search: Optional[BinarySearchConfig] = None,
                   optim: Optional[AdamConfig] = None) -> AttackOutcome:
    """
    Minimize ||delta||_2 + c * f(X + delta) in tanh space with a binary search on c.

    Returns the minimum-norm adversarial image found over the whole search, or the
    iterate closest to the boundary when no c succeeded.
    """
    kappa = settings.cw_kappa if kappa is None else kappa
    search = search or BinarySearchConfig()
    optim = optim or AdamConfig()
    require_gradient(oracle, AttackMethod.CARLINI)
    x = as_start(start)
    s0 = oracle.score(x)

    if goal.is_adversarial(s0):
        logger.debug("carlini: start already on the adversarial side")
        return finalize(oracle, AttackMethod.CARLINI, goal, x, x, iterations=0, score_trace=[s0],
                        start_score=s0, diagnostics={"search_trace": []})

    run = _CarliniRun(oracle, x, goal, kappa, optim)
    lower, upper = None, None
    c = search.c_init
    search_trace = []
    for _ in range(search.steps):
        success = run.run(c)
        search_trace.append((float(c), bool(success)))
        logger.debug(f"carlini: c={c:.4g} success={success}")
        if success:
            upper = c
            c = float(np.sqrt((lower or search.c_min) * upper))
        else:
            lower = c
            c = float(np.sqrt(lower * upper)) if upper is not None else c * 10.0
            if c > search.c_max:
                break

    chosen = run.best_success[1] if run.best_success is not None else run.best_effort[1]
    return finalize(oracle, AttackMethod.CARLINI, goal, x, chosen, iterations=run.steps_taken,
                    score_trace=run.trace, start_score=s0,
                    diagnostics={"search_trace": search_trace, "kappa": kappa})
