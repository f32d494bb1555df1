"""Simulated annealing on a score-only oracle."""
import math
from typing import Optional
import numpy as np
from app.models import AnnealConfig, AttackMethod
from app.utils.logger import get_logger
from attacks.base import AttackGoal, AttackOutcome, as_start, finalize
from processors.image_processor import ImageProcessor

logger = get_logger(__name__)

DECILES = 10


def temperature_schedule(config: AnnealConfig) -> np.ndarray:
    """Geometric cooling from t_max to t_min over config.steps points."""
    return np.geomspace(config.t_max, config.t_min, config.steps)


def acceptance_probability(delta_e: float, temperature: float) -> float:
    """Metropolis rule: downhill always, uphill with exp(-dE/T)."""
    if delta_e <= 0:
        return 1.0
    return math.exp(-delta_e / temperature)


def anneal_attack(oracle, start: np.ndarray, goal: AttackGoal, config: Optional[AnnealConfig] = None,
                  seed: int = 0) -> AttackOutcome:
    """
    Minimize E(X') = sign(goal) * s_tilde(X') + lam * ||X' - start||_2 with Gaussian proposals.

    Stops as soon as an accepted state is on the adversarial side. Uphill
    proposals and acceptances are counted per tenth of the schedule so the
    cooling can be calibrated.
    """
    config = config or AnnealConfig()
    rng = np.random.default_rng(seed)
    x = as_start(start)

    def energy(img: np.ndarray, s: float) -> float:
        return goal.sign * s + config.lam * float(np.linalg.norm(img - x))

    s0 = oracle.score(x)
    current, s_cur = x.copy(), s0
    e_cur = energy(current, s_cur)
    trace = [s0]
    uphill_proposed = np.zeros(DECILES, dtype=np.int64)
    uphill_accepted = np.zeros(DECILES, dtype=np.int64)
    temps = temperature_schedule(config)
    steps = 0

    if not goal.is_adversarial(s0):
        for k, temperature in enumerate(temps):
            steps = k + 1
            proposal = ImageProcessor.clip(current + rng.normal(0.0, config.sigma, size=x.shape))
            s_new = oracle.score(proposal)
            e_new = energy(proposal, s_new)
            delta_e = e_new - e_cur
            decile = min(k * DECILES // len(temps), DECILES - 1)
            if delta_e > 0:
                uphill_proposed[decile] += 1
            if delta_e <= 0 or rng.random() < acceptance_probability(delta_e, temperature):
                if delta_e > 0:
                    uphill_accepted[decile] += 1
                current, s_cur, e_cur = proposal, s_new, e_new
                trace.append(s_cur)
                if goal.is_adversarial(s_cur):
                    break

    rates = np.divide(uphill_accepted, uphill_proposed, out=np.full(DECILES, np.nan),
                      where=uphill_proposed > 0)
    return finalize(oracle, AttackMethod.ANNEAL, goal, x, current, iterations=steps, score_trace=trace,
                    start_score=s0,
                    diagnostics={"uphill_proposed": uphill_proposed.tolist(),
                                 "uphill_accepted": uphill_accepted.tolist(),
                                 "uphill_acceptance": rates.tolist(),
                                 "final_energy": e_cur})
