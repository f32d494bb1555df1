"""Dispatch from AttackMethod to the attack implementations."""
from typing import Optional
import numpy as np
from app.models import AttackConfig, AttackMethod
from app.utils.logger import get_logger
from attacks.anneal import anneal_attack
from attacks.base import AttackGoal, AttackOutcome
from attacks.boundary import boundary_attack
from attacks.carlini import carlini_attack
from attacks.fgm import fgm_attack
from attacks.oracles import DecisionOracle

logger = get_logger(__name__)


def run_attack(method: AttackMethod, oracle, start: np.ndarray, goal: AttackGoal,
               config: Optional[AttackConfig] = None, seed: int = 0) -> AttackOutcome:
    """Run one attack; the boundary attack only ever sees the oracle's decisions."""
    config = config or AttackConfig()
    if method is AttackMethod.FGM:
        return fgm_attack(oracle, start, goal, epsilon=config.fgm_epsilon)
    if method is AttackMethod.CARLINI:
        return carlini_attack(oracle, start, goal, kappa=config.kappa, search=config.search, optim=config.adam)
    if method is AttackMethod.BOUNDARY:
        return boundary_attack(DecisionOracle(oracle), start, goal, init=seed, config=config.boundary, seed=seed)
    if method is AttackMethod.ANNEAL:
        return anneal_attack(oracle, start, goal, config=config.anneal, seed=seed)
    raise ValueError(f"Unknown attack method: {method}")
