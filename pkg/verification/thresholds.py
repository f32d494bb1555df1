"""EER thresholds: global and per-user operating points on genuine vs forgery scores."""
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence, Tuple
import numpy as np
import pandas as pd
from app.errors import InsufficientData
from app.utils.logger import get_logger
from processors.data_processor import DataProcessor

logger = get_logger(__name__)


@dataclass(frozen=True)
class EerCurve:
    """FAR/FRR evaluated at every candidate threshold."""
    thresholds: np.ndarray
    far: np.ndarray
    frr: np.ndarray

    def best_index(self) -> int:
        # argmin returns the first minimum, i.e. the smallest tau on ties
        return int(np.argmin(np.abs(self.far - self.frr)))


@dataclass
class ThresholdSet:
    global_tau: float
    global_eer: float
    per_user_tau: Dict[int, float] = field(default_factory=dict)
    per_user_eer: Dict[int, float] = field(default_factory=dict)

    @property
    def user_eer(self) -> float:
        """Mean EER when every user is judged with their own threshold."""
        if not self.per_user_eer:
            return float("nan")
        return float(np.mean(list(self.per_user_eer.values())))

    def tau_for(self, user: int, per_user: bool = False) -> float:
        if per_user and user in self.per_user_tau:
            return self.per_user_tau[user]
        return self.global_tau


def candidate_thresholds(scores: np.ndarray) -> np.ndarray:
    """Midpoints between adjacent distinct sorted scores (the value itself if all are equal)."""
    values = np.unique(np.asarray(scores, dtype=np.float64))
    if len(values) == 1:
        return values
    return (values[:-1] + values[1:]) / 2.0


def eer_curve(genuine: Sequence[float], forgery: Sequence[float]) -> EerCurve:
    """
    Error rates over the candidate thresholds.

    Args:
        genuine: scores of genuine samples (rejected when score < tau)
        forgery: scores of forgeries (accepted when score >= tau)

    Returns:
        EerCurve with one entry per candidate threshold
    """
    gen = np.sort(np.asarray(genuine, dtype=np.float64))
    forg = np.sort(np.asarray(forgery, dtype=np.float64))
    if len(gen) == 0 or len(forg) == 0:
        raise InsufficientData("EER needs genuine and forgery scores")
    taus = candidate_thresholds(np.concatenate([gen, forg]))
    frr = np.searchsorted(gen, taus, side="left") / len(gen)
    far = (len(forg) - np.searchsorted(forg, taus, side="left")) / len(forg)
    return EerCurve(thresholds=taus, far=far, frr=frr)


def eer_threshold(genuine: Sequence[float], forgery: Sequence[float]) -> Tuple[float, float]:
    """(tau, eer) at the point where |FAR - FRR| is minimal."""
    curve = eer_curve(genuine, forgery)
    i = curve.best_index()
    return float(curve.thresholds[i]), float((curve.far[i] + curve.frr[i]) / 2.0)


def compute_thresholds(genuine_by_user: Mapping[int, Sequence[float]],
                       forgery_by_user: Mapping[int, Sequence[float]]) -> ThresholdSet:
    """Global threshold on the pooled scores plus one threshold per user."""
    users = sorted(set(genuine_by_user) | set(forgery_by_user))
    if not users:
        raise InsufficientData("no users to threshold")
    per_tau, per_eer = {}, {}
    for user in users:
        gen = genuine_by_user.get(user, [])
        forg = forgery_by_user.get(user, [])
        if len(gen) == 0 or len(forg) == 0:
            raise InsufficientData(f"user {user} lacks genuine or forgery scores")
        per_tau[user], per_eer[user] = eer_threshold(gen, forg)

    pooled_gen = np.concatenate([np.asarray(genuine_by_user[u], dtype=np.float64) for u in users])
    pooled_forg = np.concatenate([np.asarray(forgery_by_user[u], dtype=np.float64) for u in users])
    global_tau, global_eer = eer_threshold(pooled_gen, pooled_forg)
    result = ThresholdSet(global_tau=global_tau, global_eer=global_eer,
                          per_user_tau=per_tau, per_user_eer=per_eer)
    logger.info(f"Thresholds: global tau={global_tau:.4f} EER={global_eer:.2%}, "
                f"user-tau EER={result.user_eer:.2%} over {len(users)} users")
    return result


def thresholds_to_csv(thresholds: ThresholdSet, path: str, processor: Optional[DataProcessor] = None) -> str:
    processor = processor or DataProcessor()
    rows = [{"user_id": "global", "tau": thresholds.global_tau, "eer": thresholds.global_eer}]
    rows += [{"user_id": str(u), "tau": thresholds.per_user_tau[u], "eer": thresholds.per_user_eer.get(u)}
             for u in sorted(thresholds.per_user_tau)]
    return processor.save_csv(pd.DataFrame(rows), path)


def thresholds_from_csv(path: str, processor: Optional[DataProcessor] = None) -> ThresholdSet:
    processor = processor or DataProcessor()
    df = processor.load_csv(path, required=("user_id", "tau"), dtype={"user_id": str})
    glob = df[df["user_id"] == "global"]
    if glob.empty:
        raise InsufficientData(f"{path} has no global threshold row")
    users = df[df["user_id"] != "global"]
    has_eer = "eer" in df.columns
    return ThresholdSet(
        global_tau=float(glob["tau"].iloc[0]),
        global_eer=float(glob["eer"].iloc[0]) if has_eer else float("nan"),
        per_user_tau={int(r.user_id): float(r.tau) for r in users.itertuples()},
        per_user_eer={int(r.user_id): float(r.eer) for r in users.itertuples()} if has_eer else {},
    )
