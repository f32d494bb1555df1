"""User and sample roles of a campaign: attacked, surrogate-background and LK2 users."""
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple
import numpy as np
from app.errors import InsufficientData
from app.models import SplitConfig
from app.utils.logger import get_logger
from synth.generator import SynthDataset

logger = get_logger(__name__)


@dataclass(frozen=True)
class SplitSpec:
    """
    Role assignment over users and genuine sample indices.

    Genuine indices of every attacked user are cut in three consecutive
    ranges: the defender's WD training samples, the attacker's surrogate
    samples and the test set (which also holds all skilled forgeries).
    Background users supply the target CNN's training data and the
    attacker's negatives; LK2 users train the attacker's own CNN.
    """
    attacked_users: Tuple[int, ...]
    background_users: Tuple[int, ...]
    lk2_users: Tuple[int, ...]
    wd_indices: Tuple[int, ...]
    surrogate_indices: Tuple[int, ...]
    test_indices: Tuple[int, ...]

    def check(self):
        """The five disjointness invariants; raises ValueError on violation."""
        wd, surrogate, test = set(self.wd_indices), set(self.surrogate_indices), set(self.test_indices)
        attacked, background, lk2 = set(self.attacked_users), set(self.background_users), set(self.lk2_users)
        if wd & test:
            raise ValueError("WD training samples overlap the test set")
        if surrogate & (wd | test):
            raise ValueError("surrogate samples overlap WD training or test samples")
        if background & attacked:
            raise ValueError("background users overlap attacked users")
        if lk2 & attacked:
            raise ValueError("LK2 users overlap attacked users")
        if lk2 & background:
            raise ValueError("LK2 users overlap background users")

    def _genuine(self, dataset: SynthDataset, user: int, indices: Tuple[int, ...]) -> np.ndarray:
        return dataset.genuine(user)[list(indices)]

    def wd_images(self, dataset: SynthDataset, user: int) -> np.ndarray:
        return self._genuine(dataset, user, self.wd_indices)

    def surrogate_images(self, dataset: SynthDataset, user: int) -> np.ndarray:
        return self._genuine(dataset, user, self.surrogate_indices)

    def test_genuine(self, dataset: SynthDataset, user: int) -> np.ndarray:
        return self._genuine(dataset, user, self.test_indices)

    def test_skilled(self, dataset: SynthDataset, user: int) -> np.ndarray:
        return dataset.skilled(user)

    def background_negatives(self, dataset: SynthDataset, user: int) -> np.ndarray:
        """Attacker-side negatives for surrogate WD training."""
        return self._genuine(dataset, user, self.wd_indices)

    def background_holdout(self, dataset: SynthDataset, user: int) -> np.ndarray:
        """Attacker-side forgeries for surrogate thresholds, disjoint from the negatives."""
        return self._genuine(dataset, user, self.surrogate_indices)


def make_split(dataset: SynthDataset, config: Optional[SplitConfig] = None, seed: int = 0) -> SplitSpec:
    """Permute users with the seed, then cut them into attacked / background / LK2 roles."""
    config = config or SplitConfig()
    needed = config.attacked_users + config.background_users + config.lk2_users
    if len(dataset.users) < needed:
        raise InsufficientData(f"split needs {needed} users, dataset has {len(dataset.users)}")

    genuine_counts = {len(dataset.genuine(u)) for u in dataset.users}
    min_genuine = min(genuine_counts)
    reserved = config.wd_samples + config.surrogate_samples
    if min_genuine <= reserved:
        raise InsufficientData(f"users need more than {reserved} genuine samples, some have {min_genuine}")

    order = [dataset.users[i] for i in np.random.default_rng(seed).permutation(len(dataset.users))]
    a, b = config.attacked_users, config.background_users
    split = SplitSpec(
        attacked_users=tuple(sorted(order[:a])),
        background_users=tuple(sorted(order[a:a + b])),
        lk2_users=tuple(sorted(order[a + b:a + b + config.lk2_users])),
        wd_indices=tuple(range(config.wd_samples)),
        surrogate_indices=tuple(range(config.wd_samples, reserved)),
        test_indices=tuple(range(reserved, min_genuine)),
    )
    split.check()
    logger.info(f"Split (seed {seed}): {len(split.attacked_users)} attacked, "
                f"{len(split.background_users)} background, {len(split.lk2_users)} LK2 users; "
                f"{len(split.test_indices)} test genuines per user")
    return split
