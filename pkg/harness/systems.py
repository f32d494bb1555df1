"""Target and attacker-side verification systems, and attack-sample selection."""
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple
import numpy as np
from app.config import settings
from app.errors import CapabilityError, MissingArtifact
from app.models import ClassifierKind, DefenseKind, FeatureKind, Scenario
from app.utils.logger import get_logger
from attacks.oracles import VerifierOracle
from harness.splits import SplitSpec
from synth.generator import SynthDataset
from verification.thresholds import ThresholdSet, compute_thresholds
from verification.wd_svm import WdModel, assemble_wd_trainset, train_linear, train_rbf

logger = get_logger(__name__)

SystemKey = Tuple[FeatureKind, DefenseKind, ClassifierKind]


def gamma_for(feature: FeatureKind) -> float:
    return settings.svm_gamma_cnn if feature is FeatureKind.CNN else settings.svm_gamma_clbp


def train_wd_models(features_by_user: Mapping[int, np.ndarray], users: Sequence[int],
                    classifier: ClassifierKind, gamma: float,
                    negatives_by_user: Optional[Mapping[int, np.ndarray]] = None,
                    workers: Optional[int] = None) -> Dict[int, WdModel]:
    """
    One WD classifier per user in `users`.

    Without `negatives_by_user` the other users of features_by_user are the
    negatives; otherwise those users are (their ids must differ from `users`).
    """
    workers = workers or settings.workers

    def train_one(user: int) -> WdModel:
        pool = {user: features_by_user[user]}
        if negatives_by_user is None:
            pool.update({u: features_by_user[u] for u in users if u != user})
        else:
            pool.update(negatives_by_user)
        ts = assemble_wd_trainset(pool, user, per_user=min(len(v) for v in pool.values()))
        if classifier is ClassifierKind.LINEAR:
            return train_linear(ts)
        return train_rbf(ts, gamma=gamma)

    with ThreadPoolExecutor(max_workers=workers) as executor:
        models = list(executor.map(train_one, users))
    return dict(zip(users, models))


def score_sets(models: Mapping[int, WdModel], genuine: Mapping[int, np.ndarray],
               forgery: Mapping[int, np.ndarray]) -> Tuple[Dict[int, np.ndarray], Dict[int, np.ndarray]]:
    gen = {u: models[u].score_batch(genuine[u]) for u in models}
    forg = {u: models[u].score_batch(forgery[u]) for u in models}
    return gen, forg


@dataclass
class TargetSystem:
    """The defender's feature extractor, per-user WD models and thresholds."""
    feature: FeatureKind
    defense: DefenseKind
    classifier: ClassifierKind
    extractor: object
    models: Dict[int, WdModel]
    thresholds: ThresholdSet

    @property
    def key(self) -> SystemKey:
        return self.feature, self.defense, self.classifier

    @property
    def name(self) -> str:
        return f"{self.feature.value}-{self.defense.value}-{self.classifier.value}"

    def oracle(self, user: int) -> VerifierOracle:
        return VerifierOracle(self.extractor, self.models[user], self.thresholds.global_tau, provenance="target")


@dataclass
class AttackerSystem:
    """Oracles the attacker generates adversarial images with."""
    scenario: Scenario
    target_key: SystemKey
    oracles: Dict[int, VerifierOracle] = field(default_factory=dict)

    def oracle(self, user: int) -> VerifierOracle:
        return self.oracles[user]

    @property
    def differentiable(self) -> bool:
        return all(o.has_gradient for o in self.oracles.values())


class FeatureStore:
    """Features of the campaign images per extractor, computed once."""

    def __init__(self, dataset: SynthDataset, split: SplitSpec):
        self.dataset = dataset
        self.split = split
        self._cache: Dict[Tuple[int, str, int], np.ndarray] = {}
        self._lock = threading.Lock()

    def get(self, extractor, role: str, user: int) -> np.ndarray:
        key = (id(extractor), role, user)
        with self._lock:
            if key not in self._cache:
                images = getattr(self.split, role)(self.dataset, user)
                self._cache[key] = extractor.extract_batch(images) if len(images) else np.zeros((0, 0))
            return self._cache[key]

    def by_user(self, extractor, role: str, users: Sequence[int]) -> Dict[int, np.ndarray]:
        return {u: self.get(extractor, role, u) for u in users}


def build_target_system(feature: FeatureKind, defense: DefenseKind, classifier: ClassifierKind, extractor,
                        store: FeatureStore) -> TargetSystem:
    """Train WD models on every attacked user's D_u; thresholds from test genuines vs skilled forgeries."""
    users = store.split.attacked_users
    models = train_wd_models(store.by_user(extractor, "wd_images", users), users, classifier, gamma_for(feature))
    gen, forg = score_sets(models, store.by_user(extractor, "test_genuine", users),
                           store.by_user(extractor, "test_skilled", users))
    thresholds = compute_thresholds(gen, forg)
    system = TargetSystem(feature, defense, classifier, extractor, models, thresholds)
    logger.info(f"Target {system.name}: global tau {thresholds.global_tau:.4f}, EER {thresholds.global_eer:.2%}")
    return system


def build_target_systems(extractors: Mapping[Tuple[FeatureKind, DefenseKind], object],
                         classifiers: Sequence[ClassifierKind], store: FeatureStore) -> Dict[SystemKey, TargetSystem]:
    """Every (feature, defense) extractor crossed with every WD classifier."""
    systems = {}
    for (feature, defense), extractor in extractors.items():
        for classifier in classifiers:
            systems[(feature, defense, classifier)] = build_target_system(feature, defense, classifier,
                                                                          extractor, store)
    return systems


def build_attacker_system(scenario: Scenario, target: TargetSystem, store: FeatureStore,
                          lk2_extractor=None) -> AttackerSystem:
    """
    Attacker-side oracles for one target system.

    PK reuses the target oracles. LK1 retrains WD models on the surrogate
    samples with background negatives over the target's extractor; LK2 does the
    same over the attacker's own CNN. Surrogate thresholds are EER points of the
    surrogate genuines against held-out background genuines.

    Raises:
        CapabilityError: LK2 against a CLBP target (no CNN to substitute)
        MissingArtifact: LK2 without a surrogate CNN
    """
    users = store.split.attacked_users
    if scenario is Scenario.PK:
        return AttackerSystem(scenario, target.key, {u: target.oracle(u) for u in users})

    if scenario is Scenario.LK2:
        if target.feature is not FeatureKind.CNN:
            raise CapabilityError("LK2 substitutes the CNN; not applicable to CLBP features")
        if lk2_extractor is None:
            raise MissingArtifact("LK2 needs a surrogate CNN trained on the LK2 users")
        extractor = lk2_extractor
    else:
        extractor = target.extractor

    background = store.split.background_users
    negatives = store.by_user(extractor, "background_negatives", background)
    models = train_wd_models(store.by_user(extractor, "surrogate_images", users), users, target.classifier,
                             gamma_for(target.feature), negatives_by_user=negatives)

    holdout = np.concatenate([store.get(extractor, "background_holdout", b) for b in background])
    surrogate = store.by_user(extractor, "surrogate_images", users)
    gen = {u: models[u].score_batch(surrogate[u]) for u in users}
    forg = {u: models[u].score_batch(holdout) for u in users}
    tau = compute_thresholds(gen, forg).global_tau

    provenance = f"attacker-{scenario.value}"
    oracles = {u: VerifierOracle(extractor, models[u], tau, provenance=provenance) for u in users}
    logger.info(f"Attacker {scenario.value} for {target.name}: surrogate tau {tau:.4f}")
    return AttackerSystem(scenario, target.key, oracles)


@dataclass(frozen=True)
class AttackSamples:
    """Per-user starting images; keys name the sample (kind:user:index)."""
    user: int
    genuine: np.ndarray
    genuine_key: str
    random_forgery: np.ndarray
    random_key: str
    skilled_forgery: np.ndarray
    skilled_key: str


def _first_index(score_rows: List[np.ndarray], accept: bool) -> Optional[int]:
    """First column on which every system agrees (all accept or all reject)."""
    stacked = np.vstack(score_rows)
    ok = np.all(stacked >= 0, axis=0) if accept else np.all(stacked < 0, axis=0)
    hits = np.flatnonzero(ok)
    return int(hits[0]) if len(hits) else None


def select_attack_samples(systems: Sequence[TargetSystem], store: FeatureStore
                          ) -> Tuple[Dict[int, AttackSamples], List[int]]:
    """
    Per attacked user: the first test genuine accepted by every system, the first
    random forgery (another attacked user's test genuine) and the first skilled
    forgery rejected by every system. Users without a full triple are excluded.
    """
    split, dataset = store.split, store.dataset
    users = split.attacked_users
    selected, excluded = {}, []

    def normalized(system: TargetSystem, role: str, user_owner: int, target_user: int) -> np.ndarray:
        feats = store.get(system.extractor, role, user_owner)
        return system.models[target_user].score_batch(feats) - system.thresholds.global_tau

    for user in users:
        g = _first_index([normalized(s, "test_genuine", user, user) for s in systems], accept=True)
        k = _first_index([normalized(s, "test_skilled", user, user) for s in systems], accept=False)
        random_pick = None
        for other in users:
            if other == user:
                continue
            r = _first_index([normalized(s, "test_genuine", other, user) for s in systems], accept=False)
            if r is not None:
                random_pick = (other, r)
                break

        if g is None or k is None or random_pick is None:
            excluded.append(user)
            logger.warning(f"User {user} excluded: no sample classified correctly by all "
                           f"{len(systems)} systems (genuine={g}, random={random_pick}, skilled={k})")
            continue

        other, r = random_pick
        selected[user] = AttackSamples(
            user=user,
            genuine=split.test_genuine(dataset, user)[g],
            genuine_key=f"genuine:{user}:{split.test_indices[g]}",
            random_forgery=split.test_genuine(dataset, other)[r],
            random_key=f"genuine:{other}:{split.test_indices[r]}",
            skilled_forgery=split.test_skilled(dataset, user)[k],
            skilled_key=f"skilled:{user}:{k}",
        )

    logger.info(f"Attack samples: {len(selected)} users selected, {len(excluded)} excluded")
    return selected, excluded
