"""Workspace layout and the trained artifacts a campaign depends on."""
import os
from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Sequence
import numpy as np
from app.config import settings
from app.errors import MissingArtifact
from app.models import ClassifierKind, DefenseKind, FeatureKind, SynthConfig, TrainConfig
from app.utils.logger import get_logger
from harness.splits import SplitSpec
from harness.systems import FeatureStore, TargetSystem, build_target_system
from nets.checkpoint import load_checkpoint, save_checkpoint
from nets.signet import TrainedNet, mini_signet, mini_signet_smaller, mini_signet_thin
from nets.trainer import LabeledImages, train_classifier, train_ens_adv, train_madry
from synth.generator import SynthDataset, build_dataset, load_dataset, write_dataset
from verification.features import ClbpFeatures, CnnFeatures
from verification.thresholds import thresholds_from_csv, thresholds_to_csv
from verification.wd_svm import load_svm, save_svm

logger = get_logger(__name__)

LK2_NAME = "cnn_lk2"


@dataclass
class Workspace:
    """Directory layout: dataset/, models/ (checkpoints, wd/<system>/), campaign outputs at the root."""
    root: str
    dataset_override: Optional[str] = None
    models_override: Optional[str] = None

    @property
    def dataset_dir(self) -> str:
        return self.dataset_override or os.path.join(self.root, "dataset")

    @property
    def models_dir(self) -> str:
        return self.models_override or os.path.join(self.root, "models")

    def checkpoint_path(self, name: str) -> str:
        return os.path.join(self.models_dir, f"{name}.sgn")

    def cnn_path(self, defense: DefenseKind) -> str:
        return self.checkpoint_path(f"cnn_{defense.value}")

    def wd_dir(self, feature: FeatureKind, defense: DefenseKind, classifier: ClassifierKind) -> str:
        return os.path.join(self.models_dir, "wd", f"{feature.value}_{defense.value}_{classifier.value}")


def ensure_dataset(workspace: Workspace, auto: bool = False, config: Optional[SynthConfig] = None) -> SynthDataset:
    if os.path.exists(os.path.join(workspace.dataset_dir, "manifest.csv")):
        return load_dataset(workspace.dataset_dir)
    if not auto:
        raise MissingArtifact(f"no dataset at {workspace.dataset_dir} (run synth or pass --auto)")
    dataset = build_dataset(config)
    write_dataset(dataset, workspace.dataset_dir)
    # campaigns always run on the 8-bit images as stored on disk
    return load_dataset(workspace.dataset_dir)


def training_data(dataset: SynthDataset, users: Sequence[int]) -> LabeledImages:
    images, owners = [], []
    for user in users:
        genuine = dataset.genuine(user)
        images.append(genuine)
        owners += [user] * len(genuine)
    return LabeledImages(images=np.concatenate(images), users=np.asarray(owners))


def train_cnn(dataset: SynthDataset, users: Sequence[int], defense: DefenseKind,
              config: Optional[TrainConfig] = None) -> TrainedNet:
    """Baseline, ensemble-adversarial or Madry CNN on the given users' genuines."""
    config = (config or TrainConfig()).model_copy(update={"defense": defense})
    data = training_data(dataset, users)
    n = len(data.classes)
    if defense is DefenseKind.NONE:
        return train_classifier(mini_signet(n), data, config)
    if defense is DefenseKind.MADRY:
        return train_madry(mini_signet(n), data, config)

    aux_config = config.model_copy(update={"defense": DefenseKind.NONE, "epochs": settings.cnn_aux_epochs})
    pretrained = [train_classifier(builder(n), data, aux_config) for builder in (mini_signet_thin, mini_signet_smaller)]
    return train_ens_adv(mini_signet(n), data, config, pretrained)


def _load_or_train(path: str, auto: bool, train) -> TrainedNet:
    if os.path.exists(path):
        logger.info(f"Loading checkpoint {path}")
        return load_checkpoint(path)
    if not auto:
        raise MissingArtifact(f"missing checkpoint {path} (run train or pass --auto)")
    net = train()
    save_checkpoint(net, path)
    return net


def ensure_cnn(workspace: Workspace, dataset: SynthDataset, split: SplitSpec, defense: DefenseKind,
               auto: bool = False, config: Optional[TrainConfig] = None) -> TrainedNet:
    """Target CNN, trained on the background users."""
    return _load_or_train(workspace.cnn_path(defense), auto,
                          lambda: train_cnn(dataset, split.background_users, defense, config))


def ensure_lk2_cnn(workspace: Workspace, dataset: SynthDataset, split: SplitSpec, auto: bool = False,
                   config: Optional[TrainConfig] = None) -> TrainedNet:
    """The attacker's own CNN, trained on the disjoint LK2 users."""
    return _load_or_train(workspace.checkpoint_path(LK2_NAME), auto,
                          lambda: train_cnn(dataset, split.lk2_users, DefenseKind.NONE, config))


def build_extractors(workspace: Workspace, dataset: SynthDataset, split: SplitSpec,
                     features: Iterable[FeatureKind], defenses: Iterable[DefenseKind],
                     auto: bool = False) -> Dict:
    """(feature, defense) -> extractor; CLBP has no defense variants."""
    extractors = {}
    for feature in features:
        if feature is FeatureKind.CLBP:
            extractors[(feature, DefenseKind.NONE)] = ClbpFeatures()
            continue
        for defense in defenses:
            extractors[(feature, defense)] = CnnFeatures(ensure_cnn(workspace, dataset, split, defense, auto))
    return extractors


def save_target_system(system: TargetSystem, workspace: Workspace) -> str:
    directory = workspace.wd_dir(*system.key)
    for user, model in system.models.items():
        save_svm(model, os.path.join(directory, f"user_{user:03d}.svm"))
    thresholds_to_csv(system.thresholds, os.path.join(directory, "thresholds.csv"))
    return directory


def load_target_system(workspace: Workspace, feature: FeatureKind, defense: DefenseKind,
                       classifier: ClassifierKind, extractor, users: Sequence[int]) -> TargetSystem:
    directory = workspace.wd_dir(feature, defense, classifier)
    paths = {u: os.path.join(directory, f"user_{u:03d}.svm") for u in users}
    thresholds_path = os.path.join(directory, "thresholds.csv")
    missing = [p for p in list(paths.values()) + [thresholds_path] if not os.path.exists(p)]
    if missing:
        raise MissingArtifact(f"missing WD artifacts under {directory} ({len(missing)} files)")
    return TargetSystem(feature, defense, classifier, extractor,
                        models={u: load_svm(p) for u, p in paths.items()},
                        thresholds=thresholds_from_csv(thresholds_path))


def ensure_target_systems(workspace: Workspace, extractors: Dict, classifiers: Sequence[ClassifierKind],
                          store: FeatureStore, auto: bool = False) -> Dict:
    """Load saved WD systems; train (and save) missing ones when auto is set."""
    systems = {}
    for (feature, defense), extractor in extractors.items():
        for classifier in classifiers:
            try:
                system = load_target_system(workspace, feature, defense, classifier, extractor,
                                            store.split.attacked_users)
            except MissingArtifact:
                if not auto:
                    raise
                system = build_target_system(feature, defense, classifier, extractor, store)
                save_target_system(system, workspace)
            systems[system.key] = system
    return systems
