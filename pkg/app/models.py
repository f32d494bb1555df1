"""Pydantic models for configuration, campaign records and reports."""
from enum import Enum
from typing import List, Literal, Optional
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from app.config import settings


class StrictModel(BaseModel):
    """Base for experiment files: unknown keys are errors."""
    model_config = ConfigDict(extra="forbid")


# ENUMS

class AttackMethod(str, Enum):
    FGM = "fgm"
    CARLINI = "carlini"
    BOUNDARY = "boundary"
    ANNEAL = "anneal"

    @property
    def needs_gradient(self) -> bool:
        return self in (AttackMethod.FGM, AttackMethod.CARLINI)


class GoalKind(str, Enum):
    """Campaign goal: attack goal plus the kind of starting sample."""
    TYPE1 = "type1"
    TYPE2_RANDOM = "type2_random"
    TYPE2_SKILLED = "type2_skilled"


class Scenario(str, Enum):
    """Attacker knowledge: PK full, LK1 surrogate data, LK2 surrogate data and CNN."""
    PK = "pk"
    LK1 = "lk1"
    LK2 = "lk2"


class FeatureKind(str, Enum):
    CLBP = "clbp"
    CNN = "cnn"

    @property
    def differentiable(self) -> bool:
        return self is FeatureKind.CNN


class ClassifierKind(str, Enum):
    LINEAR = "linear"
    RBF = "rbf"


class DefenseKind(str, Enum):
    NONE = "none"
    ENS_ADV = "ens_adv"
    MADRY = "madry"


class OptimizerKind(str, Enum):
    SGD_MOMENTUM = "sgd_momentum"
    ADAM = "adam"


# FEATURE AND TRAINING CONFIGURATION

class ClbpParams(StrictModel):
    """CLBP sampling parameters; rotation shifts the start angle by whole neighbor steps."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    radius: float = Field(default_factory=lambda: settings.clbp_radius, gt=0)
    neighbors: int = Field(default_factory=lambda: settings.clbp_neighbors, ge=4)
    mapping: Literal["riu2"] = "riu2"
    rotation: int = 0

    @property
    def bins(self) -> int:
        return self.neighbors + 2


class EnsAdvConfig(StrictModel):
    alpha: float = Field(default_factory=lambda: settings.ens_adv_alpha, gt=0.0, le=1.0)
    epsilon: float = Field(default_factory=lambda: settings.ens_adv_epsilon, ge=0.0)


class MadryConfig(StrictModel):
    epsilon: float = Field(default_factory=lambda: settings.madry_epsilon, gt=0.0)
    pgd_steps: int = Field(default_factory=lambda: settings.madry_pgd_steps, ge=1)
    step_fraction: float = Field(default_factory=lambda: settings.madry_step_fraction, gt=0.0)

    @property
    def step_size(self) -> float:
        return self.epsilon * self.step_fraction


class TrainConfig(StrictModel):
    """CNN training configuration (SigNet-style SGD schedule by default)."""
    epochs: int = Field(default_factory=lambda: settings.cnn_epochs, ge=1)
    batch_size: int = Field(default_factory=lambda: settings.cnn_batch_size, ge=1)
    learning_rate: float = Field(default_factory=lambda: settings.cnn_learning_rate, gt=0)
    lr_decay: float = 0.1
    decay_fraction: float = Field(default=2.0 / 3.0, gt=0.0, le=1.0)
    momentum: float = Field(default_factory=lambda: settings.cnn_momentum, ge=0.0, lt=1.0)
    weight_decay: float = Field(default_factory=lambda: settings.cnn_weight_decay, ge=0.0)
    optimizer: OptimizerKind = Field(default_factory=lambda: OptimizerKind(settings.cnn_optimizer))
    defense: DefenseKind = DefenseKind.NONE
    ens_adv: EnsAdvConfig = Field(default_factory=EnsAdvConfig)
    madry: MadryConfig = Field(default_factory=MadryConfig)
    seed: int = Field(default_factory=lambda: settings.seed)

    @property
    def decay_epoch(self) -> int:
        return int(round(self.epochs * self.decay_fraction))


# ATTACK CONFIGURATION

class BinarySearchConfig(StrictModel):
    steps: int = Field(default_factory=lambda: settings.cw_search_steps, ge=1)
    c_init: float = Field(default_factory=lambda: settings.cw_c_init, gt=0)
    c_min: float = Field(default_factory=lambda: settings.cw_c_min, gt=0)
    c_max: float = Field(default_factory=lambda: settings.cw_c_max, gt=0)

    @model_validator(mode="after")
    def check_range(self):
        if not self.c_min <= self.c_init <= self.c_max:
            raise ValueError("c_init must lie in [c_min, c_max]")
        return self


class AdamConfig(StrictModel):
    learning_rate: float = Field(default_factory=lambda: settings.cw_learning_rate, gt=0)
    steps: int = Field(default_factory=lambda: settings.cw_steps, ge=1)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    abort_early: bool = True


class BoundaryConfig(StrictModel):
    max_iter: int = Field(default_factory=lambda: settings.boundary_max_iter, ge=1)
    init_draws: int = Field(default_factory=lambda: settings.boundary_init_draws, ge=1)
    orthogonal_step: float = Field(default_factory=lambda: settings.boundary_orthogonal_step, gt=0)
    source_step: float = Field(default_factory=lambda: settings.boundary_source_step, gt=0)
    window: int = Field(default_factory=lambda: settings.boundary_window, ge=1)
    step_up: float = 1.2
    step_down: float = 0.7
    min_source_step: float = 1e-7
    line_search_steps: int = 25


class AnnealConfig(StrictModel):
    sigma: float = Field(default_factory=lambda: settings.anneal_sigma, gt=0)
    lam: float = Field(default_factory=lambda: settings.anneal_lambda, ge=0)
    t_max: float = Field(default_factory=lambda: settings.anneal_t_max, gt=0)
    t_min: float = Field(default_factory=lambda: settings.anneal_t_min, gt=0)
    steps: int = Field(default_factory=lambda: settings.anneal_steps, ge=1)

    @model_validator(mode="after")
    def check_schedule(self):
        if self.t_min > self.t_max:
            raise ValueError("t_min must not exceed t_max")
        return self


class AttackConfig(StrictModel):
    """Parameters of the four attacks, grouped as they appear in campaign.json."""
    fgm_epsilon: float = Field(default_factory=lambda: settings.fgm_epsilon, ge=0)
    kappa: float = Field(default_factory=lambda: settings.cw_kappa, ge=0)
    search: BinarySearchConfig = Field(default_factory=BinarySearchConfig)
    adam: AdamConfig = Field(default_factory=AdamConfig)
    boundary: BoundaryConfig = Field(default_factory=BoundaryConfig)
    anneal: AnnealConfig = Field(default_factory=AnnealConfig)


# DATA AND CAMPAIGN CONFIGURATION

class SynthConfig(StrictModel):
    users: int = Field(
        default_factory=lambda: (
            settings.synth_attacked_users + settings.synth_background_users + settings.synth_lk2_users
        )
    )
    genuine_per_user: int = Field(default_factory=lambda: settings.synth_genuine_per_user, ge=1)
    skilled_per_user: int = Field(default_factory=lambda: settings.synth_skilled_per_user, ge=0)
    master_seed: int = Field(default_factory=lambda: settings.seed)

    @field_validator("users")
    @classmethod
    def check_users(cls, v: int) -> int:
        if v < 4:
            raise ValueError("at least 4 users are needed for the dataset splits")
        return v


class SplitConfig(StrictModel):
    attacked_users: int = Field(default_factory=lambda: settings.synth_attacked_users, ge=2)
    background_users: int = Field(default_factory=lambda: settings.synth_background_users, ge=1)
    lk2_users: int = Field(default_factory=lambda: settings.synth_lk2_users, ge=2)
    wd_samples: int = Field(default_factory=lambda: settings.wd_samples_per_user, ge=1)
    surrogate_samples: int = Field(default_factory=lambda: settings.wd_samples_per_user, ge=1)


class CampaignConfig(StrictModel):
    """Grid definition of a campaign (campaign.json)."""
    features: List[FeatureKind] = Field(default_factory=lambda: [FeatureKind.CLBP, FeatureKind.CNN])
    defenses: List[DefenseKind] = Field(default_factory=lambda: [DefenseKind.NONE])
    classifiers: List[ClassifierKind] = Field(
        default_factory=lambda: [ClassifierKind.LINEAR, ClassifierKind.RBF]
    )
    methods: List[AttackMethod] = Field(
        default_factory=lambda: [AttackMethod(m) for m in settings.attack_methods]
    )
    goals: List[GoalKind] = Field(default_factory=lambda: list(GoalKind))
    scenarios: List[Scenario] = Field(default_factory=lambda: list(Scenario))
    seeds: List[int] = Field(default_factory=lambda: [settings.seed])
    noise_removal: bool = False
    discretization: bool = False
    dump_images: bool = False
    max_users: Optional[int] = Field(default=None, ge=1)
    dataset_dir: Optional[str] = None
    models_dir: Optional[str] = None
    attacks: AttackConfig = Field(default_factory=AttackConfig)
    split: SplitConfig = Field(default_factory=SplitConfig)

    @field_validator("features", "classifiers", "methods", "goals", "scenarios", "seeds")
    @classmethod
    def non_empty(cls, v):
        if not v:
            raise ValueError("grid axes must not be empty")
        return v


class CliConfig(StrictModel):
    command: Literal["synth", "train", "attack", "campaign", "report"]
    config: Optional[str] = None
    output_dir: str = Field(default_factory=lambda: settings.work_dir)
    seed: int = Field(default_factory=lambda: settings.seed)
    verbosity: int = Field(default=0, ge=0)
    workers: int = Field(default_factory=lambda: settings.workers, ge=1)


# RECORDS

class OutcomeRecord(BaseModel):
    """One attack of a campaign, as written to outcomes.csv."""
    feature: FeatureKind
    defense: DefenseKind
    classifier: ClassifierKind
    method: AttackMethod
    goal: GoalKind
    scenario: Scenario
    seed: int
    user: int
    start_key: str
    success: bool
    attacker_success: bool
    rmse: float = Field(ge=0.0)
    iterations: int = 0
    start_score: Optional[float] = None
    attacker_score: Optional[float] = None
    target_score: Optional[float] = None
    success_after_removal: Optional[bool] = None
    success_discretized: Optional[bool] = None
    image_path: Optional[str] = None
    error: Optional[str] = None


class ReportRow(BaseModel):
    """Aggregated cell of the success/RMSE tables."""
    feature: FeatureKind
    defense: DefenseKind
    classifier: ClassifierKind
    method: AttackMethod
    goal: GoalKind
    scenario: Scenario
    success_rate: float = Field(ge=0.0, le=100.0)
    mean_rmse: Optional[float] = None
    n_attacks: int = Field(ge=0)
    success_rate_after_removal: Optional[float] = None
    success_rate_discretized: Optional[float] = None

    @model_validator(mode="after")
    def rmse_only_with_success(self):
        if self.success_rate == 0 and self.mean_rmse is not None:
            raise ValueError("mean_rmse must be absent when no attack succeeded")
        return self


class VerificationRow(BaseModel):
    """EER of one target system, with global and per-user thresholds."""
    feature: FeatureKind
    defense: DefenseKind
    classifier: ClassifierKind
    eer_global: float
    eer_user: float
    global_tau: float
    n_users: int
