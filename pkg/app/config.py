"""Configuration management for the signature adversarial testbed."""
from typing import List
from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Testbed settings. Every value can be overridden by a SIGADV_* variable."""

    # Runtime
    log_level: str = "INFO"
    work_dir: str = "./work"
    seed: int = 7
    workers: int = Field(default=1, ge=1)
    campaign_budget_seconds: int = 1200

    # Image pipeline
    canon_height: int = 150
    canon_width: int = 220
    canvas_scale: float = Field(default=1.5, ge=1.0)

    # CLBP
    clbp_radius: float = 1.0
    clbp_neighbors: int = 8

    # Writer-dependent SVMs
    wd_samples_per_user: int = 5
    svm_c: float = 1.0
    svm_gamma_cnn: float = 2.0 ** -11
    svm_gamma_clbp: float = 1.0
    svm_class_weighting: bool = True
    svm_squared_kernel: bool = True
    svm_tol: float = 1e-4
    svm_max_iter: int = 1_000_000

    # CNN training
    cnn_epochs: int = 30
    cnn_aux_epochs: int = 10
    cnn_batch_size: int = 32
    cnn_learning_rate: float = 0.01
    cnn_momentum: float = 0.9
    cnn_weight_decay: float = 1e-4
    cnn_optimizer: str = "sgd_momentum"
    cnn_embedding_width: int = 128

    # Defenses
    ens_adv_alpha: float = 0.5
    ens_adv_epsilon: float = 5.0
    madry_epsilon: float = 2.0
    madry_pgd_steps: int = 10
    madry_step_fraction: float = 0.25

    # Attacks
    attack_methods: str = "fgm,carlini,boundary,anneal"
    fgm_epsilon: float = 1000.0
    cw_kappa: float = 1.0
    cw_learning_rate: float = 0.01
    cw_steps: int = 500
    cw_search_steps: int = 6
    cw_c_init: float = 1.0
    cw_c_min: float = 1e-3
    cw_c_max: float = 1e2
    boundary_max_iter: int = 1000
    boundary_init_draws: int = 200
    boundary_orthogonal_step: float = 0.1
    boundary_source_step: float = 0.1
    boundary_window: int = 10
    anneal_sigma: float = 2.0
    anneal_lambda: float = 0.001
    anneal_t_max: float = 1.0
    anneal_t_min: float = 0.001
    anneal_steps: int = 1000

    # Synthetic data
    synth_attacked_users: int = 20
    synth_background_users: int = 10
    synth_lk2_users: int = 10
    synth_genuine_per_user: int = 15
    synth_skilled_per_user: int = 5
    synth_raw_height: int = 120
    synth_raw_width: int = 176

    @field_validator('attack_methods', mode='after')
    @classmethod
    def parse_attack_methods(cls, v) -> List[str]:
        """Convert comma-separated string to list."""
        if isinstance(v, str):
            return [m.strip() for m in v.split(",") if m.strip()]
        return v

    @field_validator('svm_class_weighting', 'svm_squared_kernel', mode='before')
    @classmethod
    def parse_bool(cls, v):
        """Parse boolean from string."""
        if isinstance(v, str):
            return v.lower() in ('true', '1', 'yes', 'on')
        return v

    model_config = SettingsConfigDict(
        env_prefix="SIGADV_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore"
    )


# Global settings instance
settings = Settings()
