"""Shared fixtures: small images, analytic oracles and a tiny synthetic dataset."""
import numpy as np
import pytest
from app.models import SplitConfig, SynthConfig
from attacks.oracles import FunctionOracle


CANON = (150, 220)


def make_canon(seed: int = 0, ink: float = 200.0) -> np.ndarray:
    """Zero background with a filled rectangle of ink near the center."""
    img = np.zeros(CANON)
    img[60:90, 80:140] = ink
    rng = np.random.default_rng(seed)
    img[60:90, 80:140] -= rng.uniform(0.0, 20.0, size=(30, 60))
    return img


def make_raw(h: int = 120, w: int = 176) -> np.ndarray:
    """Paper-convention scan: white page with a dark stroke block."""
    raw = np.full((h, w), 255.0)
    raw[40:70, 50:120] = 30.0
    return raw


def linear_oracle(weights: np.ndarray, bias: float) -> FunctionOracle:
    """s_tilde(X) = <w, X> + b, with its exact gradient."""
    return FunctionOracle(lambda img: float(np.vdot(weights, img) + bias), lambda img: weights)


@pytest.fixture
def canon_image():
    return make_canon()


@pytest.fixture
def raw_image():
    return make_raw()


@pytest.fixture(scope="session")
def tiny_synth_config():
    return SynthConfig(users=8, genuine_per_user=6, skilled_per_user=2, master_seed=3)


@pytest.fixture(scope="session")
def tiny_split_config():
    return SplitConfig(attacked_users=3, background_users=3, lk2_users=2, wd_samples=2, surrogate_samples=2)


@pytest.fixture(scope="session")
def tiny_dataset(tiny_synth_config):
    from synth.generator import build_dataset
    return build_dataset(tiny_synth_config)
