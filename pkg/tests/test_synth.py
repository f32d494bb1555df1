import os
import numpy as np
import pytest
from pydantic import ValidationError
from app.errors import InsufficientData
from app.models import SynthConfig
from processors.image_processor import ImageProcessor
from synth.generator import (
    GENUINE,
    SKILLED,
    gen_user,
    instance_seed,
    load_dataset,
    render_genuine,
    render_skilled,
    user_seed,
    write_dataset,
)


def test_styles_are_deterministic():
    a, b = gen_user(11), gen_user(11)
    np.testing.assert_array_equal(a.control_points, b.control_points)
    assert a.thickness == b.thickness
    assert 3 <= a.stroke_count <= 7
    assert a.control_points.shape[1:] == (4, 2)


def test_seeds_separate_users_and_kinds():
    assert user_seed(7, 0) != user_seed(7, 1)
    assert user_seed(7, 0) == user_seed(7, 0)
    style_seed = user_seed(7, 0)
    assert instance_seed(style_seed, GENUINE, 0) != instance_seed(style_seed, SKILLED, 0)


def test_rendered_images_are_canonical():
    style = gen_user(user_seed(7, 2))
    img = render_genuine(style, instance_seed(style.seed, GENUINE, 0))
    assert img.shape == (150, 220)
    assert img.min() >= 0.0 and img.max() <= 255.0
    assert 0.5 < ImageProcessor.background_fraction(img) < 1.0


def test_genuines_vary_and_forgeries_differ():
    style = gen_user(user_seed(7, 3))
    g0 = render_genuine(style, instance_seed(style.seed, GENUINE, 0))
    g1 = render_genuine(style, instance_seed(style.seed, GENUINE, 1))
    again = render_genuine(style, instance_seed(style.seed, GENUINE, 0))
    skilled = render_skilled(style, instance_seed(style.seed, SKILLED, 0))
    np.testing.assert_array_equal(g0, again)
    assert not np.array_equal(g0, g1)
    assert not np.array_equal(g0, skilled)


def test_dataset_layout(tiny_dataset, tiny_synth_config):
    expected = tiny_synth_config.users * (tiny_synth_config.genuine_per_user + tiny_synth_config.skilled_per_user)
    assert len(tiny_dataset) == expected
    assert tiny_dataset.genuine(0).shape == (6, 150, 220)
    assert tiny_dataset.skilled(0).shape == (2, 150, 220)
    assert set(tiny_dataset.manifest.columns) >= {"path", "user", "kind", "instance", "seed"}


def test_written_dataset_reloads_as_8bit_images(tmp_path, tiny_dataset):
    root = write_dataset(tiny_dataset, str(tmp_path / "dataset"))
    loaded = load_dataset(root)
    assert loaded.users == tiny_dataset.users
    np.testing.assert_array_equal(loaded.genuine(1), ImageProcessor.discretize(tiny_dataset.genuine(1)))
    assert os.path.exists(os.path.join(root, "user_001", "skilled", "001.pgm"))


def test_writing_twice_is_byte_identical(tmp_path, tiny_dataset):
    first = write_dataset(tiny_dataset, str(tmp_path / "a"))
    second = write_dataset(tiny_dataset, str(tmp_path / "b"))
    for name in ("manifest.csv", os.path.join("user_002", "genuine", "003.pgm")):
        with open(os.path.join(first, name), "rb") as fa, open(os.path.join(second, name), "rb") as fb:
            assert fa.read() == fb.read()


def test_missing_manifest(tmp_path):
    with pytest.raises(InsufficientData):
        load_dataset(str(tmp_path))


def test_too_few_users_rejected():
    with pytest.raises(ValidationError):
        SynthConfig(users=0)
