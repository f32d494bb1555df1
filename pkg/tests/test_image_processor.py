from fractions import Fraction
import numpy as np
import pytest
from app.errors import Degenerate, DimensionMismatch, DoesNotFit, FormatError, ImageError, NoMass
from processors.image_processor import ImageProcessor, decode_sgf, encode_sgf, load_sgf, save_sgf


@pytest.fixture
def processor():
    return ImageProcessor()


def brute_force_otsu(img: np.ndarray) -> int:
    """Smallest t maximizing the between-class variance of {p < t} vs {p >= t}, from the pixels."""
    levels = np.floor(np.asarray(img, dtype=np.float64) + 0.5).astype(np.int64).ravel()
    total = len(levels)
    best_t, best = None, Fraction(-1)
    for t in range(1, 256):
        low, high = levels[levels < t], levels[levels >= t]
        if len(low) == 0 or len(high) == 0:
            continue
        mean_low = Fraction(int(low.sum()), len(low))
        mean_high = Fraction(int(high.sum()), len(high))
        variance = Fraction(len(low) * len(high), total * total) * (mean_low - mean_high) ** 2
        if variance > best:
            best_t, best = t, variance
    return best_t


def test_validate_gray_rejects_out_of_range_and_nan():
    with pytest.raises(ImageError):
        ImageProcessor.validate_gray(np.full((3, 3), 256.0))
    with pytest.raises(ImageError):
        ImageProcessor.validate_gray(np.array([[0.0, np.nan]]))
    with pytest.raises(ImageError):
        ImageProcessor.validate_gray(np.zeros(5))


def test_validate_canon_checks_shape(processor, canon_image):
    processor.validate_canon(canon_image, min_background=0.5)
    with pytest.raises(DimensionMismatch):
        processor.validate_canon(np.zeros((10, 10)))
    small = ImageProcessor(canon_shape=(10, 10))
    small.validate_canon(np.zeros((10, 10)))


def test_center_by_mass_moves_centroid_to_canvas_center():
    img = np.zeros((5, 7))
    img[2, 3] = 100.0
    out = ImageProcessor.center_by_mass(img, 11, 11)
    assert out.shape == (11, 11)
    assert out[5, 5] == 100.0
    assert out.sum() == 100.0


def test_center_by_mass_errors():
    with pytest.raises(NoMass):
        ImageProcessor.center_by_mass(np.zeros((4, 4)), 8, 8)
    with pytest.raises(DoesNotFit):
        ImageProcessor.center_by_mass(np.ones((3, 20)), 5, 5)


def test_resize_to_same_size_is_identity(canon_image):
    out = ImageProcessor.resize_bilinear(canon_image, 150, 220)
    np.testing.assert_array_equal(out, canon_image)


def test_resize_output_shape_and_range():
    img = np.random.default_rng(1).uniform(0, 255, size=(40, 60))
    out = ImageProcessor.resize_bilinear(img, 15, 22)
    assert out.shape == (15, 22)
    assert out.min() >= 0.0 and out.max() <= 255.0


def test_otsu_two_levels_picks_smallest_separating_threshold():
    img = np.array([[0.0] * 50 + [200.0] * 50])
    assert ImageProcessor.otsu_threshold(img) == 1


def test_otsu_matches_exhaustive_variance_scan():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        img = rng.uniform(0, 255, size=(16, 20))
        # zero background like a canonical image, with a random ink share
        img[rng.random(img.shape) < rng.uniform(0.2, 0.9)] = 0.0
        assert ImageProcessor.otsu_threshold(img) == brute_force_otsu(img)


def test_otsu_constant_image_is_degenerate():
    with pytest.raises(Degenerate):
        ImageProcessor.otsu_threshold(np.full((4, 4), 7.0))


def test_suppress_below_zeroes_only_dim_pixels():
    img = np.array([[3.0, 10.0, 200.0]])
    np.testing.assert_array_equal(ImageProcessor.suppress_below(img, 10), [[0.0, 10.0, 200.0]])
    with pytest.raises(ValueError):
        ImageProcessor.suppress_below(img, 300)


def test_preprocess_produces_canonical_image(processor, raw_image):
    canon = processor.preprocess(raw_image)
    assert canon.shape == (150, 220)
    assert canon.min() >= 0.0 and canon.max() <= 255.0
    assert processor.background_fraction(canon) > 0.5
    # the ink block lands near the middle of the canvas
    rows, cols = np.nonzero(canon)
    assert abs(rows.mean() - 74.5) < 5
    assert abs(cols.mean() - 109.5) < 5


def test_remove_noise_clears_low_amplitude_background(canon_image):
    adv = canon_image.copy()
    adv[adv == 0.0] = 5.0
    cleaned = ImageProcessor.remove_noise(adv)
    assert ImageProcessor.background_fraction(cleaned) == pytest.approx(ImageProcessor.background_fraction(canon_image))
    np.testing.assert_array_equal(cleaned[60:90, 80:140], adv[60:90, 80:140])


def test_remove_noise_on_constant_image_returns_copy():
    img = np.full((5, 5), 3.0)
    np.testing.assert_array_equal(ImageProcessor.remove_noise(img), img)


def test_rmse_and_dimension_mismatch():
    a = np.zeros((4, 4))
    assert ImageProcessor.rmse(a, a) == 0.0
    assert ImageProcessor.rmse(a, a + 3.0) == pytest.approx(3.0)
    with pytest.raises(DimensionMismatch):
        ImageProcessor.rmse(a, np.zeros((4, 5)))


def test_discretize_rounds_halves_up():
    rounded = ImageProcessor.discretize(np.array([2.5, 1.49, 254.7, 0.5]))
    np.testing.assert_array_equal(rounded, [3.0, 1.0, 255.0, 1.0])


def test_pgm_stores_discretized_image(tmp_path, canon_image):
    path = tmp_path / "img.pgm"
    ImageProcessor.save_pgm(canon_image + 0.4, str(path))
    np.testing.assert_array_equal(ImageProcessor.load_pgm(str(path)), ImageProcessor.discretize(canon_image + 0.4))


def test_load_pgm_rejects_garbage(tmp_path):
    path = tmp_path / "bad.pgm"
    path.write_bytes(b"not an image")
    with pytest.raises(FormatError):
        ImageProcessor.load_pgm(str(path))


def test_sgf_blocks_decode_from_offset(tmp_path):
    first = np.arange(6, dtype=np.float64).reshape(2, 3)
    second = np.array([[1.5, -2.25]])
    buf = encode_sgf(first) + encode_sgf(second)
    a, offset = decode_sgf(buf)
    b, end = decode_sgf(buf, offset)
    np.testing.assert_array_equal(a, first)
    np.testing.assert_array_equal(b, second)
    assert end == len(buf)

    save_sgf(first, str(tmp_path / "a.sgf"))
    np.testing.assert_array_equal(load_sgf(str(tmp_path / "a.sgf")), first)


def test_sgf_rejects_bad_magic_and_truncation():
    with pytest.raises(FormatError):
        decode_sgf(b"XXXX" + bytes(8))
    with pytest.raises(FormatError):
        decode_sgf(encode_sgf(np.ones((2, 2)))[:-3])
