"""Grayscale image operations, the signature preprocessing pipeline and image I/O.

Images are 2-D float64 numpy arrays with intensities in [0, 255]. Raw scans
follow the paper-on-desk convention (white background, dark ink); canonical
images are 150x220, inverted so the background is zero.
"""
import math
import os
from typing import Optional, Tuple
import cv2
import numpy as np
from PIL import Image
from scipy import ndimage
from app.config import settings
from app.errors import Degenerate, DimensionMismatch, DoesNotFit, FormatError, ImageError, NoMass
from app.utils.logger import get_logger

logger = get_logger(__name__)

SGF_MAGIC = b"SGF1"


class ImageProcessor:
    """Preprocesses signature scans and implements the image-level countermeasures."""

    def __init__(self, canon_shape: Optional[Tuple[int, int]] = None, canvas_scale: Optional[float] = None):
        self.canon_shape = canon_shape or (settings.canon_height, settings.canon_width)
        self.canvas_scale = settings.canvas_scale if canvas_scale is None else canvas_scale

    # contracts

    @staticmethod
    def validate_gray(img: np.ndarray) -> np.ndarray:
        """Return img as float64 after checking the grayscale image contract."""
        arr = np.asarray(img, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ImageError(f"expected a non-empty 2-D image, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ImageError("image contains non-finite intensities")
        if arr.min() < 0.0 or arr.max() > 255.0:
            raise ImageError(f"intensities outside [0, 255]: [{arr.min()}, {arr.max()}]")
        return arr

    def validate_canon(self, img: np.ndarray, min_background: Optional[float] = None) -> np.ndarray:
        """Check the canonical shape contract; optionally the zero-background fraction."""
        arr = self.validate_gray(img)
        if arr.shape != tuple(self.canon_shape):
            raise DimensionMismatch(f"canonical image must be {tuple(self.canon_shape)}, got {arr.shape}")
        if min_background is not None and self.background_fraction(arr) < min_background:
            raise ImageError(f"background fraction {self.background_fraction(arr):.3f} < {min_background}")
        return arr

    @staticmethod
    def background_fraction(img: np.ndarray) -> float:
        return float(np.mean(np.asarray(img) == 0.0))

    @staticmethod
    def clip(img: np.ndarray) -> np.ndarray:
        return np.clip(img, 0.0, 255.0)

    # geometry

    @classmethod
    def center_by_mass(cls, img: np.ndarray, h: int, w: int) -> np.ndarray:
        """
        Translate img rigidly so its intensity centroid sits at the center of an h x w canvas.

        Args:
            img: Source image (zero background)
            h: Canvas height
            w: Canvas width

        Returns:
            Centered h x w image

        Raises:
            NoMass: image is all zero
            DoesNotFit: nonzero content would leave the canvas
        """
        arr = cls.validate_gray(img)
        if not np.any(arr > 0):
            raise NoMass("cannot center an image without mass")

        cy, cx = ndimage.center_of_mass(arr)
        oy = int(math.floor((h - 1) / 2.0 - cy + 0.5))
        ox = int(math.floor((w - 1) / 2.0 - cx + 0.5))

        rows = np.flatnonzero(arr.any(axis=1))
        cols = np.flatnonzero(arr.any(axis=0))
        top, bottom = rows[0] + oy, rows[-1] + oy
        left, right = cols[0] + ox, cols[-1] + ox
        if top < 0 or left < 0 or bottom >= h or right >= w:
            raise DoesNotFit(f"content of {arr.shape} shifted by ({oy}, {ox}) leaves canvas {h}x{w}")

        out = np.zeros((h, w), dtype=np.float64)
        # copy only the overlap of the shifted source with the canvas
        src_r0, src_c0 = max(0, -oy), max(0, -ox)
        src_r1, src_c1 = min(arr.shape[0], h - oy), min(arr.shape[1], w - ox)
        out[src_r0 + oy:src_r1 + oy, src_c0 + ox:src_c1 + ox] = arr[src_r0:src_r1, src_c0:src_c1]
        return out

    @classmethod
    def resize_bilinear(cls, img: np.ndarray, h: int, w: int) -> np.ndarray:
        """Bilinear resampling (pixel-center aligned) to h x w."""
        if h < 1 or w < 1:
            raise ValueError(f"target size must be positive, got {h}x{w}")
        arr = cls.validate_gray(img)
        if arr.shape == (h, w):
            return arr.copy()
        out = cv2.resize(arr, (w, h), interpolation=cv2.INTER_LINEAR)
        return cls.clip(out.astype(np.float64))

    @staticmethod
    def invert(img: np.ndarray) -> np.ndarray:
        return 255.0 - np.asarray(img, dtype=np.float64)

    def canvas_for(self, raw_shape: Tuple[int, int], scale: Optional[float] = None) -> Tuple[int, int]:
        scale = self.canvas_scale if scale is None else scale
        return int(math.ceil(raw_shape[0] * scale)), int(math.ceil(raw_shape[1] * scale))

    # thresholding

    @staticmethod
    def intensity_histogram(img: np.ndarray) -> np.ndarray:
        """256-bin histogram of intensities rounded half up."""
        levels = np.clip(np.floor(np.asarray(img, dtype=np.float64) + 0.5), 0, 255).astype(np.int64)
        return np.bincount(levels.ravel(), minlength=256)

    @classmethod
    def otsu_threshold(cls, img: np.ndarray) -> int:
        """
        Threshold t maximizing between-class variance of {p < t} vs {p >= t}.

        The criterion is evaluated in exact integer arithmetic on the 256-bin
        histogram of rounded intensities, so ties resolve to the smallest t.

        Raises:
            Degenerate: fewer than two distinct rounded levels
        """
        hist = cls.intensity_histogram(img)
        if np.count_nonzero(hist) < 2:
            raise Degenerate("OTSU needs at least two distinct intensity levels")

        counts = [int(c) for c in hist]
        total_n = sum(counts)
        total_s = sum(level * c for level, c in enumerate(counts))

        best_t, best_num, best_den = 0, 0, 1
        n0 = s0 = 0
        for t in range(1, 256):
            n0 += counts[t - 1]
            s0 += (t - 1) * counts[t - 1]
            n1 = total_n - n0
            if n0 == 0 or n1 == 0:
                continue
            # sigma_b^2 * N^2 = (N*S0 - n0*S)^2 / (n0*n1)
            num = (total_n * s0 - n0 * total_s) ** 2
            den = n0 * n1
            if num * best_den > best_num * den:
                best_t, best_num, best_den = t, num, den
        return best_t

    @staticmethod
    def suppress_below(img: np.ndarray, t: int) -> np.ndarray:
        """Zero every pixel with intensity < t, leaving the rest in grayscale."""
        if not 0 <= t <= 255:
            raise ValueError(f"threshold must be in [0, 255], got {t}")
        arr = np.asarray(img, dtype=np.float64)
        return np.where(arr < t, 0.0, arr)

    # pipeline

    def preprocess(self, raw: np.ndarray, canvas_scale: Optional[float] = None) -> np.ndarray:
        """
        Raw scan (white paper, dark ink) to canonical image.

        Centers the ink mass on a blank canvas, resizes to the canonical shape,
        inverts so the background is zero and suppresses everything below the
        OTSU threshold.
        """
        arr = self.validate_gray(raw)
        h, w = self.canvas_for(arr.shape, canvas_scale)
        centered = self.invert(self.center_by_mass(self.invert(arr), h, w))
        resized = self.resize_bilinear(centered, *self.canon_shape)
        canon = self.invert(resized)
        return self.suppress_below(canon, self.otsu_threshold(canon))

    @classmethod
    def remove_noise(cls, adv: np.ndarray) -> np.ndarray:
        """Background-removal countermeasure: OTSU re-estimated on the (adversarial) image."""
        arr = np.asarray(adv, dtype=np.float64)
        try:
            return cls.suppress_below(arr, cls.otsu_threshold(arr))
        except Degenerate:
            logger.warning("remove_noise: constant image, returned unchanged")
            return arr.copy()

    @staticmethod
    def noise_delta(a: np.ndarray, b: np.ndarray) -> np.ndarray:
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if a.shape != b.shape:
            raise DimensionMismatch(f"{a.shape} vs {b.shape}")
        return b - a

    @classmethod
    def rmse(cls, a: np.ndarray, b: np.ndarray) -> float:
        """Root mean square difference on the [0, 255] scale."""
        delta = cls.noise_delta(a, b)
        return float(np.sqrt(np.mean(delta * delta)))

    @classmethod
    def discretize(cls, img: np.ndarray) -> np.ndarray:
        """Round to the nearest integer, halves up."""
        return cls.clip(np.floor(np.asarray(img, dtype=np.float64) + 0.5))

    # I/O

    @classmethod
    def save_pgm(cls, img: np.ndarray, path: str):
        """Write an 8-bit binary PGM (P5); intensities are discretized first."""
        arr = cls.discretize(cls.validate_gray(img)).astype(np.uint8)
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        Image.fromarray(arr).save(path, format="PPM")

    @staticmethod
    def load_pgm(path: str) -> np.ndarray:
        try:
            with Image.open(path) as im:
                return np.asarray(im.convert("L"), dtype=np.float64)
        except (OSError, ValueError) as e:
            raise FormatError(f"cannot read PGM {path}: {e}") from e


# SGF1 float container, shared with the checkpoint and SVM files

def encode_sgf(array: np.ndarray) -> bytes:
    """Raw float container: magic, u32 height, u32 width, little-endian float32 data."""
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionMismatch(f"SGF1 holds 2-D arrays, got {arr.ndim}-D")
    header = np.array(arr.shape, dtype="<u4").tobytes()
    return SGF_MAGIC + header + arr.astype("<f4").tobytes()


def decode_sgf(buf: bytes, offset: int = 0) -> Tuple[np.ndarray, int]:
    """Decode one SGF1 block starting at offset; returns (array, next offset)."""
    if buf[offset:offset + 4] != SGF_MAGIC:
        raise FormatError("bad SGF1 magic")
    if len(buf) < offset + 12:
        raise FormatError("truncated SGF1 header")
    h, w = np.frombuffer(buf, dtype="<u4", count=2, offset=offset + 4)
    start = offset + 12
    end = start + int(h) * int(w) * 4
    if len(buf) < end:
        raise FormatError("truncated SGF1 data")
    data = np.frombuffer(buf, dtype="<f4", count=int(h) * int(w), offset=start)
    return data.astype(np.float64).reshape(int(h), int(w)), end


def save_sgf(array: np.ndarray, path: str):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(encode_sgf(array))


def load_sgf(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        array, _ = decode_sgf(f.read())
    return array
