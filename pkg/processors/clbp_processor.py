"""Completed Local Binary Patterns (CLBP_S/M/C) with the riu2 mapping."""
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple
import numpy as np
from app.models import ClbpParams
from app.utils.logger import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True)
class ClbpPlanes:
    """Per-interior-pixel sign codes, magnitude codes and center bits."""
    s_codes: np.ndarray
    m_codes: np.ndarray
    c_bits: np.ndarray
    bins: int


def _snap(v: float) -> float:
    r = round(v)
    return float(r) if abs(v - r) < 1e-9 else v


class ClbpProcessor:
    """Computes CLBP texture histograms for one set of sampling parameters."""

    def __init__(self, params: Optional[ClbpParams] = None):
        self.params = params or ClbpParams()
        self.margin = int(math.ceil(self.params.radius))

    @staticmethod
    def riu2_code(bits: Sequence[int]) -> int:
        """Popcount for patterns with at most two circular transitions, P+1 otherwise."""
        pattern = [int(b) for b in bits]
        p = len(pattern)
        transitions = sum(pattern[i] != pattern[i - 1] for i in range(p))
        return sum(pattern) if transitions <= 2 else p + 1

    @staticmethod
    def riu2_planes(bits: np.ndarray) -> np.ndarray:
        """Vectorized riu2 over a (P, H, W) stack of binary patterns."""
        p = bits.shape[0]
        transitions = np.count_nonzero(bits != np.roll(bits, 1, axis=0), axis=0)
        popcount = bits.sum(axis=0)
        return np.where(transitions <= 2, popcount, p + 1).astype(np.int64)

    def neighbor_offsets(self) -> List[Tuple[float, float]]:
        """(dy, dx) sampling offsets at angles 2*pi*k/P, shifted by `rotation` neighbor steps."""
        p, radius = self.params.neighbors, self.params.radius
        offsets = []
        for k in range(p):
            theta = 2.0 * math.pi * (k + self.params.rotation) / p
            offsets.append((_snap(-radius * math.sin(theta)), _snap(radius * math.cos(theta))))
        return offsets

    def _sample(self, img: np.ndarray, dy: float, dx: float) -> np.ndarray:
        """Bilinear samples at (r + dy, c + dx) for every interior center (r, c)."""
        margin = self.margin
        h, w = img.shape
        ih, iw = h - 2 * margin, w - 2 * margin
        y0, x0 = math.floor(dy), math.floor(dx)
        fy, fx = dy - y0, dx - x0

        def window(oy: int, ox: int) -> np.ndarray:
            return img[margin + oy:margin + oy + ih, margin + ox:margin + ox + iw]

        a = window(y0, x0)
        if fy == 0.0 and fx == 0.0:
            return a
        b = window(y0, x0 + 1) if fx else a
        c = window(y0 + 1, x0) if fy else a
        d = window(y0 + 1, x0 + 1) if fx and fy else (c if fy else b)
        top = a + fx * (b - a)
        bottom = c + fx * (d - c)
        return top + fy * (bottom - top)

    def decompose(self, img: np.ndarray) -> ClbpPlanes:
        """
        Decompose an image into CLBP sign/magnitude codes and center bits.

        Comparisons use >=; the magnitude threshold is the mean of all neighbor
        differences and the center threshold is the whole-image mean.

        Args:
            img: Canonical (or any image larger than the operator) image

        Returns:
            Planes over the interior pixels
        """
        arr = np.asarray(img, dtype=np.float64)
        margin = self.margin
        if arr.ndim != 2 or arr.shape[0] <= 2 * margin or arr.shape[1] <= 2 * margin:
            raise ValueError(f"image {arr.shape} too small for radius {self.params.radius}")

        center = arr[margin:arr.shape[0] - margin, margin:arr.shape[1] - margin]
        samples = np.stack([self._sample(arr, dy, dx) for dy, dx in self.neighbor_offsets()])

        diffs = samples - center
        magnitudes = np.abs(diffs)
        t_m = magnitudes.mean()
        t_c = arr.mean()

        s_codes = self.riu2_planes((diffs >= 0).astype(np.int64))
        m_codes = self.riu2_planes((magnitudes >= t_m).astype(np.int64))
        c_bits = (center >= t_c).astype(np.int64)
        return ClbpPlanes(s_codes=s_codes, m_codes=m_codes, c_bits=c_bits, bins=self.params.bins)

    @staticmethod
    def histogram(planes: ClbpPlanes) -> np.ndarray:
        """Joint S/M/C histogram of raw counts, flattened as s*2B + m*2 + c."""
        b = planes.bins
        index = planes.s_codes * (2 * b) + planes.m_codes * 2 + planes.c_bits
        return np.bincount(index.ravel(), minlength=b * b * 2).astype(np.float64)

    def extract(self, img: np.ndarray) -> np.ndarray:
        """L1-normalized CLBP_S/M/C feature vector (200 values for P=8)."""
        counts = self.histogram(self.decompose(img))
        return counts / counts.sum()
