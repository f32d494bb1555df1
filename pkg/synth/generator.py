"""Synthetic signature generator: per-user Bezier stroke styles, genuines and skilled forgeries."""
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple
import cv2
import numpy as np
import pandas as pd
from tqdm.auto import tqdm
from app.config import settings
from app.errors import InsufficientData
from app.models import SynthConfig
from app.utils.logger import get_logger, progress_enabled
from processors.data_processor import DataProcessor
from processors.image_processor import ImageProcessor

logger = get_logger(__name__)

GENUINE = "genuine"
SKILLED = "skilled"
KIND_CODES = {GENUINE: 0, SKILLED: 1}

SUPERSAMPLE = 4
CURVE_POINTS = 48
MARGIN_X = 0.1
MARGIN_Y = 0.15
PAPER_NOISE = 1.5

# skilled forgeries: amplified control-point noise plus a systematic thickness and slant bias
SKILLED_JITTER_FACTOR = 3.0
SKILLED_THICKNESS_BIAS = 0.6
SKILLED_SLANT_BIAS = 0.12

ImageKey = Tuple[int, str, int]


@dataclass(frozen=True, eq=False)
class StyleParams:
    """A user's handwriting: strokes of four cubic Bezier control points in canvas units."""
    seed: int
    control_points: np.ndarray
    thickness: float
    slant: float
    ink: float
    jitter: float = 0.02

    @property
    def stroke_count(self) -> int:
        return len(self.control_points)


def user_seed(master_seed: int, user: int) -> int:
    return int(np.random.SeedSequence([master_seed, user]).generate_state(1)[0])


def instance_seed(style_seed: int, kind: str, instance: int) -> int:
    return int(np.random.SeedSequence([style_seed, KIND_CODES[kind], instance]).generate_state(1)[0])


def gen_user(seed: int) -> StyleParams:
    """Deterministic style from a seed: 3-7 strokes laid out left to right."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 8))
    strokes = []
    for i in range(n):
        left = max(0.0, i / n - 0.05)
        right = min(1.0, (i + 1) / n + 0.05)
        xs = np.sort(rng.uniform(left, right, size=4))
        ys = rng.uniform(0.2, 0.8, size=4)
        strokes.append(np.stack([xs, ys], axis=1))
    return StyleParams(
        seed=int(seed),
        control_points=np.stack(strokes),
        thickness=float(rng.uniform(1.5, 3.5)),
        slant=float(rng.uniform(-0.3, 0.3)),
        ink=float(rng.uniform(160.0, 255.0)),
    )


def _bezier(points: np.ndarray) -> np.ndarray:
    t = np.linspace(0.0, 1.0, CURVE_POINTS)[:, None]
    p0, p1, p2, p3 = points
    return (1 - t) ** 3 * p0 + 3 * (1 - t) ** 2 * t * p1 + 3 * (1 - t) * t ** 2 * p2 + t ** 3 * p3


def _render_raw(style: StyleParams, rng: np.random.Generator, jitter: float, thickness: float,
                slant: float) -> np.ndarray:
    """Rasterize the strokes on white paper; returns a raw scan with dark ink."""
    h, w = settings.synth_raw_height, settings.synth_raw_width
    coverage = np.zeros((h * SUPERSAMPLE, w * SUPERSAMPLE), dtype=np.uint8)
    width_px = max(1, int(round(thickness * SUPERSAMPLE)))

    for points in style.control_points:
        pts = points + rng.normal(0.0, jitter, size=points.shape)
        pts[:, 0] += slant * (0.5 - pts[:, 1])
        curve = _bezier(pts)
        px = (MARGIN_X + (1 - 2 * MARGIN_X) * np.clip(curve[:, 0], 0, 1)) * w * SUPERSAMPLE
        py = (MARGIN_Y + (1 - 2 * MARGIN_Y) * np.clip(curve[:, 1], 0, 1)) * h * SUPERSAMPLE
        polyline = np.round(np.stack([px, py], axis=1)).astype(np.int32).reshape(-1, 1, 2)
        cv2.polylines(coverage, [polyline], isClosed=False, color=255, thickness=width_px, lineType=cv2.LINE_AA)

    ink = cv2.resize(coverage, (w, h), interpolation=cv2.INTER_AREA).astype(np.float64) / 255.0
    paper = np.abs(rng.normal(0.0, PAPER_NOISE, size=(h, w)))
    return np.clip(255.0 - style.ink * ink - paper, 0.0, 255.0)


def render_raw_genuine(style: StyleParams, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    thickness = style.thickness * (1.0 + rng.normal(0.0, 0.1))
    return _render_raw(style, rng, style.jitter, max(thickness, 1.0), style.slant)


def render_raw_skilled(style: StyleParams, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    direction = 1.0 if rng.random() < 0.5 else -1.0
    thickness = style.thickness + direction * SKILLED_THICKNESS_BIAS + rng.normal(0.0, 0.2)
    slant = style.slant + direction * SKILLED_SLANT_BIAS
    return _render_raw(style, rng, style.jitter * SKILLED_JITTER_FACTOR, max(thickness, 1.0), slant)


def render_genuine(style: StyleParams, seed: int, processor: Optional[ImageProcessor] = None) -> np.ndarray:
    """Canonical image of one genuine signature."""
    return (processor or ImageProcessor()).preprocess(render_raw_genuine(style, seed))


def render_skilled(style: StyleParams, seed: int, processor: Optional[ImageProcessor] = None) -> np.ndarray:
    """Canonical image of a skilled forgery of the style's owner."""
    return (processor or ImageProcessor()).preprocess(render_raw_skilled(style, seed))


@dataclass
class SynthDataset:
    users: List[int]
    images: Dict[ImageKey, np.ndarray]
    manifest: pd.DataFrame
    styles: Dict[int, StyleParams] = field(default_factory=dict)

    def _stack(self, user: int, kind: str) -> np.ndarray:
        keys = sorted(k for k in self.images if k[0] == user and k[1] == kind)
        if not keys:
            return np.zeros((0, settings.canon_height, settings.canon_width))
        return np.stack([self.images[k] for k in keys])

    def genuine(self, user: int) -> np.ndarray:
        return self._stack(user, GENUINE)

    def skilled(self, user: int) -> np.ndarray:
        return self._stack(user, SKILLED)

    def __len__(self) -> int:
        return len(self.images)


def _relative_path(user: int, kind: str, instance: int) -> str:
    return f"user_{user:03d}/{kind}/{instance:03d}.pgm"


def build_dataset(config: Optional[SynthConfig] = None) -> SynthDataset:
    """Render every user's genuines and skilled forgeries; random forgeries are other users' genuines."""
    config = config or SynthConfig()
    images: Dict[ImageKey, np.ndarray] = {}
    styles: Dict[int, StyleParams] = {}
    rows = []
    users = list(range(config.users))
    image_processor = ImageProcessor()
    logger.info(f"Rendering {config.users} users x ({config.genuine_per_user} genuine + "
                f"{config.skilled_per_user} skilled), master seed {config.master_seed}")

    for user in tqdm(users, desc="synth", disable=not progress_enabled(logger)):
        style = gen_user(user_seed(config.master_seed, user))
        styles[user] = style
        for kind, count, render in ((GENUINE, config.genuine_per_user, render_genuine),
                                    (SKILLED, config.skilled_per_user, render_skilled)):
            for instance in range(count):
                seed = instance_seed(style.seed, kind, instance)
                images[(user, kind, instance)] = render(style, seed, image_processor)
                rows.append({"path": _relative_path(user, kind, instance), "user": user,
                             "kind": kind, "instance": instance, "seed": seed})

    return SynthDataset(users=users, images=images, manifest=pd.DataFrame(rows), styles=styles)


def write_dataset(dataset: SynthDataset, root: str, processor: Optional[DataProcessor] = None) -> str:
    """user_XXX/{genuine,skilled}/NNN.pgm plus manifest.csv under root."""
    processor = processor or DataProcessor()
    os.makedirs(root, exist_ok=True)
    for row in dataset.manifest.itertuples():
        image = dataset.images[(int(row.user), row.kind, int(row.instance))]
        ImageProcessor.save_pgm(image, os.path.join(root, row.path))
    processor.save_csv(dataset.manifest, os.path.join(root, "manifest.csv"))
    logger.info(f"Wrote {len(dataset)} images to {root}")
    return root


def load_dataset(root: str, processor: Optional[DataProcessor] = None) -> SynthDataset:
    processor = processor or DataProcessor()
    manifest_path = os.path.join(root, "manifest.csv")
    if not os.path.exists(manifest_path):
        raise InsufficientData(f"no dataset manifest at {manifest_path}")
    manifest = processor.load_csv(manifest_path, required=("path", "user", "kind", "instance", "seed"))
    images = {
        (int(row.user), row.kind, int(row.instance)): ImageProcessor.load_pgm(os.path.join(root, row.path))
        for row in manifest.itertuples()
    }
    users = sorted(int(u) for u in manifest["user"].unique())
    return SynthDataset(users=users, images=images, manifest=manifest)
