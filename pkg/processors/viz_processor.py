"""Figures of adversarial examples and campaign results."""
import os
from typing import Optional, Sequence
import matplotlib
matplotlib.use('Agg')  # Non-interactive backend
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
from app.config import settings
from app.utils.logger import get_logger

logger = get_logger(__name__)


class VizProcessor:
    """Creates PNG figures with matplotlib."""

    def __init__(self, output_dir: Optional[str] = None):
        self.output_dir = output_dir or os.path.join(settings.work_dir, "figures")
        os.makedirs(self.output_dir, exist_ok=True)

    def adversarial_figure(
        self,
        start: np.ndarray,
        adversarial: np.ndarray,
        title: str = "",
        scores: Optional[Sequence[float]] = None,
        output_path: Optional[str] = None
    ) -> str:
        """
        Three panels: the start image, the noise delta and the adversarial image.

        Args:
            start: Canonical start image
            adversarial: Adversarial image of the same shape
            title: Figure title
            scores: Optional (s_tilde before, s_tilde after) for the panel titles
            output_path: Where to write the PNG (default: under output_dir)

        Returns:
            Path of the written figure
        """
        delta = adversarial - start
        limit = max(float(np.abs(delta).max()), 1e-12)
        # images are displayed dark-ink-on-white like a scanned signature
        fig, axes = plt.subplots(1, 3, figsize=(12, 3.5))
        axes[0].imshow(255.0 - start, cmap="gray", vmin=0, vmax=255)
        axes[1].imshow(delta, cmap="seismic", vmin=-limit, vmax=limit)
        axes[2].imshow(255.0 - adversarial, cmap="gray", vmin=0, vmax=255)

        labels = ["X", "delta", "X + delta"]
        if scores is not None:
            labels[0] += f" (s = {scores[0]:.2f})"
            labels[2] += f" (s = {scores[1]:.2f})"
        for ax, label in zip(axes, labels):
            ax.set_title(label)
            ax.axis("off")
        if title:
            fig.suptitle(title)
        plt.tight_layout()

        if output_path is None:
            output_path = os.path.join(self.output_dir, "adversarial.png")
        os.makedirs(os.path.dirname(os.path.abspath(output_path)), exist_ok=True)
        plt.savefig(output_path, dpi=150, bbox_inches='tight')
        plt.close(fig)

        logger.info(f"Created adversarial figure: {output_path}")
        return output_path

    def success_bar_chart(
        self,
        report: pd.DataFrame,
        title: str = "Attack success rate",
        output_path: Optional[str] = None
    ) -> str:
        """Grouped bars of success rate per model and method for one (goal, scenario) slice."""
        pivot = report.pivot_table(index=["feature", "defense", "classifier"], columns="method",
                                   values="success_rate", aggfunc="mean")
        fig, ax = plt.subplots(figsize=(10, 5))
        pivot.plot.bar(ax=ax)
        ax.set_ylabel("success rate (%)")
        ax.set_ylim(0, 100)
        ax.set_title(title)
        ax.grid(True, alpha=0.3)
        plt.xticks(rotation=30, ha='right')
        plt.tight_layout()

        if output_path is None:
            output_path = os.path.join(self.output_dir, "success_rate.png")
        plt.savefig(output_path, dpi=150, bbox_inches='tight')
        plt.close(fig)

        logger.info(f"Created success chart: {output_path}")
        return output_path
