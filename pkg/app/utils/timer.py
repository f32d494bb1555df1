"""Wall-clock budget tracking for desk-scale campaigns."""
import time
from typing import Optional
from app.config import settings
from app.utils.logger import get_logger

logger = get_logger(__name__)


class CampaignTimer:
    """Tracks elapsed time against the campaign budget (20 minutes by default)."""

    def __init__(self, budget: Optional[float] = None):
        """
        Initialize timer.

        Args:
            budget: Budget in seconds (default: from config)
        """
        self.budget = budget if budget is not None else settings.campaign_budget_seconds
        self.start_time = time.monotonic()
        self.stages = {}

    def elapsed(self) -> float:
        """Get elapsed time in seconds."""
        return time.monotonic() - self.start_time

    def remaining(self) -> float:
        """Get remaining budget in seconds."""
        return max(0.0, self.budget - self.elapsed())

    def is_over_budget(self) -> bool:
        return self.elapsed() >= self.budget

    def mark(self, stage: str):
        """Record the elapsed time at the end of a named stage."""
        self.stages[stage] = self.elapsed()
        self.log_status(stage)

    def log_status(self, context: str = ""):
        """Log current timer status."""
        elapsed = self.elapsed()
        if self.is_over_budget():
            logger.warning(
                f"[Timer] {context} - Elapsed: {elapsed:.1f}s exceeds budget {self.budget:.0f}s"
            )
        else:
            logger.info(
                f"[Timer] {context} - Elapsed: {elapsed:.1f}s, Remaining: {self.remaining():.1f}s"
            )
