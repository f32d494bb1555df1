"""Append-only in-memory log of campaign outcomes."""
import threading
from typing import Dict, List, Optional
import pandas as pd
from app.models import OutcomeRecord
from processors.data_processor import DataProcessor


class OutcomeLog:
    """Outcome records of one campaign; appends are serialized by a lock."""

    def __init__(self):
        self._records: List[OutcomeRecord] = []
        self._lock = threading.Lock()

    def append(self, record: OutcomeRecord):
        with self._lock:
            self._records.append(record)

    def extend(self, records: List[OutcomeRecord]):
        with self._lock:
            self._records.extend(records)

    @property
    def records(self) -> List[OutcomeRecord]:
        with self._lock:
            return list(self._records)

    def __len__(self) -> int:
        return len(self._records)

    def successes(self) -> List[OutcomeRecord]:
        return [r for r in self.records if r.success]

    def errors(self) -> List[OutcomeRecord]:
        return [r for r in self.records if r.error]

    def counts(self) -> Dict[str, int]:
        records = self.records
        return {
            "total": len(records),
            "success": sum(1 for r in records if r.success),
            "errors": sum(1 for r in records if r.error),
        }

    def to_frame(self, processor: Optional[DataProcessor] = None) -> pd.DataFrame:
        processor = processor or DataProcessor()
        frame = processor.records_to_frame(self.records)
        if frame.empty:
            frame = pd.DataFrame(columns=list(OutcomeRecord.model_fields))
        return frame

    def save(self, path: str, processor: Optional[DataProcessor] = None) -> str:
        processor = processor or DataProcessor()
        return processor.save_csv(self.to_frame(processor), path)

    @classmethod
    def load(cls, path: str, processor: Optional[DataProcessor] = None) -> "OutcomeLog":
        processor = processor or DataProcessor()
        frame = processor.load_csv(path, required=("feature", "method", "goal", "scenario", "success"))
        log = cls()
        log.extend(processor.frame_to_records(frame, OutcomeRecord))
        return log
