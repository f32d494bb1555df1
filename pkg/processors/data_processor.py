"""CSV utilities for manifests, feature tables, thresholds and outcome logs."""
import os
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Type
import numpy as np
import pandas as pd
from pydantic import BaseModel
from app.errors import FormatError
from app.utils.logger import get_logger

logger = get_logger(__name__)

FEATURE_PREFIX = "f"


class DataProcessor:
    """Reads and writes the testbed's tabular files with pandas."""

    def load_csv(self, csv_path: str, required: Sequence[str] = (), **kwargs) -> pd.DataFrame:
        """
        Load CSV file into DataFrame.

        Args:
            csv_path: Path to CSV file
            required: Columns that must be present
            **kwargs: Additional arguments for pd.read_csv

        Returns:
            DataFrame

        Raises:
            FormatError: file unreadable or a required column is missing
        """
        try:
            df = pd.read_csv(csv_path, **kwargs)
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise FormatError(f"cannot read {csv_path}: {e}") from e

        missing = [c for c in required if c not in df.columns]
        if missing:
            raise FormatError(f"{csv_path} is missing columns {missing}")
        logger.debug(f"Loaded CSV: {csv_path}, Shape: {df.shape}")
        return df

    def save_csv(self, df: pd.DataFrame, csv_path: str) -> str:
        os.makedirs(os.path.dirname(os.path.abspath(csv_path)), exist_ok=True)
        df.to_csv(csv_path, index=False, float_format="%.10g")
        logger.info(f"Wrote {len(df)} rows to {csv_path}")
        return csv_path

    def records_to_frame(self, records: Iterable[BaseModel]) -> pd.DataFrame:
        rows = [r.model_dump(mode="json") for r in records]
        return pd.DataFrame(rows)

    def frame_to_records(self, df: pd.DataFrame, model: Type[BaseModel]) -> List[BaseModel]:
        """Parse rows back into pydantic records; NaN cells become None."""
        clean = df.astype(object).where(pd.notna(df), None)
        return [model.model_validate(row) for row in clean.to_dict("records")]

    def features_to_frame(self, keys: Sequence[Tuple], features: np.ndarray,
                          key_columns: Sequence[str] = ("user", "kind", "instance")) -> pd.DataFrame:
        """One row per feature vector: key columns then f000..fNNN."""
        features = np.atleast_2d(features)
        width = features.shape[1]
        columns = [f"{FEATURE_PREFIX}{i:03d}" for i in range(width)]
        df = pd.DataFrame(features, columns=columns)
        for pos, name in enumerate(key_columns):
            df.insert(pos, name, [k[pos] for k in keys])
        return df

    def features_from_frame(self, df: pd.DataFrame,
                            key_columns: Sequence[str] = ("user", "kind", "instance")
                            ) -> Dict[Tuple, np.ndarray]:
        columns = [c for c in df.columns if c.startswith(FEATURE_PREFIX) and c[1:].isdigit()]
        values = df[columns].to_numpy(dtype=np.float64)
        keys = list(df[list(key_columns)].itertuples(index=False, name=None))
        return {k: values[i] for i, k in enumerate(keys)}


def features_to_csv(path: str, keys: Sequence[Tuple], features: np.ndarray,
                    processor: Optional[DataProcessor] = None) -> str:
    processor = processor or DataProcessor()
    return processor.save_csv(processor.features_to_frame(keys, features), path)


def features_from_csv(path: str, processor: Optional[DataProcessor] = None) -> Dict[Tuple, np.ndarray]:
    processor = processor or DataProcessor()
    return processor.features_from_frame(processor.load_csv(path, required=("user", "kind", "instance")))
