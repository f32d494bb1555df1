"""Aggregation of outcome logs into success/RMSE tables, and the verification table."""
import os
from typing import Dict, Iterable, List, Mapping, Optional, Sequence
import numpy as np
import pandas as pd
from app.errors import InsufficientData
from app.models import OutcomeRecord, ReportRow, VerificationRow
from app.utils.logger import get_logger
from processors.data_processor import DataProcessor

logger = get_logger(__name__)

GRID_COLUMNS = ["feature", "defense", "classifier", "method", "goal", "scenario"]


def _rate(values: pd.Series) -> Optional[float]:
    values = values.dropna()
    if values.empty:
        return None
    return float(100.0 * values.astype(bool).mean())


def aggregate_rows(outcomes: pd.DataFrame) -> List[ReportRow]:
    """One ReportRow per grid cell; RMSE is averaged over successful attacks only."""
    if outcomes.empty:
        return []
    rows = []
    for keys, cell in outcomes.groupby(GRID_COLUMNS, sort=True):
        success = cell["success"].astype(bool)
        successful = cell.loc[success, "rmse"]
        rows.append(ReportRow(
            **dict(zip(GRID_COLUMNS, keys)),
            success_rate=float(100.0 * success.mean()),
            mean_rmse=float(successful.mean()) if len(successful) else None,
            n_attacks=int(len(cell)),
            success_rate_after_removal=_rate(cell["success_after_removal"])
            if "success_after_removal" in cell else None,
            success_rate_discretized=_rate(cell["success_discretized"])
            if "success_discretized" in cell else None,
        ))
    return rows


def seed_mean_rows(outcomes: pd.DataFrame) -> List[ReportRow]:
    """Rows computed per seed, then averaged across seeds."""
    per_seed = [aggregate_rows(cell) for _, cell in outcomes.groupby("seed", sort=True)]
    frame = rows_to_frame([row for rows in per_seed for row in rows])
    if frame.empty:
        return []
    value_columns = ["success_rate", "mean_rmse", "success_rate_after_removal", "success_rate_discretized"]
    numeric = frame[value_columns].apply(pd.to_numeric, errors="coerce")
    frame = pd.concat([frame[GRID_COLUMNS + ["n_attacks"]], numeric], axis=1)
    grouped = frame.groupby(GRID_COLUMNS, sort=True)
    means = grouped[value_columns].mean()
    totals = grouped["n_attacks"].sum()
    rows = []
    for keys, values in means.iterrows():
        clean = {k: (None if pd.isna(v) else float(v)) for k, v in values.items()}
        if clean["success_rate"] == 0:
            clean["mean_rmse"] = None
        rows.append(ReportRow(**dict(zip(GRID_COLUMNS, keys)), n_attacks=int(totals[keys]), **clean))
    return rows


def rows_to_frame(rows: Iterable[ReportRow], processor: Optional[DataProcessor] = None) -> pd.DataFrame:
    processor = processor or DataProcessor()
    return processor.records_to_frame(rows)


def rows_from_csv(path: str, processor: Optional[DataProcessor] = None) -> List[ReportRow]:
    processor = processor or DataProcessor()
    frame = processor.load_csv(path, required=GRID_COLUMNS + ["success_rate", "n_attacks"])
    return processor.frame_to_records(frame, ReportRow)


def _fmt(value: Optional[float], digits: int = 2) -> str:
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return "-"
    return f"{value:.{digits}f}"


def _markdown_table(header: Sequence[str], body: Sequence[Sequence[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(row) + " |" for row in body]
    return "\n".join(lines)


def render_markdown(rows: Sequence[ReportRow]) -> str:
    """One table per (goal, scenario): a line per model, success and RMSE per method."""
    frame = rows_to_frame(rows)
    methods = sorted(frame["method"].unique())
    with_removal = frame["success_rate_after_removal"].notna().any()
    with_discrete = frame["success_rate_discretized"].notna().any()
    sections = ["# Attack report", ""]

    for (goal, scenario), cell in frame.groupby(["goal", "scenario"], sort=True):
        header = ["feature", "defense", "classifier"]
        for m in methods:
            header += [f"{m} success %", f"{m} RMSE"]
            if with_removal:
                header += [f"{m} None %", f"{m} OTSU %"]
            if with_discrete:
                header += [f"{m} rounded %"]
        body = []
        for model, model_rows in cell.groupby(["feature", "defense", "classifier"], sort=True):
            by_method = {r["method"]: r for r in model_rows.to_dict("records")}
            line = list(model)
            for m in methods:
                r = by_method.get(m)
                if r is None:
                    line += ["n/a", "n/a"] + (["n/a", "n/a"] if with_removal else []) + (["n/a"] if with_discrete else [])
                    continue
                line += [_fmt(r["success_rate"]), _fmt(r["mean_rmse"])]
                if with_removal:
                    line += [_fmt(r["success_rate"]), _fmt(r["success_rate_after_removal"])]
                if with_discrete:
                    line += [_fmt(r["success_rate_discretized"])]
            body.append(line)
        sections += [f"## Goal {goal}, scenario {scenario}", "", _markdown_table(header, body), ""]
    return "\n".join(sections)


def emit_report(rows: Sequence[ReportRow], output_dir: str, stem: str = "report",
                processor: Optional[DataProcessor] = None) -> Dict[str, str]:
    """Write <stem>.csv and <stem>.md; returns the paths."""
    if not rows:
        raise InsufficientData("no report rows to emit")
    processor = processor or DataProcessor()
    os.makedirs(output_dir, exist_ok=True)
    csv_path = processor.save_csv(rows_to_frame(rows, processor), os.path.join(output_dir, f"{stem}.csv"))
    md_path = os.path.join(output_dir, f"{stem}.md")
    with open(md_path, "w", encoding="utf-8") as f:
        f.write(render_markdown(rows))
    logger.info(f"Report written: {csv_path}, {md_path}")
    return {"csv": csv_path, "markdown": md_path}


def verification_rows(systems: Iterable) -> List[VerificationRow]:
    """EER with the global threshold and with per-user thresholds, for every target system."""
    return [
        VerificationRow(
            feature=s.feature, defense=s.defense, classifier=s.classifier,
            eer_global=100.0 * s.thresholds.global_eer,
            eer_user=100.0 * s.thresholds.user_eer,
            global_tau=s.thresholds.global_tau,
            n_users=len(s.thresholds.per_user_tau),
        )
        for s in systems
    ]


def emit_verification_report(rows: Sequence[VerificationRow], output_dir: str,
                             processor: Optional[DataProcessor] = None) -> Dict[str, str]:
    processor = processor or DataProcessor()
    frame = processor.records_to_frame(rows)
    csv_path = processor.save_csv(frame, os.path.join(output_dir, "verification.csv"))
    body = [[r.feature.value, r.defense.value, r.classifier.value, _fmt(r.eer_global), _fmt(r.eer_user),
             _fmt(r.global_tau, 4)] for r in rows]
    md_path = os.path.join(output_dir, "verification.md")
    with open(md_path, "w", encoding="utf-8") as f:
        f.write("# Verification performance (EER %)\n\n")
        f.write(_markdown_table(["feature", "defense", "classifier", "EER global-tau", "EER user-tau", "tau"], body))
        f.write("\n")
    return {"csv": csv_path, "markdown": md_path}


def anneal_calibration_frame(proposed: Sequence[int], accepted: Sequence[int]) -> pd.DataFrame:
    """Uphill acceptance per tenth of the cooling schedule, pooled over a campaign."""
    proposed = np.asarray(proposed, dtype=np.int64)
    accepted = np.asarray(accepted, dtype=np.int64)
    rate = np.divide(accepted, proposed, out=np.full(len(proposed), np.nan), where=proposed > 0)
    return pd.DataFrame({"decile": np.arange(len(proposed)), "uphill_proposed": proposed,
                         "uphill_accepted": accepted, "acceptance_rate": rate})
