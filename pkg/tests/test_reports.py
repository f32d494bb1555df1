import os
import pytest
from pydantic import ValidationError
from app.errors import FormatError, InsufficientData
from app.models import ClassifierKind, DefenseKind, FeatureKind, OutcomeRecord, ReportRow, VerificationRow
from app.storage import OutcomeLog
from harness.reports import (
    aggregate_rows,
    anneal_calibration_frame,
    emit_report,
    emit_verification_report,
    render_markdown,
    rows_from_csv,
    seed_mean_rows,
)


def record(success: bool, rmse: float, method: str = "fgm", seed: int = 1, user: int = 0, **extra) -> OutcomeRecord:
    return OutcomeRecord(feature="cnn", defense="none", classifier="linear", method=method, goal="type1",
                         scenario="pk", seed=seed, user=user, start_key=f"genuine:{user}:4", success=success,
                         attacker_success=success, rmse=rmse, **extra)


@pytest.fixture
def log() -> OutcomeLog:
    log = OutcomeLog()
    log.extend([
        record(True, 2.0, user=0, success_after_removal=False),
        record(True, 4.0, user=1, success_after_removal=True),
        record(False, 9.0, user=2, success_after_removal=False),
        record(False, 1.0, method="anneal", user=0),
    ])
    return log


def test_outcome_log_counts(log):
    log.append(record(False, 0.0, method="anneal", user=1, error="InitFailure: none"))
    assert len(log) == 5
    assert log.counts() == {"total": 5, "success": 2, "errors": 1}
    assert len(log.successes()) == 2


def test_outcome_log_file(tmp_path, log):
    path = log.save(str(tmp_path / "outcomes.csv"))
    loaded = OutcomeLog.load(path)
    assert loaded.records == log.records


def test_outcome_log_file_needs_grid_columns(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("user,rmse\n0,1.0\n")
    with pytest.raises(FormatError):
        OutcomeLog.load(str(path))


def test_rmse_is_averaged_over_successes_only(log):
    rows = {row.method.value: row for row in aggregate_rows(log.to_frame())}
    fgm = rows["fgm"]
    assert fgm.success_rate == pytest.approx(200.0 / 3)
    assert fgm.mean_rmse == pytest.approx(3.0)
    assert fgm.n_attacks == 3
    assert fgm.success_rate_after_removal == pytest.approx(100.0 / 3)
    anneal = rows["anneal"]
    assert anneal.success_rate == 0.0
    assert anneal.mean_rmse is None
    assert anneal.success_rate_after_removal is None


def test_report_row_rejects_rmse_without_success():
    with pytest.raises(ValidationError):
        ReportRow(feature="cnn", defense="none", classifier="linear", method="fgm", goal="type1", scenario="pk",
                  success_rate=0.0, mean_rmse=1.0, n_attacks=3)


def test_seed_mean_averages_per_seed_rates():
    log = OutcomeLog()
    log.extend([record(True, 2.0, seed=1), record(True, 2.0, seed=1, user=1),
                record(False, 1.0, seed=2), record(True, 6.0, seed=2, user=1)])
    pooled, = aggregate_rows(log.to_frame())
    averaged, = seed_mean_rows(log.to_frame())
    assert pooled.success_rate == pytest.approx(75.0)
    assert averaged.success_rate == pytest.approx(75.0)
    assert averaged.mean_rmse == pytest.approx(4.0)
    assert pooled.mean_rmse == pytest.approx(10.0 / 3)
    assert averaged.n_attacks == 4


def test_markdown_has_one_table_per_goal_and_scenario(log):
    text = render_markdown(aggregate_rows(log.to_frame()))
    assert "## Goal type1, scenario pk" in text
    assert "fgm success %" in text
    assert "| cnn | none | linear | 0.00 | - |" in text


def test_emit_report_files(tmp_path, log):
    rows = aggregate_rows(log.to_frame())
    paths = emit_report(rows, str(tmp_path))
    assert os.path.exists(paths["markdown"])
    loaded = rows_from_csv(paths["csv"])
    assert [(r.method, r.n_attacks, r.mean_rmse) for r in loaded] == [(r.method, r.n_attacks, r.mean_rmse) for r in rows]
    assert loaded[1].success_rate == pytest.approx(rows[1].success_rate)
    with pytest.raises(InsufficientData):
        emit_report([], str(tmp_path))


def test_verification_report(tmp_path):
    row = VerificationRow(feature=FeatureKind.CLBP, defense=DefenseKind.NONE, classifier=ClassifierKind.RBF,
                          eer_global=12.5, eer_user=3.0, global_tau=0.1234, n_users=4)
    paths = emit_verification_report([row], str(tmp_path))
    with open(paths["markdown"], encoding="utf-8") as f:
        assert "| clbp | none | rbf | 12.50 | 3.00 | 0.1234 |" in f.read()


def test_anneal_calibration_rates():
    frame = anneal_calibration_frame([4, 0], [1, 0])
    assert frame["acceptance_rate"].iloc[0] == pytest.approx(0.25)
    assert frame["acceptance_rate"].isna().iloc[1]
