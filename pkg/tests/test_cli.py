import importlib
import json
import os
import pytest
import app.config as config_module
from app.main import EXIT_CAPABILITY, EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main

SMALL_SYNTH = ["synth", "--users", "8", "--genuine", "6", "--skilled", "2"]
SMALL_SPLIT = {"attacked_users": 3, "background_users": 3, "lk2_users": 2, "wd_samples": 2, "surrogate_samples": 2}


def run(tmp_path, *argv) -> int:
    return main(["--output-dir", str(tmp_path), "--seed", "3", *argv])


def test_help_exits_cleanly():
    assert main(["--help"]) == EXIT_OK


def test_loading_settings_creates_no_directories(tmp_path, monkeypatch):
    monkeypatch.setenv("SIGADV_WORK_DIR", str(tmp_path / "work"))
    try:
        reloaded = importlib.reload(config_module)
        assert reloaded.settings.work_dir == str(tmp_path / "work")
        assert not (tmp_path / "work").exists()
    finally:
        monkeypatch.delenv("SIGADV_WORK_DIR")
        importlib.reload(config_module)


def test_output_dir_is_created_by_the_command(tmp_path):
    target = tmp_path / "fresh"
    assert main(["--output-dir", str(target), "--help"]) == EXIT_OK
    assert not target.exists()
    assert run(target, *SMALL_SYNTH) == EXIT_OK
    assert (target / "dataset" / "manifest.csv").exists()


def test_unknown_command_is_a_config_error(tmp_path):
    assert run(tmp_path, "bogus") == EXIT_CONFIG


def test_synth_rejects_too_few_users(tmp_path):
    assert run(tmp_path, "synth", "--users", "0") == EXIT_CONFIG


def test_train_needs_a_target(tmp_path):
    assert run(tmp_path, "train") == EXIT_CONFIG


def test_bad_feature_list_is_a_config_error(tmp_path):
    assert run(tmp_path, "train", "--wd", "--features", "sift") == EXIT_CONFIG


def test_gradient_attack_on_clbp_is_a_capability_error(tmp_path):
    assert run(tmp_path, "attack", "--method", "carlini", "--feature", "clbp") == EXIT_CAPABILITY
    assert run(tmp_path, "attack", "--method", "anneal", "--feature", "clbp", "--scenario", "lk2") == EXIT_CAPABILITY


def test_unreadable_config_file(tmp_path):
    path = tmp_path / "campaign.json"
    path.write_text("[1, 2]")
    assert main(["--output-dir", str(tmp_path), "--config", str(path), "campaign"]) == EXIT_CONFIG


def test_synth_is_reproducible(tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    assert run(first, *SMALL_SYNTH) == EXIT_OK
    assert run(second, *SMALL_SYNTH) == EXIT_OK
    manifests = [(p / "dataset" / "manifest.csv").read_bytes() for p in (first, second)]
    assert manifests[0] == manifests[1]
    assert (first / "dataset" / "user_007" / "skilled" / "001.pgm").exists()


def test_synth_reads_its_section_of_a_shared_config(tmp_path):
    config = tmp_path / "shared.json"
    config.write_text(json.dumps({"synth": {"users": 8, "genuine_per_user": 6, "skilled_per_user": 2},
                                  "split": SMALL_SPLIT}))
    assert run(tmp_path, "--config", str(config), "synth") == EXIT_OK
    lines = (tmp_path / "dataset" / "manifest.csv").read_text().strip().splitlines()
    assert len(lines) == 1 + 8 * (6 + 2)


def test_report_without_outcomes(tmp_path):
    assert run(tmp_path, "report") == EXIT_RUNTIME


def test_campaign_without_dataset(tmp_path):
    assert run(tmp_path, "campaign", "--features", "clbp") == EXIT_RUNTIME


def test_clbp_campaign_end_to_end(tmp_path):
    assert run(tmp_path, *SMALL_SYNTH) == EXIT_OK
    config = {
        "features": ["clbp"],
        "classifiers": ["linear"],
        "methods": ["boundary", "anneal"],
        "goals": ["type1"],
        "scenarios": ["pk", "lk1"],
        "noise_removal": True,
        "attacks": {"boundary": {"max_iter": 10, "init_draws": 10}, "anneal": {"steps": 20}},
        "split": SMALL_SPLIT,
    }
    path = tmp_path / "campaign.json"
    path.write_text(json.dumps(config))

    code = main(["--output-dir", str(tmp_path), "--seed", "3", "--workers", "2", "--config", str(path),
                 "campaign", "--auto"])
    assert code in (EXIT_OK, EXIT_RUNTIME)
    assert (tmp_path / "outcomes.csv").exists()
    assert (tmp_path / "verification.md").exists()
    assert (tmp_path / "anneal_calibration.csv").exists()
    assert os.path.isdir(tmp_path / "models" / "wd" / "clbp_none_linear")
    if code == EXIT_OK:
        assert (tmp_path / "report.md").exists()
        assert run(tmp_path, "report") == EXIT_OK


@pytest.mark.slow
def test_cnn_training_and_single_attack(tmp_path):
    assert run(tmp_path, *SMALL_SYNTH) == EXIT_OK
    path = tmp_path / "split.json"
    path.write_text(json.dumps({"split": SMALL_SPLIT}))
    assert run(tmp_path, "--config", str(path), "train", "--cnn", "baseline", "--epochs", "1", "--wd",
               "--features", "cnn", "--classifiers", "linear") == EXIT_OK
    assert (tmp_path / "models" / "cnn_none.sgn").exists()
    code = run(tmp_path, "--config", str(path), "attack", "--method", "fgm", "--feature", "cnn",
               "--dump", str(tmp_path / "adv.pgm"))
    assert code in (EXIT_OK, EXIT_RUNTIME)
