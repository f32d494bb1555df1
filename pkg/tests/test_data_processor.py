import numpy as np
import pandas as pd
import pytest
from app.errors import FormatError
from app.utils.timer import CampaignTimer
from processors.data_processor import DataProcessor, features_from_csv, features_to_csv
from processors.viz_processor import VizProcessor


def test_feature_rows_reload(tmp_path):
    keys = [(0, "genuine", 0), (3, "skilled", 1)]
    features = np.random.default_rng(0).random((2, 200))
    path = features_to_csv(str(tmp_path / "clbp.csv"), keys, features)
    frame = pd.read_csv(path)
    assert list(frame.columns[:4]) == ["user", "kind", "instance", "f000"]
    assert frame.shape == (2, 203)
    loaded = features_from_csv(path)
    np.testing.assert_allclose(loaded[(3, "skilled", 1)], features[1], rtol=1e-9)


def test_missing_columns_are_a_format_error(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(FormatError):
        DataProcessor().load_csv(str(path), required=("user",))
    with pytest.raises(FormatError):
        DataProcessor().load_csv(str(tmp_path / "absent.csv"))


def test_figures_are_written(tmp_path, canon_image):
    viz = VizProcessor(str(tmp_path))
    adversarial = np.clip(canon_image + 3.0, 0.0, 255.0)
    path = viz.adversarial_figure(canon_image, adversarial, title="fgm", scores=(0.4, -0.1))
    assert path.endswith("adversarial.png")
    report = pd.DataFrame({"feature": ["cnn", "cnn"], "defense": ["none", "none"], "classifier": ["linear"] * 2,
                           "method": ["fgm", "anneal"], "success_rate": [80.0, 40.0]})
    chart = viz.success_bar_chart(report)
    assert (tmp_path / "adversarial.png").exists()
    assert chart.endswith("success_rate.png")


def test_timer_records_stages():
    timer = CampaignTimer(budget=0.0)
    timer.mark("prepare")
    assert "prepare" in timer.stages
    assert timer.is_over_budget()
    assert timer.remaining() == 0.0
    assert not CampaignTimer(budget=3600.0).is_over_budget()
