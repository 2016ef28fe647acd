import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest

import kinadapt


def small_config():
    c = kinadapt.ModelConfig()
    c.in_channels = 3
    c.conv_filters = [4, 4]
    c.kernel_widths = [3, 3]
    c.lstm_hidden = 3
    c.dense_units = 5
    return c


def test_predict_is_a_distribution():
    model = kinadapt.init_model(small_config(), seed=1)
    trial = np.random.default_rng(0).normal(size=(3, 8))
    probs = kinadapt.predict(model, trial)
    assert probs.shape == (2,)
    assert abs(probs.sum() - 1.0) < 1e-12


def test_mc_predict_zero_dropout_matches_eval():
    model = kinadapt.init_model(small_config(), seed=2)
    trial = np.random.default_rng(1).normal(size=(3, 10))
    mc = kinadapt.mc_predict(model, trial, passes=5, dropout=0.0, seed=3)
    assert np.array_equal(mc["mean_probs"], kinadapt.predict(model, trial))
    assert np.all(mc["var_probs"] == 0.0)
    assert 0.0 <= mc["entropy"] <= math.log(2)


def test_shape_error_is_raised():
    model = kinadapt.init_model(small_config())
    with pytest.raises(kinadapt.ShapeError):
        kinadapt.predict(model, np.zeros((4, 8)))


def test_entropy_and_schedule():
    assert kinadapt.predictive_entropy([0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-12)
    assert kinadapt.lr_schedule(3, 0.001) == pytest.approx(0.0005)
    with pytest.raises(kinadapt.ConfigError):
        kinadapt.lr_schedule(0)


def test_distribution_tables():
    assert kinadapt.f_cdf(4.10, 2, 10) == pytest.approx(0.95, abs=0.002)
    assert kinadapt.studentized_range_cdf(3.77, 3, 12) == pytest.approx(0.95, abs=0.002)


def test_downsample_counts():
    trial = np.arange(2 * 900, dtype=float).reshape(2, 900)
    assert kinadapt.downsample(trial, 30).shape == (2, 30)


def test_anova_and_tukey():
    values = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 9.0]
    a = ["a1", "a1", "a1", "a1", "a2", "a2", "a2", "a2"]
    b = ["b1", "b1", "b2", "b2", "b1", "b1", "b2", "b2"]
    r = kinadapt.two_way_anova(values, a, b, "group", "session")
    ss = sum(row["ss"] for row in r["rows"])
    assert ss == pytest.approx(r["ss_total"], abs=1e-9)
    assert r["rows"][0]["source"] == "group"
    assert len(r["tukey_a"]) == 1


def test_synth_and_svg_curve():
    data = kinadapt.synth_generate({"target_subjects": "2", "target_sessions": "3",
                                    "target_repetitions": "2", "source_subjects": "2",
                                    "source_repetitions": "2", "seed": "5"})
    assert len(data["channels"]) == 48
    target = data["target"]
    assert len(target) == 12
    assert all("label" not in t and "hidden_label" in t for t in target)
    ids = [t["id"] for t in target]
    probs = np.array([[0.4, 0.6]] * len(ids))
    ent = [kinadapt.predictive_entropy(p) for p in probs]
    groups = [t["group"] for t in target]
    sessions = [t["session"] for t in target]
    curve = kinadapt.learning_curve(ids, probs, ent, groups, sessions)
    assert {p["session"] for p in curve} == {1, 2, 3}
    svg = kinadapt.learning_curve_svg(ids, probs, ent, groups, sessions)
    root = ET.fromstring(svg)
    assert root.tag.endswith("svg")


def test_model_save_load(tmp_path):
    model = kinadapt.init_model(small_config(), seed=4)
    path = tmp_path / "m.ckpt"
    model.save(path)
    loaded = kinadapt.Model.load(path)
    assert loaded.parameter_count() == model.parameter_count()
    for name, t in model.tensors().items():
        assert np.array_equal(t, loaded.tensors()[name])


def test_cli_exit_codes(tmp_path):
    assert kinadapt.run_cli(["pretrain", "-c", str(tmp_path / "missing.cfg")]) == 2
