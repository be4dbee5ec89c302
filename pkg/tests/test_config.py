import pytest

from monosf.config import RunConfig, apply_overrides, load_run_config
from monosf.errors import ConfigError
from monosf.io import parse_kv


def test_defaults_and_intrinsics():
    cfg = load_run_config(None, {"fx": "300", "fy": "310"})
    K = cfg.intrinsics(200, 100)
    assert (K.fx, K.fy, K.cx, K.cy) == (300.0, 310.0, 100.0, 50.0)
    assert cfg.eval_config().baseline_times_fx == pytest.approx(0.54 * 300)
    with pytest.raises(ConfigError):
        RunConfig().intrinsics(10, 10)


def test_overrides_reach_every_section():
    cfg = apply_overrides(RunConfig(), {
        "obj.theta1": "0.7", "cross.tau1": "0.1", "iterations": "3", "seed": "9",
        "theta4": "2.5", "vote_threshold": "5", "superpixels": "12", "image0": "a.pgm",
    })
    assert cfg.weights.object.theta1 == 0.7 and cfg.weights.background.theta1 == 0.4
    assert cfg.weights.cross.tau1 == 0.1
    assert cfg.inference.iterations == 3 and cfg.inference.seed == 9
    assert cfg.init.theta4 == 2.5 and cfg.init.vote_threshold == 5
    assert cfg.superpixels == 12 and cfg.paths["image0"] == "a.pgm"


@pytest.mark.parametrize("kv", [{"bogus": "1"}, {"bg.theta9": "1"}, {"iterations": "x"}, {"iterations": "0"},
                                {"bg.tau0": "30"}, {"superpixels": "0"}, {"decay": "2"}])
def test_invalid_overrides(kv):
    with pytest.raises(ConfigError):
        apply_overrides(RunConfig(), kv)


def test_text_round_trip(tmp_path):
    cfg = apply_overrides(RunConfig(), {"fx": "123.5", "fy": "120", "bg.theta0": "0.5", "matches": "m.txt"})
    (tmp_path / "run.cfg").write_text(cfg.to_text())
    back = load_run_config(tmp_path / "run.cfg")
    assert back == cfg
    assert parse_kv(cfg.to_text())["bg.theta0"] == "0.5"
