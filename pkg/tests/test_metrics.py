import numpy as np
import pytest

from monosf.errors import SizeMismatch
from monosf.metrics import (
    EvalConfig,
    disparity_error_rate,
    flow_error_rate,
    mean_relative_error,
    median_epe,
    sceneflow_error_rate,
    sceneflow_outliers,
)
from monosf.scenemodel import SceneFlowField
from monosf.metrics import evaluate

# bf = 100 so disparity = 100 * inverse depth
CFG = EvalConfig(baseline_times_fx=100.0)


def disp(*values):
    return np.array([values], dtype=np.float64) / 100.0


def test_disparity_needs_both_thresholds():
    gt = disp(10.0, 100.0, 100.0)
    # errors 4, 4, 6 px: the middle one is under 5% of 100, so only it passes
    est = disp(14.0, 104.0, 106.0)
    bad = disparity_error_rate(est, gt, CFG)
    assert bad.all == pytest.approx(100.0 * 2 / 3)
    # small disparity: err 2.9 px is 29% but under 3 px -> inlier
    assert disparity_error_rate(disp(12.9), disp(10.0), CFG).all == 0.0
    assert disparity_error_rate(disp(13.1), disp(10.0), CFG).all == 100.0


def test_all_and_none_cases():
    gt = disp(10.0, 50.0, 200.0)
    assert disparity_error_rate(gt, gt, CFG).all == 0.0
    assert disparity_error_rate(gt * 2, gt, CFG).all == 100.0
    flow_gt = np.array([[[1.0, 0.0], [0.0, 80.0], [-30.0, 40.0]]])
    assert flow_error_rate(flow_gt, flow_gt, CFG).all == 0.0
    assert flow_error_rate(flow_gt + 10.0, flow_gt, CFG).all == 100.0


def test_flow_end_point_rule():
    gt = np.array([[[60.0, 80.0], [0.0, 0.0], [60.0, 80.0]]])  # |f| = 100, 0, 100
    est = gt + np.array([[[3.0, 4.0], [0.0, 3.1], [0.0, 4.0]]])  # epe 5 (>3, <=5%), 3.1 (>3, >0), 4 (<5%)
    bad = flow_error_rate(est, gt, CFG)
    assert bad.all == pytest.approx(100.0 / 3)


def test_sceneflow_union_rule():
    d_gt = disp(10.0, 10.0, 10.0)
    f_gt = np.zeros((1, 3, 2))
    d0 = disp(20.0, 10.0, 10.0)  # pixel 0 wrong in D1
    d1 = disp(10.0, 20.0, 10.0)  # pixel 1 wrong in D2
    f = np.array([[[0.0, 0.0], [0.0, 0.0], [5.0, 0.0]]])  # pixel 2 wrong in Fl
    flags = sceneflow_outliers(d0, d1, f, d_gt, d_gt, f_gt, CFG)
    np.testing.assert_array_equal(flags, [[True, True, True]])
    assert sceneflow_error_rate(d0, d1, f, d_gt, d_gt, f_gt, CFG).all == 100.0
    assert sceneflow_error_rate(d_gt, d_gt, f_gt, d_gt, d_gt, f_gt, CFG).all == 0.0
    # each single-metric rate is one third while SF is their union
    assert disparity_error_rate(d0, d_gt, CFG).all == pytest.approx(100.0 / 3)


def test_bg_fg_split_and_valid_mask():
    gt = disp(10.0, 10.0, 10.0)
    est = disp(20.0, 10.0, 20.0)
    fg = np.array([[0, 1, 1]])
    r = disparity_error_rate(est, gt, CFG, fg_mask=fg)
    assert (r.bg, r.fg, r.all) == (100.0, 50.0, pytest.approx(200.0 / 3))
    valid = np.array([[False, True, True]])
    r = disparity_error_rate(est, gt, CFG, gt_valid=valid, fg_mask=fg)
    assert (r.bg, r.fg, r.all) == (0.0, 50.0, 50.0)


def test_missing_estimate_counts_as_outlier():
    assert disparity_error_rate(disp(np.nan), disp(10.0), CFG).all == 100.0
    assert flow_error_rate(np.full((1, 1, 2), np.nan), np.zeros((1, 1, 2)), CFG).all == 100.0


def test_mean_relative_error_with_depth_cap():
    gt = np.array([[1 / 10.0, 1 / 20.0, 1 / 60.0]])
    est = np.array([[1 / 11.0, 1 / 19.0, 1 / 30.0]])
    r = mean_relative_error(est, gt, CFG)
    assert r.all == pytest.approx(100.0 * (0.1 + 0.05) / 2)


def test_size_mismatch():
    with pytest.raises(SizeMismatch):
        disparity_error_rate(np.zeros((2, 2)), np.zeros((2, 3)), CFG)


def test_evaluate_identity_is_all_zero():
    d = np.full((2, 3), 0.05)
    f = np.ones((2, 3, 2))
    field = SceneFlowField(d, d, f, np.ones((2, 3), bool))
    res = evaluate(field, field, CFG)
    assert all(r.all == 0.0 and r.bg == 0.0 for r in res.values())
    assert median_epe(f, f) == 0.0


def test_eval_config_from_focal():
    assert EvalConfig.for_focal(720.0).baseline_times_fx == pytest.approx(0.54 * 720.0)
    with pytest.raises(ValueError):
        EvalConfig(0.0)
