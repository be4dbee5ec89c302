"""KITTI-style D1/D2/Fl/SF outlier rates and depth MRE.

A pixel is an outlier when its disparity (or flow end-point) error exceeds
*both* the absolute and the relative threshold; a scene-flow outlier is an
outlier in any of D1, D2 or Fl.  Rates are percentages over valid pixels,
reported for background, foreground (instance label > 0) and all pixels.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SizeMismatch

DEFAULT_BASELINE = 0.54  # meters; disparity = baseline * fx * inverse depth


@dataclass(frozen=True)
class EvalConfig:
    baseline_times_fx: float
    abs_threshold: float = 3.0
    rel_threshold: float = 0.05
    mre_depth_cap: float = 50.0

    def __post_init__(self):
        if not (self.baseline_times_fx > 0 and self.abs_threshold >= 0 and self.rel_threshold > 0 and self.mre_depth_cap > 0):
            raise ValueError("evaluation thresholds must be positive")

    @classmethod
    def for_focal(cls, fx: float, baseline: float = DEFAULT_BASELINE, **kw) -> "EvalConfig":
        return cls(baseline_times_fx=baseline * fx, **kw)


@dataclass(frozen=True)
class Rates:
    bg: float
    fg: float
    all: float


def _check(*arrays):
    shape = np.shape(arrays[0])
    for a in arrays[1:]:
        if np.shape(a) != shape:
            raise SizeMismatch(f"map shapes differ: {shape} vs {np.shape(a)}")


def _outliers(err, ref, cfg: EvalConfig):
    return (err > cfg.abs_threshold) & (err > cfg.rel_threshold * ref)


def _rates(bad, valid, fg_mask) -> Rates:
    fg = valid & fg_mask
    bg = valid & ~fg_mask

    def pct(m):
        n = int(m.sum())
        return 100.0 * int((bad & m).sum()) / n if n else 0.0

    return Rates(pct(bg), pct(fg), pct(valid))


def _masks(gt_valid, fg_mask, shape):
    valid = np.ones(shape, dtype=bool) if gt_valid is None else np.asarray(gt_valid, dtype=bool)
    fg = np.zeros(shape, dtype=bool) if fg_mask is None else np.asarray(fg_mask) > 0
    return valid, fg


def disparity_outliers(est, gt, cfg: EvalConfig):
    """Per-pixel D1/D2 outlier flags; a missing (NaN) estimate counts as an outlier."""
    _check(est, gt)
    disp_est = cfg.baseline_times_fx * np.asarray(est, dtype=np.float64)
    disp_gt = cfg.baseline_times_fx * np.asarray(gt, dtype=np.float64)
    err = np.abs(disp_est - disp_gt)
    with np.errstate(invalid="ignore"):
        return np.where(np.isfinite(err), _outliers(err, disp_gt, cfg), True)


def flow_outliers(est, gt, cfg: EvalConfig):
    _check(est, gt)
    est = np.asarray(est, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    epe = np.linalg.norm(est - gt, axis=-1)
    mag = np.linalg.norm(gt, axis=-1)
    with np.errstate(invalid="ignore"):
        return np.where(np.isfinite(epe), _outliers(epe, mag, cfg), True)


def disparity_error_rate(est, gt, cfg: EvalConfig, gt_valid=None, fg_mask=None) -> Rates:
    bad = disparity_outliers(est, gt, cfg)
    return _rates(bad, *_masks(gt_valid, fg_mask, bad.shape))


def flow_error_rate(est, gt, cfg: EvalConfig, gt_valid=None, fg_mask=None) -> Rates:
    bad = flow_outliers(est, gt, cfg)
    return _rates(bad, *_masks(gt_valid, fg_mask, bad.shape))


def sceneflow_outliers(est_d0, est_d1, est_flow, gt_d0, gt_d1, gt_flow, cfg: EvalConfig):
    return disparity_outliers(est_d0, gt_d0, cfg) | disparity_outliers(est_d1, gt_d1, cfg) | flow_outliers(est_flow, gt_flow, cfg)


def sceneflow_error_rate(est_d0, est_d1, est_flow, gt_d0, gt_d1, gt_flow, cfg: EvalConfig, gt_valid=None, fg_mask=None) -> Rates:
    bad = sceneflow_outliers(est_d0, est_d1, est_flow, gt_d0, gt_d1, gt_flow, cfg)
    return _rates(bad, *_masks(gt_valid, fg_mask, bad.shape))


def mean_relative_error(est, gt, cfg: EvalConfig, gt_valid=None, fg_mask=None) -> Rates:
    """Mean ``|Z_est - Z_gt| / Z_gt`` in percent over pixels with ``Z_gt <= cap``.

    Both maps hold inverse depth.  A missing estimate contributes 100%.
    """
    _check(est, gt)
    with np.errstate(divide="ignore", invalid="ignore"):
        z_est = 1.0 / np.asarray(est, dtype=np.float64)
        z_gt = 1.0 / np.asarray(gt, dtype=np.float64)
        rel = np.abs(z_est - z_gt) / z_gt
    rel = np.where(np.isfinite(rel) & (z_est > 0), rel, 1.0)
    valid, fg = _masks(gt_valid, fg_mask, rel.shape)
    with np.errstate(invalid="ignore"):
        valid = valid & np.isfinite(z_gt) & (z_gt > 0) & (z_gt <= cfg.mre_depth_cap)

    def mean(m):
        return 100.0 * float(rel[m].mean()) if m.any() else 0.0

    return Rates(mean(valid & ~fg), mean(valid & fg), mean(valid))


def evaluate(est, gt, cfg: EvalConfig, gt_valid=None, fg_mask=None) -> dict:
    """All metrics for two ``SceneFlowField``-like objects, keyed by name."""
    return {
        "D1": disparity_error_rate(est.d0, gt.d0, cfg, gt_valid, fg_mask),
        "D2": disparity_error_rate(est.d1, gt.d1, cfg, gt_valid, fg_mask),
        "Fl": flow_error_rate(est.flow, gt.flow, cfg, gt_valid, fg_mask),
        "SF": sceneflow_error_rate(est.d0, est.d1, est.flow, gt.d0, gt.d1, gt.flow, cfg, gt_valid, fg_mask),
        "MRE": mean_relative_error(est.d0, gt.d0, cfg, gt_valid, fg_mask),
    }


def median_epe(est_flow, gt_flow, valid=None) -> float:
    epe = np.linalg.norm(np.asarray(est_flow) - np.asarray(gt_flow), axis=-1)
    if valid is not None:
        epe = epe[np.asarray(valid, dtype=bool)]
    epe = np.where(np.isfinite(epe), epe, np.inf)
    return float(np.median(epe))
