"""Mixture-of-Gaussians inverse-depth distributions and their recalibration.

Scalar helpers (``mog_pdf``, ``mog_nll``, ...) take a :class:`GaussianMixture1D`.
The batched forms work on ``(..., K)`` arrays of weights, means and log-stds
and are what the per-pixel maps and the recalibration fit use.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import optimize
from scipy.special import ndtr

from .errors import InsufficientData, InvalidQuantile

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
DEFAULT_COMPONENTS = 8
MIN_CALIB_SAMPLES = 100


@dataclass(frozen=True)
class GaussianMixture1D:
    weights: np.ndarray
    means: np.ndarray
    log_stds: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=np.float64))
        m = np.atleast_1d(np.asarray(self.means, dtype=np.float64))
        s = np.atleast_1d(np.asarray(self.log_stds, dtype=np.float64))
        if not (w.shape == m.shape == s.shape) or w.ndim != 1 or w.size < 1:
            raise ValueError("weights, means and log_stds must be equal-length 1-D arrays")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-6:
            raise ValueError("weights must be non-negative and sum to 1")
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(s))):
            raise ValueError("means and log_stds must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "log_stds", s)

    @classmethod
    def gaussian(cls, mean: float, std: float) -> "GaussianMixture1D":
        return cls([1.0], [mean], [math.log(std)])

    @property
    def K(self) -> int:
        return self.weights.size

    @property
    def stds(self) -> np.ndarray:
        return np.exp(self.log_stds)


@dataclass(frozen=True)
class RecalibMap:
    """``s -> a*s + b`` on log-stds and ``lambda -> lambda**(1/tau_w)`` (renormalized) on weights."""

    a: float = 1.0
    b: float = 0.0
    tau_w: float = 1.0

    def __post_init__(self):
        if not (self.a > 0 and self.tau_w > 0):
            raise ValueError("RecalibMap requires a > 0 and tau_w > 0")

    @property
    def is_identity(self) -> bool:
        return self.a == 1.0 and self.b == 0.0 and self.tau_w == 1.0


@dataclass(frozen=True)
class CalibSample:
    mixture: GaussianMixture1D
    d_gt: float

    def __post_init__(self):
        if not self.d_gt > 0:
            raise ValueError("d_gt must be positive")


# --- batched primitives -------------------------------------------------------


def _log_weights(weights):
    with np.errstate(divide="ignore"):
        return np.log(weights)


def component_logpdf(weights, means, log_stds, d):
    """``log(lambda_k N(d - mu_k, sigma_k))`` with a trailing component axis."""
    d = np.asarray(d, dtype=np.float64)[..., None]
    z = (d - means) * np.exp(-log_stds)
    return _log_weights(weights) - log_stds - LOG_SQRT_2PI - 0.5 * z * z


def batch_nll(weights, means, log_stds, d):
    lp = component_logpdf(weights, means, log_stds, d)
    top = lp.max(axis=-1)
    return -(top + np.log(np.exp(lp - top[..., None]).sum(axis=-1)))


def batch_cdf(weights, means, log_stds, d):
    d = np.asarray(d, dtype=np.float64)[..., None]
    return (weights * ndtr((d - means) * np.exp(-log_stds))).sum(axis=-1)


def batch_mean(weights, means):
    return (weights * means).sum(axis=-1)


def batch_variance(weights, means, log_stds):
    mean = batch_mean(weights, means)
    second = (weights * (np.exp(2.0 * log_stds) + means * means)).sum(axis=-1)
    return np.maximum(second - mean * mean, 0.0)


def batch_quantile(weights, means, log_stds, q, tol=1e-13, max_iter=200):
    """Vectorized bracketing + bisection for ``cdf(d) = q``."""
    q = np.asarray(q, dtype=np.float64)
    if np.any((q <= 0) | (q >= 1)):
        raise InvalidQuantile("quantile level must lie in (0, 1)")
    sig = np.exp(log_stds)
    lo = (means - 40.0 * sig).min(axis=-1)
    hi = (means + 40.0 * sig).max(axis=-1)
    lo, hi = np.broadcast_arrays(lo, hi, q)[:2]
    lo = lo.astype(np.float64, copy=True)
    hi = hi.astype(np.float64, copy=True)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        below = batch_cdf(weights, means, log_stds, mid) < q
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo <= tol * np.maximum(1.0, np.abs(mid))):
            break
    return 0.5 * (lo + hi)


def recalibrate_arrays(r: RecalibMap, weights, means, log_stds):
    s = r.a * log_stds + r.b
    if r.tau_w == 1.0:
        w = weights
    else:
        lw = _log_weights(weights) / r.tau_w
        lw = lw - lw.max(axis=-1, keepdims=True)
        w = np.exp(lw)
        w = w / w.sum(axis=-1, keepdims=True)
    return w, means, s


# --- scalar API -------------------------------------------------------------------


def mog_pdf(m: GaussianMixture1D, d):
    return np.exp(component_logpdf(m.weights, m.means, m.log_stds, d)).sum(axis=-1)


def mog_nll(m: GaussianMixture1D, d):
    return batch_nll(m.weights, m.means, m.log_stds, d)


def mog_cdf(m: GaussianMixture1D, d):
    return batch_cdf(m.weights, m.means, m.log_stds, d)


def mog_quantile(m: GaussianMixture1D, q):
    if not np.all((np.asarray(q) > 0) & (np.asarray(q) < 1)):
        raise InvalidQuantile(f"quantile level {q!r} outside (0, 1)")
    return batch_quantile(m.weights, m.means, m.log_stds, q)


def mog_mean(m: GaussianMixture1D) -> float:
    return float(batch_mean(m.weights, m.means))


def mog_variance(m: GaussianMixture1D) -> float:
    return float(batch_variance(m.weights, m.means, m.log_stds))


def apply_recalibration(r: RecalibMap, m: GaussianMixture1D) -> GaussianMixture1D:
    w, mu, s = recalibrate_arrays(r, m.weights, m.means, m.log_stds)
    return GaussianMixture1D(w, mu, s)


# --- calibration sets --------------------------------------------------------------


@dataclass
class CalibSet:
    """Column storage for a calibration set: ``(N, K)`` mixture arrays plus ``(N,)`` truths."""

    weights: np.ndarray
    means: np.ndarray
    log_stds: np.ndarray
    d_gt: np.ndarray

    def __len__(self):
        return self.d_gt.shape[0]

    @property
    def K(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def from_samples(cls, samples: Sequence[CalibSample]) -> "CalibSet":
        if not samples:
            return cls(np.zeros((0, 1)), np.zeros((0, 1)), np.zeros((0, 1)), np.zeros(0))
        return cls(
            np.stack([s.mixture.weights for s in samples]),
            np.stack([s.mixture.means for s in samples]),
            np.stack([s.mixture.log_stds for s in samples]),
            np.array([s.d_gt for s in samples], dtype=np.float64),
        )

    def samples(self) -> list[CalibSample]:
        return [
            CalibSample(GaussianMixture1D(w, m, s), float(d))
            for w, m, s, d in zip(self.weights, self.means, self.log_stds, self.d_gt)
        ]

    def recalibrated(self, r: RecalibMap) -> "CalibSet":
        w, m, s = recalibrate_arrays(r, self.weights, self.means, self.log_stds)
        return CalibSet(w, m, s, self.d_gt)


def _as_calibset(calib_set) -> CalibSet:
    if isinstance(calib_set, CalibSet):
        return calib_set
    return CalibSet.from_samples(list(calib_set))


def mean_nll(calib_set, recalib: RecalibMap | None = None) -> float:
    cs = _as_calibset(calib_set)
    if recalib is not None:
        cs = cs.recalibrated(recalib)
    return float(np.mean(batch_nll(cs.weights, cs.means, cs.log_stds, cs.d_gt)))


def fit_recalibration(calib_set, min_samples: int = MIN_CALIB_SAMPLES, rounds: int = 3) -> RecalibMap:
    """Fit the recalibration map minimizing mean NLL on a hold-out set.

    Coordinate descent over log-spaced grids for ``a`` and ``tau_w`` and a
    linear grid for the log-std offset, then Nelder-Mead refinement.  The
    offset is searched around the mean log-std so ``a`` and ``b`` decouple;
    the identity map is always a candidate, so the result never does worse.
    """
    cs = _as_calibset(calib_set)
    if len(cs) < min_samples:
        raise InsufficientData(f"need at least {min_samples} calibration samples, got {len(cs)}")
    s_bar = float(np.sum(cs.weights * cs.log_stds) / len(cs))
    lw = _log_weights(cs.weights)

    def objective(a, c, tau):
        s = a * (cs.log_stds - s_bar) + s_bar + c
        if tau == 1.0:
            w = cs.weights
        else:
            l = lw / tau
            l = l - l.max(axis=1, keepdims=True)
            w = np.exp(l)
            w /= w.sum(axis=1, keepdims=True)
        return float(np.mean(batch_nll(w, cs.means, s, cs.d_gt)))

    a_grid = np.geomspace(0.25, 4.0, 41)
    c_grid = np.linspace(-3.0, 3.0, 121)
    tau_grid = np.geomspace(0.25, 4.0, 41) if cs.K > 1 else np.array([1.0])
    params = [1.0, 0.0, 1.0]
    best = objective(*params)
    identity_nll = best
    grids = [a_grid, c_grid, tau_grid]
    for _ in range(rounds):
        changed = False
        for i, grid in enumerate(grids):
            for value in grid:
                trial = list(params)
                trial[i] = float(value)
                f = objective(*trial)
                if f < best:
                    best, params, changed = f, trial, True
        if not changed:
            break

    def packed(x):
        a, c, tau = math.exp(x[0]), x[1], math.exp(x[2]) if cs.K > 1 else 1.0
        f = objective(a, c, tau)
        return f if np.isfinite(f) else np.inf

    x0 = np.array([math.log(params[0]), params[1], math.log(params[2])])
    res = optimize.minimize(packed, x0, method="Nelder-Mead", options={"xatol": 1e-6, "fatol": 1e-10, "maxiter": 2000})
    if res.fun < best:
        a, c = math.exp(res.x[0]), float(res.x[1])
        tau = math.exp(res.x[2]) if cs.K > 1 else 1.0
        params, best = [a, c, tau], float(res.fun)
    a, c, tau = params
    fitted = RecalibMap(a=a, b=c + s_bar * (1.0 - a), tau_w=tau)
    # converting (a, c) back to (a, b) can round; keep the guarantee exact
    if mean_nll(cs, fitted) > identity_nll:
        return RecalibMap()
    return fitted


def central_intervals(calib_set, level: float):
    cs = _as_calibset(calib_set)
    lo = batch_quantile(cs.weights, cs.means, cs.log_stds, np.full(len(cs), (1.0 - level) / 2.0))
    hi = batch_quantile(cs.weights, cs.means, cs.log_stds, np.full(len(cs), (1.0 + level) / 2.0))
    return lo, hi


def calibration_curve(calib_set, levels: Iterable[float]) -> list[tuple[float, float]]:
    """Empirical coverage of the central credible interval at each level."""
    cs = _as_calibset(calib_set)
    curve = []
    for c in levels:
        if not 0.0 < c < 1.0:
            raise InvalidQuantile(f"calibration level {c!r} outside (0, 1)")
        lo, hi = central_intervals(cs, c)
        inside = (cs.d_gt >= lo) & (cs.d_gt <= hi)
        curve.append((float(c), float(inside.mean()) if len(cs) else float("nan")))
    return curve


# --- per-pixel maps -------------------------------------------------------------


class DepthDistMap:
    """Per-pixel mixtures stored as ``(H, W, K)`` arrays; read-only after construction."""

    def __init__(self, weights, means, log_stds):
        weights = np.asarray(weights, dtype=np.float64)
        means = np.asarray(means, dtype=np.float64)
        log_stds = np.asarray(log_stds, dtype=np.float64)
        if weights.ndim != 3 or weights.shape != means.shape or weights.shape != log_stds.shape:
            raise ValueError("mixture maps must share an (H, W, K) shape")
        if np.any(weights < 0) or np.any(np.abs(weights.sum(axis=-1) - 1.0) > 1e-6):
            raise ValueError("per-pixel weights must be non-negative and sum to 1")
        for a in (weights, means, log_stds):
            a.setflags(write=False)
        self.weights, self.means, self.log_stds = weights, means, log_stds
        self._cache: dict = {}

    @property
    def height(self) -> int:
        return self.weights.shape[0]

    @property
    def width(self) -> int:
        return self.weights.shape[1]

    @property
    def K(self) -> int:
        return self.weights.shape[2]

    def at(self, u: int, v: int) -> GaussianMixture1D:
        return GaussianMixture1D(self.weights[v, u], self.means[v, u], self.log_stds[v, u])

    def nll(self, d, u=None, v=None):
        if u is None:
            return batch_nll(self.weights, self.means, self.log_stds, d)
        return batch_nll(self.weights[v, u], self.means[v, u], self.log_stds[v, u], d)

    def mean(self) -> np.ndarray:
        if "mean" not in self._cache:
            self._cache["mean"] = batch_mean(self.weights, self.means)
        return self._cache["mean"]

    def variance(self) -> np.ndarray:
        if "var" not in self._cache:
            self._cache["var"] = batch_variance(self.weights, self.means, self.log_stds)
        return self._cache["var"]

    def nll_cap(self, coverage: float = 0.999) -> np.ndarray:
        """Per-pixel NLL at the edges of the central ``coverage`` interval.

        For a single Gaussian this is exactly the ``coverage`` quantile of the
        NLL of a draw from the pixel's own distribution.
        """
        key = ("cap", coverage)
        if key not in self._cache:
            shape = self.weights.shape[:2]
            lo = batch_quantile(self.weights, self.means, self.log_stds, np.full(shape, (1.0 - coverage) / 2.0), tol=1e-10)
            hi = batch_quantile(self.weights, self.means, self.log_stds, np.full(shape, (1.0 + coverage) / 2.0), tol=1e-10)
            self._cache[key] = np.maximum(self.nll(lo), self.nll(hi))
        return self._cache[key]

    def kernel_arrays(self):
        """``(log_coef, means, inv_std)`` in C order for the unary kernels."""
        if "kernel" not in self._cache:
            log_coef = _log_weights(self.weights) - self.log_stds - LOG_SQRT_2PI
            self._cache["kernel"] = (
                np.ascontiguousarray(log_coef),
                np.ascontiguousarray(self.means),
                np.ascontiguousarray(np.exp(-self.log_stds)),
            )
        return self._cache["kernel"]

    def recalibrated(self, r: RecalibMap) -> "DepthDistMap":
        return DepthDistMap(*recalibrate_arrays(r, self.weights, self.means, self.log_stds))

    def as_fixed_gaussian(self, sigma: float | None = None) -> "DepthDistMap":
        """Replace each mixture with one Gaussian at its mean and a global std.

        ``sigma`` defaults to the median per-pixel standard deviation.
        """
        if sigma is None:
            sigma = float(np.median(np.sqrt(self.variance())))
        mean = self.mean()[..., None]
        return DepthDistMap(np.ones_like(mean), mean, np.full_like(mean, math.log(sigma)))
