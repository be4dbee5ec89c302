"""5x5 Census descriptors and the truncated Hamming photometric cost."""
import numpy as np

from . import kernels
from .errors import ImageTooSmall
from .geometry import warp

CENSUS_BITS = 24
CENSUS_MASK = (1 << CENSUS_BITS) - 1


def census_transform(img) -> np.ndarray:
    """24-bit Census codes of an 8-bit image (``uint32``), edge-clamped at borders.

    Bit ``b`` is set when the ``b``-th neighbor (row-major over the 5x5
    window, center skipped) is strictly darker than the center.
    """
    img = np.asarray(img)
    if img.ndim != 2 or img.shape[0] < 5 or img.shape[1] < 5:
        raise ImageTooSmall(f"census transform needs at least 5x5 pixels, got {img.shape}")
    return kernels.census_transform(img)


def hamming24(a, b):
    x = (np.asarray(a, dtype=np.uint32) ^ np.asarray(b, dtype=np.uint32)) & np.uint32(CENSUS_MASK)
    out = kernels.popcount24(x)
    return int(out) if np.ndim(out) == 0 else out


def photometric_cost(p0, H, census0, census1, tau0: float):
    """Truncated Hamming distance between ``p0`` and its nearest-pixel warp under ``H``.

    Warps leaving the image or landing behind the camera cost ``tau0``.
    ``p0`` may be a single ``(u, v)`` or an ``(N, 2)`` integer array.
    """
    if not 0 < tau0 <= CENSUS_BITS:
        raise ValueError("tau0 must lie in (0, 24]")
    p0 = np.asarray(p0)
    single = p0.ndim == 1
    p0 = np.atleast_2d(p0).astype(np.int64)
    h, w = census1.shape
    u1, v1, hw = warp(H, p0[:, 0], p0[:, 1])
    with np.errstate(invalid="ignore"):
        ru = np.floor(u1 + 0.5)
        rv = np.floor(v1 + 0.5)
        inside = (hw > 0) & (ru >= 0) & (ru < w) & (rv >= 0) & (rv < h)
    cost = np.full(p0.shape[0], float(tau0))
    if np.any(inside):
        a = census0[p0[inside, 1], p0[inside, 0]]
        b = census1[rv[inside].astype(np.int64), ru[inside].astype(np.int64)]
        cost[inside] = np.minimum(kernels.popcount24(a ^ b), tau0)
    return float(cost[0]) if single else cost
