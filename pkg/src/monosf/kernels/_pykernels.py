"""NumPy implementations of the hot kernels; used when the extension is unavailable."""
import numpy as np

# row-major 5x5 offsets, center excluded; bit b <-> OFFSETS[b]
OFFSETS = [(dy, dx) for dy in range(-2, 3) for dx in range(-2, 3) if (dy, dx) != (0, 0)]


def census_transform(img):
    img = np.ascontiguousarray(img, dtype=np.uint8)
    h, w = img.shape
    padded = np.pad(img, 2, mode="edge")
    out = np.zeros((h, w), dtype=np.uint32)
    for b, (dy, dx) in enumerate(OFFSETS):
        nb = padded[2 + dy : 2 + dy + h, 2 + dx : 2 + dx + w]
        out |= (nb < img).astype(np.uint32) << np.uint32(b)
    return out


_POP8 = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint8)


def popcount24(x):
    x = np.asarray(x, dtype=np.uint32)
    return (_POP8[x & 0xFF] + _POP8[(x >> 8) & 0xFF] + _POP8[(x >> 16) & 0xFF]).astype(np.int64)


def _nll_rows(log_coef, means, inv_std, d):
    z = (d[:, None] - means) * inv_std
    lp = log_coef - 0.5 * z * z
    top = lp.max(axis=1)
    return -(top + np.log(np.exp(lp - top[:, None]).sum(axis=1)))


def unary_terms(us, vs, H, n, fx, fy, cx, cy, census0, census1, prior0, prior1, cap0, cap1, tau0):
    """Per-pixel ``(photometric, nll_t0, nll_t1)`` for one plane/motion hypothesis.

    ``prior0``/``prior1`` are ``(log_coef, means, inv_std)`` triples of
    ``(H, W, K)`` arrays.  Pixels whose inverse depth is non-positive in
    either frame get ``tau0`` and the per-pixel NLL caps.
    """
    us = np.asarray(us, dtype=np.int64)
    vs = np.asarray(vs, dtype=np.int64)
    height, width = census0.shape
    uf = us.astype(np.float64)
    vf = vs.astype(np.float64)
    d0 = n[0] * (uf - cx) / fx + n[1] * (vf - cy) / fy + n[2]
    x = H[0, 0] * uf + H[0, 1] * vf + H[0, 2]
    y = H[1, 0] * uf + H[1, 1] * vf + H[1, 2]
    w = H[2, 0] * uf + H[2, 1] * vf + H[2, 2]
    ok = (d0 > 0) & (w > 0)
    safe_w = np.where(ok, w, 1.0)
    u1 = x / safe_w
    v1 = y / safe_w
    d1 = np.where(ok, d0, 1.0) / safe_w
    ru = np.floor(u1 + 0.5)
    rv = np.floor(v1 + 0.5)
    inside = ok & (ru >= 0) & (ru < width) & (rv >= 0) & (rv < height)
    rui = np.where(inside, ru, 0).astype(np.int64)
    rvi = np.where(inside, rv, 0).astype(np.int64)

    pho = np.full(us.shape, float(tau0))
    ham = popcount24(census0[vs, us] ^ census1[rvi, rui]).astype(np.float64)
    pho[inside] = np.minimum(ham[inside], tau0)

    svd0 = cap0[vs, us].astype(np.float64)
    if np.any(ok):
        lc, mu, isd = prior0
        svd0[ok] = _nll_rows(lc[vs[ok], us[ok]], mu[vs[ok], us[ok]], isd[vs[ok], us[ok]], d0[ok])

    svd1 = cap1[vs, us].astype(np.float64)
    cu = np.clip(np.where(ok, ru, us), 0, width - 1).astype(np.int64)
    cv = np.clip(np.where(ok, rv, vs), 0, height - 1).astype(np.int64)
    out = ok & ~inside
    svd1[out] = cap1[cv[out], cu[out]]
    if np.any(inside):
        lc, mu, isd = prior1
        svd1[inside] = _nll_rows(lc[rvi[inside], rui[inside]], mu[rvi[inside], rui[inside]], isd[rvi[inside], rui[inside]], d1[inside])
    return pho, svd0, svd1
