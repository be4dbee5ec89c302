# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the per-pixel kernels in ``_pykernels``; same semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, floor

cnp.import_array()


def census_transform(img):
    # edge-clamped border via a padded copy keeps the inner loop branch-free
    cdef const cnp.uint8_t[:, ::1] pad = np.ascontiguousarray(np.pad(np.asarray(img, dtype=np.uint8), 2, mode="edge"))
    cdef Py_ssize_t h = pad.shape[0] - 4, w = pad.shape[1] - 4
    out_arr = np.empty((h, w), dtype=np.uint32)
    cdef cnp.uint32_t[:, ::1] out = out_arr
    cdef Py_ssize_t y, x
    cdef int dy, dx, b
    cdef cnp.uint8_t c
    cdef cnp.uint32_t code
    with nogil:
        for y in range(h):
            for x in range(w):
                c = pad[y + 2, x + 2]
                code = 0
                b = 0
                for dy in range(5):
                    for dx in range(5):
                        if dy == 2 and dx == 2:
                            continue
                        code |= (<cnp.uint32_t>(pad[y + dy, x + dx] < c)) << b
                        b += 1
                out[y, x] = code
    return out_arr


cdef inline int popcount32(cnp.uint32_t x) nogil:
    x = x - ((x >> 1) & 0x55555555)
    x = (x & 0x33333333) + ((x >> 2) & 0x33333333)
    x = (x + (x >> 4)) & 0x0F0F0F0F
    return <int>((x * 0x01010101) >> 24)


def popcount24(x):
    a = np.ascontiguousarray(x, dtype=np.uint32).ravel()
    cdef const cnp.uint32_t[::1] av = a
    res = np.empty(a.shape[0], dtype=np.int64)
    cdef cnp.int64_t[::1] rv = res
    cdef Py_ssize_t i
    for i in range(a.shape[0]):
        rv[i] = popcount32(av[i])
    return res.reshape(np.shape(x))


cdef inline double mixture_nll(const double[:, :, ::1] lc, const double[:, :, ::1] mu,
                               const double[:, :, ::1] isd, Py_ssize_t v, Py_ssize_t u,
                               double d, double* buf) nogil:
    cdef Py_ssize_t k, K = lc.shape[2]
    cdef double z, top = -1e308, acc = 0.0
    for k in range(K):
        z = (d - mu[v, u, k]) * isd[v, u, k]
        buf[k] = lc[v, u, k] - 0.5 * z * z
        if buf[k] > top:
            top = buf[k]
    for k in range(K):
        acc += exp(buf[k] - top)
    return -(top + log(acc))


def unary_terms(us, vs, H, n, double fx, double fy, double cx, double cy,
                census0, census1, prior0, prior1, cap0, cap1, double tau0):
    cdef const cnp.int64_t[::1] U = np.ascontiguousarray(us, dtype=np.int64)
    cdef const cnp.int64_t[::1] V = np.ascontiguousarray(vs, dtype=np.int64)
    cdef const double[:, ::1] Hm = np.ascontiguousarray(H, dtype=np.float64)
    cdef const double[::1] nv = np.ascontiguousarray(n, dtype=np.float64)
    cdef const cnp.uint32_t[:, ::1] c0 = census0
    cdef const cnp.uint32_t[:, ::1] c1 = census1
    cdef const double[:, :, ::1] lc0 = prior0[0]
    cdef const double[:, :, ::1] mu0 = prior0[1]
    cdef const double[:, :, ::1] is0 = prior0[2]
    cdef const double[:, :, ::1] lc1 = prior1[0]
    cdef const double[:, :, ::1] mu1 = prior1[1]
    cdef const double[:, :, ::1] is1 = prior1[2]
    cdef const double[:, ::1] cp0 = np.ascontiguousarray(cap0, dtype=np.float64)
    cdef const double[:, ::1] cp1 = np.ascontiguousarray(cap1, dtype=np.float64)
    cdef Py_ssize_t N = U.shape[0], i, height = c0.shape[0], width = c0.shape[1]
    cdef Py_ssize_t K = lc0.shape[2]
    pho_a = np.empty(N, dtype=np.float64)
    s0_a = np.empty(N, dtype=np.float64)
    s1_a = np.empty(N, dtype=np.float64)
    cdef double[::1] pho = pho_a
    cdef double[::1] s0 = s0_a
    cdef double[::1] s1 = s1_a
    buf_a = np.empty(max(K, lc1.shape[2]), dtype=np.float64)
    cdef double[::1] buf = buf_a
    cdef double uf, vf, d0, x, y, w, u1, v1, d1, ru, rv, ham
    cdef Py_ssize_t ui, vi, rui, rvi
    with nogil:
        for i in range(N):
            ui = U[i]
            vi = V[i]
            uf = <double>ui
            vf = <double>vi
            d0 = nv[0] * (uf - cx) / fx + nv[1] * (vf - cy) / fy + nv[2]
            w = Hm[2, 0] * uf + Hm[2, 1] * vf + Hm[2, 2]
            if not (d0 > 0 and w > 0):
                pho[i] = tau0
                s0[i] = cp0[vi, ui]
                s1[i] = cp1[vi, ui]
                continue
            x = Hm[0, 0] * uf + Hm[0, 1] * vf + Hm[0, 2]
            y = Hm[1, 0] * uf + Hm[1, 1] * vf + Hm[1, 2]
            u1 = x / w
            v1 = y / w
            d1 = d0 / w
            ru = floor(u1 + 0.5)
            rv = floor(v1 + 0.5)
            s0[i] = mixture_nll(lc0, mu0, is0, vi, ui, d0, &buf[0])
            if ru >= 0 and ru < width and rv >= 0 and rv < height:
                rui = <Py_ssize_t>ru
                rvi = <Py_ssize_t>rv
                ham = <double>popcount32(c0[vi, ui] ^ c1[rvi, rui])
                pho[i] = ham if ham < tau0 else tau0
                s1[i] = mixture_nll(lc1, mu1, is1, rvi, rui, d1, &buf[0])
            else:
                pho[i] = tau0
                if ru < 0:
                    rui = 0
                elif ru >= width:
                    rui = width - 1
                else:
                    rui = <Py_ssize_t>ru
                if rv < 0:
                    rvi = 0
                elif rv >= height:
                    rvi = height - 1
                else:
                    rvi = <Py_ssize_t>rv
                s1[i] = cp1[rvi, rui]
    return pho_a, s0_a, s1_a
