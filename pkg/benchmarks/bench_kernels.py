"""Time the compiled kernels against the NumPy fallback on the default fixture.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Both backends are imported directly, so the MONOSF_PURE_PYTHON switch does
not matter here.  Outputs are checked for equality before timing.
"""
import argparse
import timeit

import numpy as np

from monosf import synth
from monosf.geometry import homography_from_plane_motion
from monosf.kernels import _pykernels
from monosf.scenemodel import UnaryMaps

try:
    from monosf.kernels import _ckernels
except ImportError:
    _ckernels = None


def _setup():
    cfg = synth.default_config(seed=1)
    scene = synth.render_pair(cfg)
    prior0, prior1, _ = synth.make_priors(scene, cfg.priors, 1)
    K = cfg.K
    c0 = _pykernels.census_transform(scene.image0)
    c1 = _pykernels.census_transform(scene.image1)
    maps = UnaryMaps(K, c0, c1, prior0, prior1)
    v, u = np.mgrid[0 : K.height, 0 : K.width]
    n = cfg.regions[0].normal
    H = homography_from_plane_motion(K, cfg.bodies[0].motion, n)
    args = (u.ravel(), v.ravel(), H, n, K.fx, K.fy, K.cx, K.cy, c0, c1, maps.k0, maps.k1, maps.cap0, maps.cap1, 20.0)
    return scene, c0, c1, args


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    opts = ap.parse_args()
    if _ckernels is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation` first")
        return
    scene, c0, c1, args = _setup()
    words = np.random.default_rng(0).integers(0, 1 << 24, size=1_000_000, dtype=np.uint32)

    cases = {
        "census_transform 512x256": lambda m: m.census_transform(scene.image0),
        "popcount24 1e6 words": lambda m: m.popcount24(words),
        "unary_terms 131072 px, K=8": lambda m: m.unary_terms(*args),
    }
    print(f"{'kernel':32s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for name, fn in cases.items():
        ref, got = fn(_pykernels), fn(_ckernels)
        ref = ref if isinstance(ref, tuple) else (ref,)
        got = got if isinstance(got, tuple) else (got,)
        for a, b in zip(ref, got):
            np.testing.assert_allclose(np.asarray(b, dtype=np.float64), np.asarray(a, dtype=np.float64), rtol=1e-12, atol=1e-12)
        t_py = min(timeit.repeat(lambda: fn(_pykernels), number=1, repeat=opts.repeat)) * 1e3
        t_c = min(timeit.repeat(lambda: fn(_ckernels), number=1, repeat=opts.repeat)) * 1e3
        print(f"{name:32s} {t_py:10.2f} {t_c:10.2f} {t_py / t_c:7.1f}x")


if __name__ == "__main__":
    main()
