"""Synthetic piecewise-planar scenes with exact ground truth.

Frame 0 is procedurally textured per region.  Frame 1 is rendered by
inverse-warping every frame-1 pixel through each region's plane homography
and keeping the closest surface whose source lands back in that region;
pixels no region claims are disocclusions and get fresh texture.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .depthprob import CalibSet, DepthDistMap
from .errors import ConfigError, InvalidLayout
from .geometry import CameraIntrinsics, RigidMotion, homography_from_plane_motion, warp
from .scenemodel import BACKGROUND, OBJECT, SceneFlowField


@dataclass
class PlaneRegion:
    normal: np.ndarray
    polygon: list  # [(u, v), ...] in frame-0 pixels
    body: int = 0


@dataclass
class BodySpec:
    kind: str
    motion: RigidMotion = field(default_factory=RigidMotion.identity)


@dataclass
class TextureSpec:
    octaves: int = 4
    base_cell: float = 3.0  # cell size (px) of the finest octave
    contrast: float = 25.0
    blur: float = 0.7


@dataclass
class PriorNoise:
    components: int = 8
    rel_noise: float = 0.05
    sigma_floor: float = 1e-4
    miscalibration: float = 1.0
    outlier_prob: float = 0.0
    outlier_weight: float = 0.2
    calib_samples: int = 10000


@dataclass
class SynthConfig:
    K: CameraIntrinsics
    regions: list
    bodies: list
    texture: TextureSpec = field(default_factory=TextureSpec)
    priors: PriorNoise = field(default_factory=PriorNoise)
    match_step: int = 8
    seed: int = 0


@dataclass
class SynthScene:
    K: CameraIntrinsics
    image0: np.ndarray
    image1: np.ndarray
    gt: SceneFlowField
    regions0: np.ndarray  # (H, W) region index per frame-0 pixel
    mask0: np.ndarray  # (H, W) uint16 instance labels (0 = background)
    mask1: np.ndarray
    depth1: np.ndarray  # frame-1 inverse depth per frame-1 pixel
    noc0: np.ndarray  # frame-0 pixels visible in frame 1
    disocc1: np.ndarray  # frame-1 pixels with no frame-0 source
    matches: np.ndarray  # (N, 4) x0 y0 x1 y1
    body_of_label: dict  # instance label -> body index


# mean intensity per region index; neighbors within one body differ by >= 65 levels
_BASE_LEVELS = (55.0, 185.0, 120.0, 120.0, 190.0, 80.0)


def _plane_through(normal, point) -> np.ndarray:
    """Plane parameters ``n`` with ``n . X = 1`` for the plane with ``normal`` through ``point``."""
    normal = np.asarray(normal, dtype=np.float64)
    return normal / float(normal @ np.asarray(point, dtype=np.float64))


def default_config(seed: int = 0, width: int = 512, height: int = 256, **prior_overrides) -> SynthConfig:
    """Road scene: ground, back wall, two side walls meeting at creases, and a moving box.

    The box is yawed so that its front and left faces are both visible;
    one fronto-parallel face alone leaves yaw and lateral translation of
    the object nearly interchangeable.
    """
    sx, sy = width / 512.0, height / 256.0
    K = CameraIntrinsics(fx=360.0 * sx, fy=360.0 * sy, cx=width / 2.0, cy=height / 2.0, width=width, height=height)
    cam_h, back, left, right = 1.6, 40.0, -6.0, 7.0

    def px(X):
        return (K.fx * X[0] / X[2] + K.cx, K.fy * X[1] / X[2] + K.cy)

    def wall_foot(x, u_edge):
        # where a side wall x = const meets the ground at image column u_edge
        z = K.fx * x / (u_edge - K.cx)
        return px((x, cam_h, z))

    bl, br = px((left, cam_h, back)), px((right, cam_h, back))
    fl = wall_foot(left, -1.0)
    fr = wall_foot(right, width + 0.0)
    top, bottom, lft, rgt = -1.0, height + 0.0, -1.0, width + 0.0
    regions = [
        # the ground spans everything below the horizon; walls overwrite it above their feet
        PlaneRegion(np.array([0.0, 1 / cam_h, 0.0]), [(lft, K.cy + 1.0), (rgt, K.cy + 1.0), (rgt, bottom), (lft, bottom)], 0),
        PlaneRegion(np.array([0.0, 0.0, 1 / back]), [(bl[0], top), (br[0], top), br, bl], 0),
        PlaneRegion(np.array([1 / left, 0.0, 0.0]), [(lft, top), (bl[0], top), bl, fl], 0),
        PlaneRegion(np.array([1 / right, 0.0, 0.0]), [(br[0], top), (rgt, top), fr, br], 0),
    ]
    # box resting on the ground: front face A-B, left face A-D
    a = np.array([0.5, cam_h, 8.0])
    b = np.array([2.3, cam_h, 8.6])
    along = (b - a) / np.linalg.norm(b - a)
    depth_dir = np.array([-along[2], 0.0, along[0]])
    d = a + 3.0 * depth_dir
    lift = np.array([0.0, -2.0, 0.0])
    front = [px(a + lift), px(b + lift), px(b), px(a)]
    side = [px(d + lift), px(a + lift), px(a), px(d)]
    regions.append(PlaneRegion(_plane_through(-depth_dir, a), front, 1))
    regions.append(PlaneRegion(_plane_through(along, a), side, 1))
    ego = RigidMotion.from_axis_angle([0.0, math.radians(0.4), 0.0], [0.0, 0.0, -1.0])
    obj = RigidMotion.from_axis_angle([0.0, math.radians(-1.0), 0.0], [-0.5, 0.0, -2.4])
    bodies = [BodySpec(BACKGROUND, ego), BodySpec(OBJECT, obj)]
    return SynthConfig(K, regions, bodies, priors=PriorNoise(**prior_overrides), seed=seed)


# --- rasterization -----------------------------------------------------------------


def _inside_polygon(u, v, polygon) -> np.ndarray:
    """Even-odd rule for pixel centers."""
    inside = np.zeros(u.shape, dtype=bool)
    pts = list(polygon)
    for (x1, y1), (x2, y2) in zip(pts, pts[1:] + pts[:1]):
        if y1 == y2:
            continue
        crosses = (y1 > v) != (y2 > v)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_at = x1 + (v - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (u < x_at)
    return inside


def rasterize_regions(cfg: SynthConfig) -> np.ndarray:
    K = cfg.K
    v, u = np.mgrid[0 : K.height, 0 : K.width].astype(np.float64)
    labels = np.full((K.height, K.width), -1, dtype=np.int64)
    for i, reg in enumerate(cfg.regions):
        labels[_inside_polygon(u, v, reg.polygon)] = i
    return labels


def value_noise(shape, cell: float, rng) -> np.ndarray:
    h, w = shape
    gh, gw = int(math.ceil(h / cell)) + 2, int(math.ceil(w / cell)) + 2
    grid = rng.uniform(-1.0, 1.0, size=(gh, gw))
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return ndimage.map_coordinates(grid, [yy / cell, xx / cell], order=3, mode="nearest")


def make_texture(shape, spec: TextureSpec, rng) -> np.ndarray:
    tex = np.zeros(shape)
    amp = 1.0
    for o in range(spec.octaves):
        tex += amp * value_noise(shape, spec.base_cell * 2**o, rng)
        amp *= 0.6
    if spec.blur > 0:
        tex = ndimage.gaussian_filter(tex, spec.blur)
    return tex / (tex.std() + 1e-12)


def _validate(cfg: SynthConfig):
    if not cfg.bodies or cfg.bodies[0].kind != BACKGROUND:
        raise InvalidLayout("body 0 must be the background")
    if sum(b.kind == BACKGROUND for b in cfg.bodies) != 1:
        raise InvalidLayout("exactly one background body is required")
    for i, reg in enumerate(cfg.regions):
        if not 0 <= reg.body < len(cfg.bodies):
            raise InvalidLayout(f"region {i} references unknown body {reg.body}")
        if len(reg.polygon) < 3:
            raise InvalidLayout(f"region {i} polygon needs at least 3 vertices")
        if not np.all(np.isfinite(reg.normal)) or np.linalg.norm(reg.normal) == 0:
            raise InvalidLayout(f"region {i} has a degenerate plane normal")


def render_pair(cfg: SynthConfig) -> SynthScene:
    _validate(cfg)
    K = cfg.K
    h, w = K.height, K.width
    rng = np.random.default_rng([cfg.seed, 0])
    labels = rasterize_regions(cfg)
    if np.any(labels < 0):
        vv, uu = np.argwhere(labels < 0)[0]
        raise InvalidLayout(f"regions do not cover the image (pixel u={uu}, v={vv} uncovered)")

    v0, u0 = np.mgrid[0:h, 0:w]
    normals = np.array([r.normal for r in cfg.regions], dtype=np.float64)
    motions = [cfg.bodies[r.body].motion for r in cfg.regions]
    homs = [homography_from_plane_motion(K, T, n) for T, n in zip(motions, normals)]

    d0 = np.empty((h, w))
    d1 = np.empty((h, w))
    flow = np.empty((h, w, 2))
    for i, H in enumerate(homs):
        m = labels == i
        uu, vv = u0[m].astype(np.float64), v0[m].astype(np.float64)
        dd0 = K.rays(uu, vv) @ normals[i]
        if np.any(dd0 <= 0):
            raise InvalidLayout(f"region {i} has non-positive depth at t=0")
        u1, v1, hw = warp(H, uu, vv)
        if np.any(hw <= 0):
            raise InvalidLayout(f"region {i} moves behind the camera at t=1")
        d0[m], d1[m] = dd0, dd0 / hw
        flow[m, 0], flow[m, 1] = u1 - uu, v1 - vv

    # texture: distinct mean intensity per region so appearance follows geometry
    tex = make_texture((h, w), cfg.texture, rng)
    base = np.array([_BASE_LEVELS[i % len(_BASE_LEVELS)] for i in range(len(cfg.regions))])
    img0_f = np.clip(base[labels] + cfg.texture.contrast * tex, 0.0, 255.0)
    image0 = np.floor(img0_f + 0.5).astype(np.uint8)

    # frame 1 by z-buffered inverse warping
    best_d1 = np.full((h, w), -np.inf)
    winner = np.full((h, w), -1, dtype=np.int64)
    src_u = np.zeros((h, w))
    src_v = np.zeros((h, w))
    qf_u, qf_v = u0.astype(np.float64).ravel(), v0.astype(np.float64).ravel()
    for i, H in enumerate(homs):
        Hinv = np.linalg.inv(H)
        pu, pv, pw = warp(Hinv, qf_u, qf_v)
        with np.errstate(invalid="ignore"):
            ru, rv = np.floor(pu + 0.5), np.floor(pv + 0.5)
            ok = (pw > 0) & (ru >= 0) & (ru < w) & (rv >= 0) & (rv < h)
        idx = np.flatnonzero(ok)
        ok_idx = idx[labels[rv[idx].astype(np.int64), ru[idx].astype(np.int64)] == i]
        dd0 = K.rays(pu[ok_idx], pv[ok_idx]) @ normals[i]
        _, _, fw = warp(H, pu[ok_idx], pv[ok_idx])
        dd1 = dd0 / fw
        flat_best = best_d1.ravel()
        closer = dd1 > flat_best[ok_idx]
        sel = ok_idx[closer]
        flat_best[sel] = dd1[closer]
        winner.ravel()[sel] = i
        src_u.ravel()[sel] = pu[ok_idx][closer]
        src_v.ravel()[sel] = pv[ok_idx][closer]

    disocc1 = winner < 0
    identity = all(np.array_equal(H, np.eye(3)) for H in homs)
    if identity:
        image1 = image0.copy()
    else:
        sampled = ndimage.map_coordinates(img0_f, [src_v, src_u], order=1, mode="nearest")
        fresh = np.clip(115.0 + cfg.texture.contrast * make_texture((h, w), cfg.texture, rng), 0, 255)
        image1 = np.floor(np.where(disocc1, fresh, sampled) + 0.5).astype(np.uint8)

    depth1 = best_d1.copy()
    if np.any(disocc1):
        depth1 = _fill_rows(depth1, disocc1)

    # instance masks: object bodies get labels 1..M in body order
    body_label = {}
    for b, spec in enumerate(cfg.bodies):
        if spec.kind == OBJECT:
            body_label[b] = len(body_label) + 1
    region_label = np.array([body_label.get(r.body, 0) for r in cfg.regions], dtype=np.uint16)
    mask0 = region_label[labels]
    mask1 = np.where(disocc1, 0, region_label[np.maximum(winner, 0)]).astype(np.uint16)

    # frame-0 pixels whose surface is the visible one in frame 1
    p1u, p1v = u0 + flow[..., 0], v0 + flow[..., 1]
    ru, rv = np.floor(p1u + 0.5), np.floor(p1v + 0.5)
    inside = (ru >= 0) & (ru < w) & (rv >= 0) & (rv < h)
    noc0 = np.zeros((h, w), dtype=bool)
    iu, iv = ru[inside].astype(np.int64), rv[inside].astype(np.int64)
    noc0[inside] = winner[iv, iu] == labels[inside]

    gt = SceneFlowField(d0, d1, flow, np.ones((h, w), dtype=bool))
    matches = grid_matches(gt, noc0, cfg.match_step)
    return SynthScene(
        K, image0, image1, gt, labels, mask0, mask1, depth1, noc0, disocc1, matches,
        {lab: b for b, lab in body_label.items()},
    )


def _fill_rows(arr, holes):
    """Fill holes with the value of the nearest non-hole pixel."""
    idx = ndimage.distance_transform_edt(holes, return_distances=False, return_indices=True)
    return arr[tuple(idx)]


def grid_matches(gt: SceneFlowField, valid, step: int) -> np.ndarray:
    h, w = gt.d0.shape
    off = step // 2
    vv, uu = np.mgrid[off:h:step, off:w:step]
    uu, vv = uu.ravel(), vv.ravel()
    keep = valid[vv, uu]
    uu, vv = uu[keep], vv[keep]
    u1 = uu + gt.flow[vv, uu, 0]
    v1 = vv + gt.flow[vv, uu, 1]
    inside = (u1 >= 0) & (u1 <= w - 1) & (v1 >= 0) & (v1 <= h - 1)
    return np.stack([uu[inside], vv[inside], u1[inside], v1[inside]], axis=1).astype(np.float64)


# --- priors --------------------------------------------------------------------------


def _mixture_shapes(shape, K: int, rng):
    """Zero-mean, unit-variance mixture shapes ``(weights, offsets, scales)``."""
    if K == 1:
        ones = np.ones(shape + (1,))
        return ones, np.zeros(shape + (1,)), ones
    w = rng.dirichlet(np.full(K, 2.0), size=shape)
    off = rng.normal(0.0, 0.6, size=shape + (K,))
    sc = rng.uniform(0.5, 1.0, size=shape + (K,))
    off -= (w * off).sum(axis=-1, keepdims=True)
    var = (w * (sc * sc + off * off)).sum(axis=-1, keepdims=True)
    norm = np.sqrt(var)
    return w, off / norm, sc / norm


def _sample_shape(w, off, sc, rng):
    cum = np.cumsum(w, axis=-1)
    r = rng.uniform(size=w.shape[:-1] + (1,))
    k = np.minimum((r > cum).sum(axis=-1), w.shape[-1] - 1)
    o = np.take_along_axis(off, k[..., None], -1)[..., 0]
    s = np.take_along_axis(sc, k[..., None], -1)[..., 0]
    return o + s * rng.standard_normal(size=w.shape[:-1])


def sample_mixtures(d_true, noise: PriorNoise, rng):
    """Mixtures whose error distribution around ``d_true`` is the mixture itself.

    The overall std is ``max(rel_noise * d, sigma_floor)``; stored stds are
    multiplied by ``miscalibration`` (1 = calibrated).  An optional outlier
    component at a wrong depth replaces the last component.
    """
    d_true = np.asarray(d_true, dtype=np.float64)
    K = noise.components
    w, off, sc = _mixture_shapes(d_true.shape, K, rng)
    sigma = np.maximum(noise.rel_noise * d_true, noise.sigma_floor)
    x = _sample_shape(w, off, sc, rng)
    center = d_true - sigma * x
    means = center[..., None] + sigma[..., None] * off
    log_stds = np.log(sigma[..., None] * sc * noise.miscalibration)
    if noise.outlier_prob > 0 and K > 1:
        hit = rng.uniform(size=d_true.shape) < noise.outlier_prob
        far = rng.uniform(size=d_true.shape) < 0.5
        factor = np.where(far, rng.uniform(0.55, 0.75, size=d_true.shape), rng.uniform(1.35, 1.8, size=d_true.shape))
        rest = w[..., :-1] * ((1.0 - noise.outlier_weight) / w[..., :-1].sum(axis=-1))[..., None]
        with_outlier = np.concatenate([rest, np.full(rest.shape[:-1] + (1,), noise.outlier_weight)], axis=-1)
        w = np.where(hit[..., None], with_outlier, w)
        means[..., -1] = np.where(hit, d_true * factor, means[..., -1])
        log_stds[..., -1] = np.where(hit, np.log(sigma * noise.miscalibration), log_stds[..., -1])
    return w, means, log_stds


def make_priors(scene: SynthScene, noise: PriorNoise, seed: int):
    """Prior maps for both frames plus a hold-out calibration set.

    The calibration set uses an independent noise draw on a random subset of
    frame-0 pixels so it can serve as a recalibration split.
    """
    rng0 = np.random.default_rng([seed, 1])
    rng1 = np.random.default_rng([seed, 2])
    rngc = np.random.default_rng([seed, 3])
    prior0 = DepthDistMap(*sample_mixtures(scene.gt.d0, noise, rng0))
    prior1 = DepthDistMap(*sample_mixtures(scene.depth1, noise, rng1))
    flat = scene.gt.d0.ravel()
    n = min(noise.calib_samples, flat.size)
    pick = np.sort(rngc.choice(flat.size, size=n, replace=False))
    d = flat[pick]
    calib = CalibSet(*sample_mixtures(d, noise, rngc), d_gt=d.copy())
    return prior0, prior1, calib


# --- config files -----------------------------------------------------------------------


def _floats(value: str, n: int | None, key: str):
    try:
        out = [float(x) for x in value.replace(";", ",").split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"{key}: expected numbers, got {value!r}") from exc
    if n is not None and len(out) != n:
        raise ConfigError(f"{key}: expected {n} numbers, got {len(out)}")
    return out


def config_from_kv(kv: dict) -> SynthConfig:
    """Build a scene from ``key=value`` entries (see ``data/scene_default.cfg``)."""
    kv = dict(kv)
    used = set()

    def take(key, default=None):
        used.add(key)
        if key in kv:
            return kv[key]
        if default is None:
            raise ConfigError(f"missing key {key}")
        return default

    try:
        width, height = int(take("width")), int(take("height"))
        K = CameraIntrinsics(
            float(take("fx")), float(take("fy")), float(take("cx", str(width / 2))), float(take("cy", str(height / 2))), width, height
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    bodies = []
    b = 0
    while f"body.{b}.kind" in kv:
        kind = take(f"body.{b}.kind")
        if kind not in (BACKGROUND, OBJECT):
            raise ConfigError(f"body.{b}.kind must be background or object")
        rot = _floats(take(f"body.{b}.rotation", "0,0,0"), 3, f"body.{b}.rotation")
        tr = _floats(take(f"body.{b}.translation", "0,0,0"), 3, f"body.{b}.translation")
        bodies.append(BodySpec(kind, RigidMotion.from_axis_angle(np.radians(rot), tr)))
        b += 1
    regions = []
    r = 0
    while f"region.{r}.normal" in kv:
        normal = np.array(_floats(take(f"region.{r}.normal"), 3, f"region.{r}.normal"))
        pts = _floats(take(f"region.{r}.polygon"), None, f"region.{r}.polygon")
        if len(pts) % 2:
            raise InvalidLayout(f"region {r} polygon has an odd number of coordinates")
        try:
            body = int(take(f"region.{r}.body", "0"))
        except ValueError as exc:
            raise ConfigError(f"region.{r}.body must be an integer") from exc
        regions.append(PlaneRegion(normal, list(zip(pts[0::2], pts[1::2])), body))
        r += 1
    if not regions:
        raise InvalidLayout("no regions defined")
    try:
        td, pd = TextureSpec(), PriorNoise()
        texture = TextureSpec(
            int(take("texture.octaves", str(td.octaves))), float(take("texture.base_cell", str(td.base_cell))),
            float(take("texture.contrast", str(td.contrast))), float(take("texture.blur", str(td.blur))),
        )
        priors = PriorNoise(
            int(take("prior.components", str(pd.components))), float(take("prior.rel_noise", str(pd.rel_noise))),
            float(take("prior.sigma_floor", str(pd.sigma_floor))), float(take("prior.miscalibration", str(pd.miscalibration))),
            float(take("prior.outlier_prob", str(pd.outlier_prob))), float(take("prior.outlier_weight", str(pd.outlier_weight))),
            int(take("prior.calib_samples", str(pd.calib_samples))),
        )
        match_step = int(take("match_step", str(SynthConfig.match_step)))
        cfg = SynthConfig(K, regions, bodies, texture, priors, match_step, int(take("seed", "0")))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    unknown = sorted(set(kv) - used)
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(unknown)}")
    _validate(cfg)
    return cfg


def _num(x) -> str:
    # 12 significant digits hides axis-angle round-trip noise such as 0.3999999999999999
    return repr(float(f"{float(x):.12g}"))


def config_to_kv(cfg: SynthConfig) -> dict:
    K = cfg.K
    out = {"width": K.width, "height": K.height, "fx": repr(K.fx), "fy": repr(K.fy), "cx": repr(K.cx), "cy": repr(K.cy)}
    for i, b in enumerate(cfg.bodies):
        out[f"body.{i}.kind"] = b.kind
        out[f"body.{i}.rotation"] = ",".join(_num(x) for x in np.degrees(b.motion.axis_angle))
        out[f"body.{i}.translation"] = ",".join(_num(x) for x in b.motion.translation)
    for i, r in enumerate(cfg.regions):
        out[f"region.{i}.normal"] = ",".join(_num(x) for x in r.normal)
        out[f"region.{i}.polygon"] = ";".join(f"{_num(u)},{_num(v)}" for u, v in r.polygon)
        out[f"region.{i}.body"] = r.body
    t, p = cfg.texture, cfg.priors
    out.update({
        "texture.octaves": t.octaves, "texture.base_cell": repr(t.base_cell),
        "texture.contrast": repr(t.contrast), "texture.blur": repr(t.blur),
        "prior.components": p.components, "prior.rel_noise": repr(p.rel_noise),
        "prior.sigma_floor": repr(p.sigma_floor), "prior.miscalibration": repr(p.miscalibration),
        "prior.outlier_prob": repr(p.outlier_prob), "prior.outlier_weight": repr(p.outlier_weight),
        "prior.calib_samples": p.calib_samples, "match_step": cfg.match_step, "seed": cfg.seed,
    })
    return out


def bundled_config_path() -> Path:
    return Path(__file__).with_name("data") / "scene_default.cfg"
