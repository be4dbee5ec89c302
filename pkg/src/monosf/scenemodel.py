"""Superpixel planes + rigid bodies, and the energy they are scored with.

The energy of a scene state is the sum over every superpixel pixel of a
unary data term (Census photometric cost under the plane homography plus
the NLL of the implied inverse depths at t=0 and t=1) and, for every pair of
adjacent superpixels, a truncated depth/orientation smoothness term.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .depthprob import DepthDistMap
from .geometry import CameraIntrinsics, RigidMotion, homography_from_plane_motion, warp

BACKGROUND = "background"
OBJECT = "object"


@dataclass(frozen=True)
class WeightSet:
    theta0: float = 1.0  # photometric
    theta1: float = 0.4  # single-view depth NLL
    theta2: float = 0.1  # depth smoothness
    theta3: float = 5.0  # orientation smoothness
    tau0: float = 20.0
    tau1: float = 0.05
    tau2: float = 0.3

    def __post_init__(self):
        if min(self.theta0, self.theta1, self.theta2, self.theta3) < 0:
            raise ValueError("energy weights must be non-negative")
        if not (0 < self.tau0 <= 24 and self.tau1 > 0 and 0 < self.tau2 <= 1):
            raise ValueError("truncation caps out of range")

    def scaled(self, c: float) -> "WeightSet":
        return replace(self, theta0=self.theta0 * c, theta1=self.theta1 * c, theta2=self.theta2 * c, theta3=self.theta3 * c)


def _default_cross() -> WeightSet:
    base = WeightSet()
    return replace(base, theta2=base.theta2 / 2, theta3=base.theta3 / 2)


@dataclass(frozen=True)
class EnergyWeights:
    background: WeightSet = field(default_factory=WeightSet)
    object: WeightSet = field(default_factory=WeightSet)
    cross: WeightSet = field(default_factory=_default_cross)

    def for_body(self, kind: str) -> WeightSet:
        return self.background if kind == BACKGROUND else self.object

    def scaled(self, c: float) -> "EnergyWeights":
        return EnergyWeights(self.background.scaled(c), self.object.scaled(c), self.cross.scaled(c))

    def ablated(self, pho: bool = True, svd: bool = True, smooth: bool = True) -> "EnergyWeights":
        """Zero the photometric, single-view-depth or smoothness weights."""

        def cut(ws: WeightSet) -> WeightSet:
            return replace(
                ws,
                theta0=ws.theta0 if pho else 0.0,
                theta1=ws.theta1 if svd else 0.0,
                theta2=ws.theta2 if smooth else 0.0,
                theta3=ws.theta3 if smooth else 0.0,
            )

        return EnergyWeights(cut(self.background), cut(self.object), cut(self.cross))


@dataclass
class Superpixel:
    id: int
    pixels: np.ndarray  # (N, 2) int (u, v), row-major order
    body_id: int
    neighbors: dict = field(default_factory=dict)  # neighbor id -> (M, 2) shared boundary pixels

    @property
    def centroid(self) -> np.ndarray:
        return self.pixels.mean(axis=0)


@dataclass
class RigidBody:
    id: int
    kind: str
    motion: RigidMotion = field(default_factory=RigidMotion.identity)


@dataclass
class UnaryMaps:
    """Everything the per-pixel data term reads; immutable during optimization."""

    K: CameraIntrinsics
    census0: np.ndarray
    census1: np.ndarray
    prior0: DepthDistMap
    prior1: DepthDistMap
    cap_coverage: float = 0.999

    def __post_init__(self):
        shape = (self.K.height, self.K.width)
        for a in (self.census0, self.census1, self.prior0.weights[..., 0], self.prior1.weights[..., 0]):
            if a.shape != shape:
                raise ValueError(f"map shape {a.shape} does not match intrinsics {shape}")
        self.cap0 = np.ascontiguousarray(self.prior0.nll_cap(self.cap_coverage))
        self.cap1 = np.ascontiguousarray(self.prior1.nll_cap(self.cap_coverage))
        self.k0 = self.prior0.kernel_arrays()
        self.k1 = self.prior1.kernel_arrays()

    def terms(self, pixels, n, T: RigidMotion, tau0: float):
        """Per-pixel ``(photometric, nll_t0, nll_t1)`` arrays."""
        n = np.asarray(n, dtype=np.float64)
        H = homography_from_plane_motion(self.K, T, n)
        K = self.K
        return kernels.unary_terms(
            pixels[:, 0], pixels[:, 1], H, n, K.fx, K.fy, K.cx, K.cy,
            self.census0, self.census1, self.k0, self.k1, self.cap0, self.cap1, float(tau0),
        )


def unary_energy(p0, n, T: RigidMotion, maps: UnaryMaps, weights: WeightSet):
    """Weighted data term for pixels ``p0`` (``(2,)`` or ``(N, 2)``) on plane ``n`` moving by ``T``."""
    p0 = np.asarray(p0, dtype=np.int64)
    single = p0.ndim == 1
    pho, s0, s1 = maps.terms(np.atleast_2d(p0), n, T, weights.tau0)
    e = weights.theta0 * pho + weights.theta1 * (s0 + s1)
    return float(e[0]) if single else e


def region_unary(pixels, n, T, maps: UnaryMaps, weights: WeightSet) -> float:
    """Sum of the data term over one superpixel (the BP node potential)."""
    return float(np.sum(unary_energy(pixels, n, T, maps, weights)))


def pairwise_energy(n_k, n_l, boundary, weights: WeightSet, K: CameraIntrinsics) -> float:
    n_k = np.asarray(n_k, dtype=np.float64)
    n_l = np.asarray(n_l, dtype=np.float64)
    rays = K.rays(boundary[:, 0], boundary[:, 1])
    depth = float(np.sum(np.minimum(np.abs(rays @ n_k - rays @ n_l), weights.tau1)))
    cos = abs(float(n_k @ n_l)) / (np.linalg.norm(n_k) * np.linalg.norm(n_l))
    orient = min(1.0 - cos, weights.tau2)
    return weights.theta2 * depth + weights.theta3 * orient


def pairwise_table(particles_k, particles_l, boundary, weights: WeightSet, K: CameraIntrinsics) -> np.ndarray:
    """``pairwise_energy`` for every particle pair, shape ``(len(particles_k), len(particles_l))``."""
    rays = K.rays(boundary[:, 0], boundary[:, 1])
    dk = np.asarray(particles_k) @ rays.T
    dl = np.asarray(particles_l) @ rays.T
    depth = np.minimum(np.abs(dk[:, None, :] - dl[None, :, :]), weights.tau1).sum(axis=2)
    nk = np.linalg.norm(particles_k, axis=1)
    nl = np.linalg.norm(particles_l, axis=1)
    cos = np.abs(np.asarray(particles_k) @ np.asarray(particles_l).T) / (nk[:, None] * nl[None, :])
    orient = np.minimum(1.0 - cos, weights.tau2)
    return weights.theta2 * depth + weights.theta3 * orient


@dataclass
class SceneState:
    maps: UnaryMaps
    superpixels: list
    bodies: list
    planes: np.ndarray  # (S, 3) scaled normals indexed by superpixel id
    weights: EnergyWeights = field(default_factory=EnergyWeights)

    def __post_init__(self):
        self.planes = np.array(self.planes, dtype=np.float64).reshape(-1, 3)
        ids = {b.id for b in self.bodies}
        if len(self.planes) < 1 or len(self.planes) != len(self.superpixels):
            raise ValueError("need exactly one plane per superpixel")
        if sum(b.kind == BACKGROUND for b in self.bodies) != 1:
            raise ValueError("a scene has exactly one background body")
        for i, sp in enumerate(self.superpixels):
            if sp.id != i:
                raise ValueError("superpixel ids must be 0..S-1 in order")
            if sp.body_id not in ids:
                raise ValueError(f"superpixel {sp.id} references unknown body {sp.body_id}")
        self._body_index = {b.id: b for b in self.bodies}

    @property
    def K(self) -> CameraIntrinsics:
        return self.maps.K

    def body(self, body_id: int) -> RigidBody:
        return self._body_index[body_id]

    def unary_weights(self, sp: Superpixel) -> WeightSet:
        return self.weights.for_body(self.body(sp.body_id).kind)

    def pair_weights(self, k: int, l: int) -> WeightSet:
        bk = self.superpixels[k].body_id
        bl = self.superpixels[l].body_id
        if bk != bl:
            return self.weights.cross
        return self.weights.for_body(self.body(bk).kind)

    def edges(self) -> list[tuple[int, int]]:
        """Adjacent superpixel pairs ``(k, l)``, ``k < l``, sorted."""
        return sorted((sp.id, j) for sp in self.superpixels for j in sp.neighbors if sp.id < j)

    def superpixel_unary(self, i: int, n=None, motion: RigidMotion | None = None) -> float:
        sp = self.superpixels[i]
        n = self.planes[i] if n is None else n
        motion = self.body(sp.body_id).motion if motion is None else motion
        return region_unary(sp.pixels, n, motion, self.maps, self.unary_weights(sp))

    def edge_energy(self, k: int, l: int, nk=None, nl=None) -> float:
        nk = self.planes[k] if nk is None else nk
        nl = self.planes[l] if nl is None else nl
        return pairwise_energy(nk, nl, self.superpixels[k].neighbors[l], self.pair_weights(k, l), self.K)

    def copy(self) -> "SceneState":
        new = copy.copy(self)
        new.planes = self.planes.copy()
        new.bodies = [RigidBody(b.id, b.kind, b.motion) for b in self.bodies]
        new._body_index = {b.id: b for b in new.bodies}
        return new

    def with_weights(self, weights: EnergyWeights) -> "SceneState":
        new = self.copy()
        new.weights = weights
        return new


def sum_energy(unary_sums, pair_sums) -> float:
    """Fixed-order total so cached and recomputed energies agree bit for bit."""
    total = 0.0
    for u in unary_sums:
        total += u
    for p in pair_sums:
        total += p
    return float(total)


def energy_terms(state: SceneState):
    """``(unary per superpixel, pairwise per sorted edge)`` lists."""
    unary = [state.superpixel_unary(sp.id) for sp in state.superpixels]
    pairs = [state.edge_energy(k, l) for k, l in state.edges()]
    return unary, pairs


def total_energy(state: SceneState) -> float:
    return sum_energy(*energy_terms(state))


@dataclass
class SceneFlowField:
    d0: np.ndarray  # (H, W) inverse depth at t=0
    d1: np.ndarray  # (H, W) inverse depth at t=1 of the same surface point
    flow: np.ndarray  # (H, W, 2) (du, dv)
    valid: np.ndarray  # (H, W) bool

    @property
    def shape(self):
        return self.d0.shape


def extract_sceneflow(state: SceneState) -> SceneFlowField:
    K = state.K
    h, w = K.height, K.width
    d0 = np.full((h, w), np.nan)
    d1 = np.full((h, w), np.nan)
    flow = np.full((h, w, 2), np.nan)
    for sp in state.superpixels:
        n = state.planes[sp.id]
        T = state.body(sp.body_id).motion
        u, v = sp.pixels[:, 0], sp.pixels[:, 1]
        dd0 = K.rays(u, v) @ n
        H = homography_from_plane_motion(K, T, n)
        u1, v1, hw = warp(H, u, v)
        d0[v, u] = dd0
        with np.errstate(divide="ignore", invalid="ignore"):
            d1[v, u] = dd0 / hw
        flow[v, u, 0] = u1 - u
        flow[v, u, 1] = v1 - v
    with np.errstate(invalid="ignore"):
        valid = (d0 > 0) & (d1 > 0) & np.isfinite(flow).all(axis=2)
    d0[~valid] = np.nan
    d1[~valid] = np.nan
    flow[~valid] = np.nan
    return SceneFlowField(d0, d1, flow, valid)
