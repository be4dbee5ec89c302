"""Particle max-product belief propagation over the superpixel graph.

Each iteration resamples a particle set around every plane (the incumbent
is always particle 0), runs one forward/backward min-sum sweep over the
superpixel adjacency graph, commits the best particle per plane, then
updates each body's motion by exhaustive scoring of its own particle set.
Every commit is checked against the full energy and reverted if it would
increase it, so the committed energy trace never goes up.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import NotInitialized
from .scenemodel import SceneState, pairwise_table, region_unary, sum_energy

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class InferenceConfig:
    iterations: int = 10
    motion_particles: int = 5
    normal_particles: int = 10
    normal_std: float = 0.05  # relative to |n|
    rotation_std: float = 0.004  # radians
    translation_std: float = 0.03  # meters
    decay: float = 0.7
    sweeps: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1 or self.motion_particles < 1 or self.normal_particles < 1:
            raise ValueError("iterations and particle counts must be >= 1")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must lie in (0, 1]")


@dataclass
class TraceRow:
    iteration: int
    total: float
    unary: float
    pairwise: float


@dataclass
class OptimizeResult:
    state: SceneState
    trace: list = field(default_factory=list)  # TraceRow per committed state, row 0 = input


def _rng(seed: int, kind: int, idx: int, iteration: int):
    return np.random.default_rng([seed, kind, idx, iteration])


def plane_particles(n, count: int, std: float, rng) -> np.ndarray:
    """Incumbent plus ``count - 1`` isotropic Gaussian perturbations scaled by ``|n|``."""
    n = np.asarray(n, dtype=np.float64)
    out = np.empty((count, 3))
    out[0] = n
    if count > 1:
        out[1:] = n + rng.normal(0.0, std * np.linalg.norm(n), size=(count - 1, 3))
    return out


def motion_particles(motion, count: int, rot_std: float, trans_std: float, rng) -> list:
    out = [motion]
    for _ in range(count - 1):
        delta = np.concatenate([rng.normal(0.0, rot_std, 3), rng.normal(0.0, trans_std, 3)])
        out.append(motion.perturbed(delta))
    return out


def min_sum_bp(unaries: list, edges: list, tables: dict, sweeps: int = 1) -> list:
    """Min-sum BP on particle labels; returns the per-node argmin belief (ties -> lowest index).

    ``tables[(k, l)]`` is the ``(P_k, P_l)`` pairwise cost for ``k < l``.
    Messages are normalized to a minimum of zero.
    """
    n = len(unaries)
    nbrs = [[] for _ in range(n)]
    for k, l in edges:
        nbrs[k].append(l)
        nbrs[l].append(k)
    msg = {}
    for k, l in edges:
        msg[(k, l)] = np.zeros(len(unaries[l]))
        msg[(l, k)] = np.zeros(len(unaries[k]))

    def send(src, dst):
        h = unaries[src].copy()
        for j in nbrs[src]:
            if j != dst:
                h = h + msg[(j, src)]
        table = tables[(src, dst)] if src < dst else tables[(dst, src)].T
        m = (h[:, None] + table).min(axis=0)
        msg[(src, dst)] = m - m.min()

    for _ in range(sweeps):
        for i in range(n):
            for j in nbrs[i]:
                if j > i:
                    send(i, j)
        for i in reversed(range(n)):
            for j in nbrs[i]:
                if j < i:
                    send(i, j)
    labels = []
    for i in range(n):
        b = unaries[i].copy()
        for j in nbrs[i]:
            b = b + msg[(j, i)]
        labels.append(int(np.argmin(b)))
    return labels


class _Cache:
    """Per-superpixel unary sums and per-edge pairwise values of the committed state."""

    def __init__(self, state: SceneState):
        self.edges = state.edges()
        self.unary = [state.superpixel_unary(sp.id) for sp in state.superpixels]
        self.pair = [state.edge_energy(k, l) for k, l in self.edges]

    @property
    def total(self) -> float:
        return sum_energy(self.unary, self.pair)

    def row(self, iteration) -> TraceRow:
        return TraceRow(iteration, float(self.total), float(sum_energy(self.unary, [])), float(sum_energy([], self.pair)))


def _check_initialized(state: SceneState):
    K = state.K
    for sp in state.superpixels:
        c = sp.centroid
        if float(K.rays(c[0], c[1]) @ state.planes[sp.id]) <= 0:
            raise NotInitialized(f"plane of superpixel {sp.id} has non-positive depth at its centroid")


def _plane_step(state: SceneState, cache: _Cache, cfg: InferenceConfig, it: int, scale: float):
    S = len(state.superpixels)
    particles = []
    unaries = []
    for sp in state.superpixels:
        rng = _rng(cfg.seed, 0, sp.id, it)
        parts = plane_particles(state.planes[sp.id], cfg.normal_particles, cfg.normal_std * scale, rng)
        motion = state.body(sp.body_id).motion
        weights = state.unary_weights(sp)
        u = np.empty(len(parts))
        u[0] = cache.unary[sp.id]
        for a in range(1, len(parts)):
            u[a] = region_unary(sp.pixels, parts[a], motion, state.maps, weights)
        particles.append(parts)
        unaries.append(u)
    tables = {}
    for k, l in cache.edges:
        tables[(k, l)] = pairwise_table(
            particles[k], particles[l], state.superpixels[k].neighbors[l], state.pair_weights(k, l), state.K
        )
    labels = min_sum_bp(unaries, cache.edges, tables, cfg.sweeps)
    if all(a == 0 for a in labels):
        return

    old_total = cache.total
    old_planes = state.planes.copy()
    old_unary = list(cache.unary)
    old_pair = list(cache.pair)

    def apply(chosen):
        for i in range(S):
            state.planes[i] = particles[i][chosen[i]]
            cache.unary[i] = unaries[i][chosen[i]]
        cache.pair = [state.edge_energy(k, l) for k, l in cache.edges]

    apply(labels)
    if cache.total <= old_total:
        return
    # joint commit went uphill (loopy graph): accept node by node, ICM style
    state.planes[:] = old_planes
    cache.unary, cache.pair = old_unary, old_pair
    current = [0] * S
    adj = {i: [] for i in range(S)}
    for k, l in cache.edges:
        adj[k].append(l)
        adj[l].append(k)
    for i in range(S):
        a = labels[i]
        if a == 0:
            continue

        def local(lbl):
            e = unaries[i][lbl]
            for j in adj[i]:
                e += tables[(i, j)][lbl, current[j]] if i < j else tables[(j, i)][current[j], lbl]
            return e

        if local(a) <= local(current[i]):
            current[i] = a
    apply(current)
    if cache.total > old_total:
        state.planes[:] = old_planes
        cache.unary, cache.pair = old_unary, old_pair


def _motion_step(state: SceneState, cache: _Cache, cfg: InferenceConfig, it: int, scale: float):
    """Coordinate descent over each body's motion particles with planes held fixed."""
    for body in state.bodies:
        members = [sp for sp in state.superpixels if sp.body_id == body.id]
        if not members:
            continue
        rng = _rng(cfg.seed, 1, body.id, it)
        cands = motion_particles(body.motion, cfg.motion_particles, cfg.rotation_std * scale, cfg.translation_std * scale, rng)
        scores = [sum_energy([cache.unary[sp.id] for sp in members], [])]
        per_sp = [None]
        for T in cands[1:]:
            vals = [region_unary(sp.pixels, state.planes[sp.id], T, state.maps, state.unary_weights(sp)) for sp in members]
            per_sp.append(vals)
            scores.append(sum_energy(vals, []))
        best = int(np.argmin(scores))
        if best == 0:
            continue
        # pairwise terms do not depend on motion; the full-sum check guards summation order
        old_total = cache.total
        old_unary = list(cache.unary)
        for sp, val in zip(members, per_sp[best]):
            cache.unary[sp.id] = val
        if cache.total <= old_total:
            body.motion = cands[best]
        else:
            cache.unary = old_unary


def optimize(state: SceneState, cfg: InferenceConfig = InferenceConfig(), trace_path=None) -> OptimizeResult:
    """Refine planes and motions; the input state is not modified."""
    _check_initialized(state)
    state = state.copy()
    cache = _Cache(state)
    trace = [cache.row(0)]
    for it in range(1, cfg.iterations + 1):
        scale = cfg.decay ** (it - 1)
        _plane_step(state, cache, cfg, it, scale)
        _motion_step(state, cache, cfg, it, scale)
        trace.append(cache.row(it))
        log.debug("iteration %d energy %.6f", it, trace[-1].total)
    if trace_path is not None:
        write_trace(trace_path, trace)
    return OptimizeResult(state, trace)


def write_trace(path, trace) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "total", "unary", "pairwise"])
        for row in trace:
            w.writerow([row.iteration, repr(float(row.total)), repr(float(row.unary)), repr(float(row.pairwise))])
