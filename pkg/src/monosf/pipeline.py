"""End-to-end estimation: pair instances, estimate motions, segment, fit planes, optimize."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .depthprob import DepthDistMap, RecalibMap
from .errors import InsufficientMatches, SolverDiverged
from .geometry import CameraIntrinsics
from .inference import OptimizeResult, optimize
from .init import (
    MIN_MATCHES,
    body_matches,
    init_background_motion,
    init_object_motion,
    init_planes,
    pair_instances,
    superpixelize,
)
from .photometric import census_transform
from .scenemodel import RigidBody, SceneFlowField, SceneState, UnaryMaps, extract_sceneflow

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Ablation:
    pho: bool = True
    svd: bool = True
    smooth: bool = True
    prob_depth: bool = True
    recalib: bool = True


def prepare_priors(prior0: DepthDistMap, prior1: DepthDistMap, recalib: RecalibMap | None, ablation: Ablation):
    if recalib is not None and ablation.recalib:
        prior0, prior1 = prior0.recalibrated(recalib), prior1.recalibrated(recalib)
    if not ablation.prob_depth:
        prior0, prior1 = prior0.as_fixed_gaussian(), prior1.as_fixed_gaussian()
    return prior0, prior1


def initial_state(image0, image1, prior0, prior1, mask0, mask1, matches, K: CameraIntrinsics, cfg: RunConfig) -> SceneState:
    matches = np.asarray(matches, dtype=np.float64).reshape(-1, 4)
    links = pair_instances(mask0, mask1, matches, cfg.init.vote_threshold)
    bg_matches = body_matches(links[0], mask0, mask1, matches)
    if len(bg_matches) < MIN_MATCHES:
        raise InsufficientMatches(f"background has {len(bg_matches)} matches, need {MIN_MATCHES}")
    bg = init_background_motion(bg_matches, prior0, prior1, K, cfg.init).motion
    bodies = [RigidBody(0, links[0].kind, bg)]
    for link in links[1:]:
        motion = bg
        if link.label1 is not None:
            m = body_matches(link, mask0, mask1, matches)
            try:
                motion = init_object_motion(m, prior0, prior1, K, cfg.init, bg)
            except (InsufficientMatches, SolverDiverged) as exc:
                log.info("object %d keeps background motion: %s", link.label0, exc)
        bodies.append(RigidBody(link.body_id, link.kind, motion))
    body_of_label = {link.label0: link.body_id for link in links}
    sps = superpixelize(image0, mask0, cfg.superpixels)
    for sp in sps:
        u, v = sp.pixels[0]
        sp.body_id = body_of_label[int(mask0[v, u])]
    planes = init_planes(sps, prior0, K)
    maps = UnaryMaps(K, census_transform(image0), census_transform(image1), prior0, prior1)
    return SceneState(maps, sps, bodies, planes, cfg.weights)


@dataclass
class Estimate:
    initial: SceneState
    result: OptimizeResult
    flow: SceneFlowField


def estimate(image0, image1, prior0, prior1, mask0, mask1, matches, cfg: RunConfig,
             recalib: RecalibMap | None = None, ablation: Ablation = Ablation(), trace_path=None) -> Estimate:
    h, w = np.shape(image0)
    K = cfg.intrinsics(w, h)
    prior0, prior1 = prepare_priors(prior0, prior1, recalib, ablation)
    state = initial_state(image0, image1, prior0, prior1, mask0, mask1, matches, K, cfg)
    state = state.with_weights(cfg.weights.ablated(ablation.pho, ablation.svd, ablation.smooth))
    result = optimize(state, cfg.inference, trace_path)
    return Estimate(state, result, extract_sceneflow(result.state))
