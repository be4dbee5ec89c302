import math

import numpy as np
import pytest

from monosf.depthprob import DepthDistMap
from monosf.geometry import CameraIntrinsics, RigidMotion, homography_from_plane_motion, warp
from monosf.photometric import census_transform, photometric_cost
from monosf.scenemodel import (
    EnergyWeights,
    RigidBody,
    SceneState,
    Superpixel,
    UnaryMaps,
    WeightSet,
    energy_terms,
    extract_sceneflow,
    pairwise_energy,
    pairwise_table,
    sum_energy,
    total_energy,
    unary_energy,
)

from conftest import gt_state


def test_unary_energy_matches_independent_terms(small_scene):
    cfg, scene, prior0, prior1, _ = small_scene
    state = gt_state(cfg, scene, prior0, prior1)
    ws = WeightSet(theta0=0.7, theta1=0.3, tau0=12.0)
    sp = state.superpixels[2]
    n, T = state.planes[2], state.body(sp.body_id).motion
    pix = sp.pixels[::37]
    got = unary_energy(pix, n, T, state.maps, ws)
    H = homography_from_plane_motion(cfg.K, T, n)
    pho = photometric_cost(pix, H, state.maps.census0, state.maps.census1, 12.0)
    for i, (u, v) in enumerate(pix):
        d0 = cfg.K.rays(u, v) @ n
        u1, v1, w = warp(H, u, v)
        ru, rv = int(np.floor(u1 + 0.5)), int(np.floor(v1 + 0.5))
        s1 = prior1.nll(d0 / w, ru, rv) if 0 <= ru < 128 and 0 <= rv < 64 else state.maps.cap1[min(max(rv, 0), 63), min(max(ru, 0), 127)]
        ref = 0.7 * pho[i] + 0.3 * (prior0.nll(d0, u, v) + s1)
        assert got[i] == pytest.approx(float(ref), rel=1e-12)


def test_degenerate_depth_costs_caps(small_scene):
    cfg, scene, prior0, prior1, _ = small_scene
    state = gt_state(cfg, scene, prior0, prior1)
    ws = WeightSet(theta0=1.0, theta1=1.0, tau0=20.0)
    e = unary_energy(np.array([10, 10]), [0.0, 0.0, -0.1], RigidMotion.identity(), state.maps, ws)
    assert e == pytest.approx(20.0 + state.maps.cap0[10, 10] + state.maps.cap1[10, 10], rel=1e-12)


def test_photometric_term_vanishes_for_identical_frames():
    rng = np.random.default_rng(0)
    K = CameraIntrinsics(50.0, 50.0, 20.0, 10.0, 40, 20)
    img = rng.integers(0, 256, (20, 40), dtype=np.uint8)
    c = census_transform(img)
    prior = DepthDistMap(np.ones((20, 40, 1)), np.full((20, 40, 1), 0.1), np.full((20, 40, 1), math.log(0.01)))
    maps = UnaryMaps(K, c, c, prior, prior)
    pix = np.array([[u, v] for v in range(20) for u in range(40)])
    pho, s0, s1 = maps.terms(pix, [0.0, 0.0, 0.1], RigidMotion.identity(), 20.0)
    assert not pho.any()
    np.testing.assert_allclose(s0, math.log(0.01) + 0.5 * math.log(2 * math.pi), rtol=1e-12)
    np.testing.assert_array_equal(s0, s1)


def test_pairwise_known_values():
    K = CameraIntrinsics(100.0, 100.0, 50.0, 50.0, 100, 100)
    boundary = np.array([[50, 50], [51, 50]])
    ws = WeightSet(theta2=2.0, theta3=3.0, tau1=0.05, tau2=0.3)
    n = np.array([0.0, 0.0, 0.1])
    assert pairwise_energy(n, n, boundary, ws, K) == 0.0
    # fronto-parallel planes 0.02 apart in inverse depth: depth term only
    assert pairwise_energy(n, [0.0, 0.0, 0.12], boundary, ws, K) == pytest.approx(2.0 * 2 * 0.02)
    # perpendicular planes: orientation truncated at tau2, depth difference truncated at tau1
    e = pairwise_energy(n, [1.0, 0.0, 0.0], boundary, ws, K)
    assert e == pytest.approx(2.0 * 2 * 0.05 + 3.0 * 0.3)
    # opposite normals are the same orientation
    assert pairwise_energy(n, -n, boundary, ws, K) == pytest.approx(2.0 * 2 * 0.05)


def test_pairwise_table_matches_scalar():
    rng = np.random.default_rng(3)
    K = CameraIntrinsics(100.0, 100.0, 50.0, 50.0, 100, 100)
    boundary = rng.integers(0, 100, (9, 2))
    ws = WeightSet()
    pk = rng.normal(0, 0.05, (4, 3)) + [0, 0, 0.1]
    pl = rng.normal(0, 0.05, (3, 3)) + [0, 0, 0.1]
    table = pairwise_table(pk, pl, boundary, ws, K)
    for a in range(4):
        for b in range(3):
            assert table[a, b] == pytest.approx(pairwise_energy(pk[a], pl[b], boundary, ws, K), rel=1e-12, abs=1e-15)


def test_total_energy_and_terms(small_scene):
    cfg, scene, prior0, prior1, _ = small_scene
    state = gt_state(cfg, scene, prior0, prior1)
    unary, pairs = energy_terms(state)
    assert len(unary) == 6 and len(pairs) == len(state.edges())
    assert total_energy(state) == sum_energy(unary, pairs)
    assert total_energy(state) == pytest.approx(sum(unary) + sum(pairs), rel=1e-12)
    # the true scene scores better than a scene with every plane pushed 10% closer
    worse = state.copy()
    worse.planes *= 1.1
    assert total_energy(worse) > total_energy(state)


def test_weights_for_cross_and_ablation(small_scene):
    cfg, scene, prior0, prior1, _ = small_scene
    state = gt_state(cfg, scene, prior0, prior1)
    assert state.pair_weights(0, 4) == state.weights.cross
    assert state.pair_weights(4, 5) == state.weights.object
    assert state.pair_weights(0, 1) == state.weights.background
    zero = state.with_weights(EnergyWeights().ablated(False, False, False))
    assert total_energy(zero) == 0.0
    only_pho = EnergyWeights().ablated(True, False, False)
    assert only_pho.background.theta1 == 0.0 and only_pho.background.theta0 == 1.0
    # cross defaults to half the smoothness weights
    assert EnergyWeights().cross.theta3 == WeightSet().theta3 / 2


def test_extract_sceneflow_reproduces_ground_truth(small_scene):
    cfg, scene, prior0, prior1, _ = small_scene
    field = extract_sceneflow(gt_state(cfg, scene, prior0, prior1))
    assert field.valid.all()
    np.testing.assert_allclose(field.d0, scene.gt.d0, rtol=1e-12)
    np.testing.assert_allclose(field.d1, scene.gt.d1, rtol=1e-12)
    np.testing.assert_allclose(field.flow, scene.gt.flow, atol=1e-9)


def test_state_validation(small_scene):
    cfg, scene, prior0, prior1, _ = small_scene
    state = gt_state(cfg, scene, prior0, prior1)
    with pytest.raises(ValueError):
        SceneState(state.maps, state.superpixels, state.bodies, state.planes[:-1])
    with pytest.raises(ValueError):
        SceneState(state.maps, state.superpixels, [RigidBody(0, "object"), RigidBody(1, "object")], state.planes)
    bad = [Superpixel(0, np.array([[0, 0]]), 7)]
    with pytest.raises(ValueError):
        SceneState(state.maps, bad, state.bodies, [[0, 0, 0.1]])
    with pytest.raises(ValueError):
        WeightSet(tau0=25.0)
    with pytest.raises(ValueError):
        WeightSet(theta1=-1.0)


def test_copy_is_independent(small_scene):
    cfg, scene, prior0, prior1, _ = small_scene
    state = gt_state(cfg, scene, prior0, prior1)
    c = state.copy()
    c.planes[0] *= 2
    c.bodies[1].motion = RigidMotion.identity()
    assert not np.array_equal(c.planes[0], state.planes[0])
    np.testing.assert_array_equal(state.body(1).motion.translation, cfg.bodies[1].motion.translation)
