import numpy as np
import pytest
from hypothesis import given, strategies as st

from monosf.errors import BehindCamera, NonPositiveDepth
from monosf.geometry import (
    CameraIntrinsics,
    RigidMotion,
    backproject,
    depth_at_t0,
    depth_at_t1,
    homography_from_plane_motion,
    project,
    skew,
    so3_exp,
    so3_log,
    warp,
)

from conftest import random_motion

vec3 = st.lists(st.floats(-0.5, 0.5), min_size=3, max_size=3).map(np.array)


def transfer_3d(K, T, n, p0):
    """Reference: backproject onto the plane by ray/plane intersection, move, project."""
    ray = np.linalg.solve(K.matrix, [p0[0], p0[1], 1.0])
    X0 = ray / (n @ ray)
    X1 = T.rotation @ X0 + T.translation
    x = K.matrix @ X1
    return x[:2] / x[2], 1.0 / X1[2]


def test_identity_motion_gives_identity_homography(K_small):
    H = homography_from_plane_motion(K_small, RigidMotion.identity(), [0.01, -0.02, 0.1])
    np.testing.assert_allclose(H, np.eye(3), atol=1e-15)


def test_forward_translation_scales_about_principal_point(K_small):
    # fronto-parallel plane at Z = 10 moving 1 m closer: magnification 10/9
    T = RigidMotion(np.eye(3), [0.0, 0.0, -1.0])
    H = homography_from_plane_motion(K_small, T, [0.0, 0.0, 0.1])
    u1, v1, _ = warp(H, K_small.cx + 9.0, K_small.cy - 18.0)
    assert u1 == pytest.approx(K_small.cx + 10.0, abs=1e-12)
    assert v1 == pytest.approx(K_small.cy - 20.0, abs=1e-12)


def test_homography_matches_3d_transfer_random():
    rng = np.random.default_rng(11)
    for _ in range(200):
        K = CameraIntrinsics(rng.uniform(100, 800), rng.uniform(100, 800), rng.uniform(100, 300), rng.uniform(50, 150), 400, 200)
        T = random_motion(rng, 0.1, 1.0)
        normal = rng.normal(size=3)
        normal[2] = abs(normal[2]) + 0.5
        n = normal / rng.uniform(5.0, 40.0)
        p0 = np.array([rng.uniform(0, 400), rng.uniform(0, 200)])
        if n @ np.linalg.solve(K.matrix, [p0[0], p0[1], 1.0]) <= 0:
            continue
        ref, d1_ref = transfer_3d(K, T, n, p0)
        if 1.0 / d1_ref <= 0:
            continue
        u1, v1, _ = warp(homography_from_plane_motion(K, T, n), p0[0], p0[1])
        np.testing.assert_allclose([u1, v1], ref, atol=1e-6)
        assert depth_at_t1(p0, n, T, K) == pytest.approx(d1_ref, rel=1e-12)


def test_depth_at_t0_is_linear_in_normal(K_small):
    p = np.array([[3.0, 7.0], [100.0, 50.0]])
    n1, n2 = np.array([0.01, 0.02, 0.05]), np.array([-0.01, 0.0, 0.03])
    lhs = depth_at_t0(p, 2.0 * n1 + 3.0 * n2, K_small)
    np.testing.assert_allclose(lhs, 2.0 * depth_at_t0(p, n1, K_small) + 3.0 * depth_at_t0(p, n2, K_small), rtol=1e-13)


def test_backproject_lies_on_plane_and_projects_back(K_small):
    n = np.array([0.002, 0.05, 0.04])
    p = np.array([[10.0, 40.0], [64.0, 32.0], [120.0, 60.0]])
    X = backproject(K_small, p, n)
    np.testing.assert_allclose(X @ n, 1.0, rtol=1e-14)
    np.testing.assert_allclose(project(K_small, X), p, atol=1e-12)


def test_errors_on_invalid_geometry(K_small):
    with pytest.raises(NonPositiveDepth):
        backproject(K_small, [64.0, 32.0], [0.0, 0.0, -0.1])
    with pytest.raises(BehindCamera):
        project(K_small, [0.0, 0.0, -1.0])
    with pytest.raises(NonPositiveDepth):
        depth_at_t1([64.0, 32.0], [0.0, 0.0, 0.1], RigidMotion(np.eye(3), [0, 0, -20.0]), K_small)


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(0.0, 1.0, 1.0, 1.0, 10, 10)
    with pytest.raises(ValueError):
        CameraIntrinsics(1.0, 1.0, 12.0, 1.0, 10, 10)
    K = CameraIntrinsics(200.0, 210.0, 50.0, 40.0, 100, 80)
    np.testing.assert_allclose(K.inverse @ K.matrix, np.eye(3), atol=1e-15)


@given(vec3)
def test_so3_exp_log_round_trip(w):
    np.testing.assert_allclose(so3_log(so3_exp(w)), w, atol=1e-12)


@given(vec3)
def test_so3_exp_first_order_matches_skew(w):
    eps = 1e-7
    np.testing.assert_allclose((so3_exp(eps * w) - np.eye(3)) / eps, skew(w), atol=1e-6)


@given(vec3, vec3, vec3, vec3)
def test_motion_compose_and_inverse(w1, t1, w2, t2):
    A = RigidMotion.from_axis_angle(w1, t1)
    B = RigidMotion.from_axis_angle(w2, t2)
    X = np.array([[0.3, -1.0, 5.0], [2.0, 0.1, 9.0]])
    np.testing.assert_allclose(A.compose(B).apply(X), A.apply(B.apply(X)), atol=1e-12)
    np.testing.assert_allclose(A.inverse().apply(A.apply(X)), X, atol=1e-12)
    assert A.compose(B).is_valid()


def test_perturbed_left_composes():
    T = RigidMotion.from_axis_angle([0.1, 0.0, 0.2], [1.0, 2.0, 3.0])
    delta = np.array([0.01, -0.02, 0.03, 0.1, 0.2, 0.3])
    P = T.perturbed(delta)
    np.testing.assert_allclose(P.rotation, so3_exp(delta[:3]) @ T.rotation, atol=1e-15)
    np.testing.assert_allclose(P.translation, T.translation + delta[3:], atol=1e-15)


def test_motion_is_immutable():
    T = RigidMotion.identity()
    with pytest.raises(ValueError):
        T.rotation[0, 0] = 2.0
