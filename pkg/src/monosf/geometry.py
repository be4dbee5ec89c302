"""Pinhole camera, rigid motions, scaled plane normals and plane-induced homographies.

Conventions
-----------
* A rigid motion maps frame-0 camera coordinates to frame-1 camera
  coordinates: ``X1 = R @ X0 + t``.
* A plane is stored as its scaled normal ``n`` with ``n @ X = 1`` for every
  point ``X`` on it, so the inverse depth of a pixel is linear in ``n``.
* Pixels are ``(u, v)`` with ``u`` along the image width.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import BehindCamera, NonPositiveDepth


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def inverse(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    def rays(self, u, v) -> np.ndarray:
        """Normalized rays ``K^-1 (u, v, 1)`` as an ``(N, 3)`` array (z == 1)."""
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        return np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u)], axis=-1)


def so3_exp(omega) -> np.ndarray:
    return Rotation.from_rotvec(np.asarray(omega, dtype=np.float64)).as_matrix()


def so3_log(R) -> np.ndarray:
    return Rotation.from_matrix(R).as_rotvec()


def skew(w) -> np.ndarray:
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


@dataclass(frozen=True)
class RigidMotion:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidMotion":
        return cls()

    @classmethod
    def from_axis_angle(cls, omega, translation) -> "RigidMotion":
        return cls(so3_exp(omega), translation)

    @property
    def axis_angle(self) -> np.ndarray:
        return so3_log(self.rotation)

    def apply(self, X) -> np.ndarray:
        """Transform points given as ``(3,)`` or ``(N, 3)``."""
        return np.asarray(X) @ self.rotation.T + self.translation

    def compose(self, first: "RigidMotion") -> "RigidMotion":
        """``self ∘ first``: apply ``first``, then ``self``."""
        return RigidMotion(self.rotation @ first.rotation, self.rotation @ first.translation + self.translation)

    def inverse(self) -> "RigidMotion":
        Rt = self.rotation.T
        return RigidMotion(Rt, -Rt @ self.translation)

    def perturbed(self, delta) -> "RigidMotion":
        """Left-compose a 6-vector tangent step (axis-angle, translation)."""
        delta = np.asarray(delta, dtype=np.float64)
        return RigidMotion(so3_exp(delta[:3]) @ self.rotation, self.translation + delta[3:])

    def is_valid(self, tol: float = 1e-9) -> bool:
        R = self.rotation
        return bool(np.allclose(R.T @ R, np.eye(3), atol=tol) and abs(np.linalg.det(R) - 1.0) < tol)


def homography_from_plane_motion(K: CameraIntrinsics, T: RigidMotion, n) -> np.ndarray:
    """Homography transferring frame-0 pixels on plane ``n`` to frame 1 under ``T``.

    On the plane ``n @ X0 = 1`` so ``X1 = R X0 + t (n @ X0) = (R + t n^T) X0``.
    """
    n = np.asarray(n, dtype=np.float64)
    return K.matrix @ (T.rotation + np.outer(T.translation, n)) @ K.inverse


def warp(H, u, v):
    """Apply ``H`` to pixels; returns ``(u1, v1, w)`` with ``w`` the homogeneous scale."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    x = H[0, 0] * u + H[0, 1] * v + H[0, 2]
    y = H[1, 0] * u + H[1, 1] * v + H[1, 2]
    w = H[2, 0] * u + H[2, 1] * v + H[2, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        return x / w, y / w, w


def depth_at_t0(p0, n, K: CameraIntrinsics):
    """Inverse depth ``n^T K^-1 p0``; may be non-positive for invalid geometry."""
    p0 = np.asarray(p0, dtype=np.float64)
    return K.rays(p0[..., 0], p0[..., 1]) @ np.asarray(n, dtype=np.float64)


def backproject(K: CameraIntrinsics, p0, n) -> np.ndarray:
    p0 = np.asarray(p0, dtype=np.float64)
    ray = K.rays(p0[..., 0], p0[..., 1])
    d0 = ray @ np.asarray(n, dtype=np.float64)
    if np.any(d0 <= 0):
        raise NonPositiveDepth("pixel does not see the plane in front of the camera")
    return ray / np.expand_dims(d0, -1)


def project(K: CameraIntrinsics, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    z = X[..., 2]
    if np.any(z <= 0):
        raise BehindCamera("point has non-positive z")
    return np.stack([K.fx * X[..., 0] / z + K.cx, K.fy * X[..., 1] / z + K.cy], axis=-1)


def depth_at_t1(p0, n, T: RigidMotion, K: CameraIntrinsics):
    X1 = T.apply(backproject(K, p0, n))
    z1 = X1[..., 2]
    if np.any(z1 <= 0):
        raise NonPositiveDepth("transferred point has non-positive depth")
    return 1.0 / z1
