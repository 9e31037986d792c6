"""Rigid 3-D transforms and planar in-grasp poses.

A grasped object's pose is a planar offset [x, z, theta] of its body frame
from the nominal grasp pose, expressed in that arm's end-effector frame: the
offset lives in the end-effector X-Z plane and theta rotates within it, while
the Y (grasp closure) axis carries no offset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = math.remainder(float(theta), TWO_PI)
    if w <= -math.pi:
        w += TWO_PI
    return w


@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid transform (R, p): x -> R @ x + p."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        p = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9) or np.linalg.det(R) < 0:
            raise ValueError("rotation must be a proper orthonormal matrix")
        R.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", p)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def _trusted(cls, R: np.ndarray, p: np.ndarray) -> "RigidTransform":
        """Skip validation for transforms built from already-valid parts."""
        obj = object.__new__(cls)
        object.__setattr__(obj, "rotation", R)
        object.__setattr__(obj, "translation", p)
        return obj

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one point or an (..., 3) array of points."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation

    def rotate(self, vectors: np.ndarray) -> np.ndarray:
        return np.asarray(vectors, dtype=float) @ self.rotation.T

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self ∘ other: apply `other` first, then `self`."""
        return RigidTransform._trusted(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return self.compose(other)

    def inverse(self) -> "RigidTransform":
        return RigidTransform._trusted(self.rotation.T, -(self.rotation.T @ self.translation))


@dataclass(frozen=True)
class Pose2:
    """Planar in-grasp pose [x, z, theta] in the end-effector X-Z plane."""

    x: float = 0.0
    z: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        for v in (self.x, self.z, self.theta):
            if not math.isfinite(v):
                raise ValueError("pose components must be finite")
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "z", float(self.z))
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    @classmethod
    def from_array(cls, a) -> "Pose2":
        x, z, theta = np.asarray(a, dtype=float).reshape(3)
        return cls(x, z, theta)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.z, self.theta])

    def as_transform(self) -> RigidTransform:
        """Embed into 3-D: standard 2-D rotation on (x, z), identity on y."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        R = np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])
        return RigidTransform._trusted(R, np.array([self.x, 0.0, self.z]))

    @classmethod
    def from_transform(cls, T: RigidTransform) -> "Pose2":
        R, p = T.rotation, T.translation
        planar = (
            abs(p[1]) < 1e-9
            and abs(R[1, 1] - 1.0) < 1e-9
            and abs(R[0, 1]) < 1e-9
            and abs(R[2, 1]) < 1e-9
        )
        if not planar:
            raise ValueError("transform is not a planar X-Z pose")
        return cls(p[0], p[2], math.atan2(R[2, 0], R[0, 0]))

    def compose(self, other: "Pose2") -> "Pose2":
        return Pose2.from_transform(self.as_transform() @ other.as_transform())

    def inverse(self) -> "Pose2":
        return Pose2.from_transform(self.as_transform().inverse())


def poses_to_matrices(poses: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized Pose2 -> (R (n,3,3), p (n,3)) for an (n, 3) pose array."""
    poses = np.asarray(poses, dtype=float).reshape(-1, 3)
    c, s = np.cos(poses[:, 2]), np.sin(poses[:, 2])
    n = len(poses)
    R = np.zeros((n, 3, 3))
    R[:, 0, 0] = c
    R[:, 0, 2] = -s
    R[:, 1, 1] = 1.0
    R[:, 2, 0] = s
    R[:, 2, 2] = c
    p = np.zeros((n, 3))
    p[:, 0] = poses[:, 0]
    p[:, 2] = poses[:, 1]
    return R, p


def apply_poses(poses: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Apply (n, 3) planar poses to (n, m, 3) body points -> (n, m, 3)."""
    R, p = poses_to_matrices(poses)
    return np.einsum("nij,nmj->nmi", R, points) + p[:, None, :]


def rotate_by_poses(poses: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Rotate (n, m, 3) body vectors by (n, 3) planar poses."""
    R, _ = poses_to_matrices(poses)
    return np.einsum("nij,nmj->nmi", R, vectors)


def invert_poses(poses: np.ndarray) -> np.ndarray:
    """Vectorized Pose2 inverse for an (n, 3) pose array."""
    poses = np.asarray(poses, dtype=float).reshape(-1, 3)
    c, s = np.cos(poses[:, 2]), np.sin(poses[:, 2])
    out = np.empty_like(poses)
    out[:, 0] = -(c * poses[:, 0] + s * poses[:, 1])
    out[:, 1] = -(-s * poses[:, 0] + c * poses[:, 1])
    out[:, 2] = -poses[:, 2]
    return out
