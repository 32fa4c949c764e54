"""Rotations, rigid transforms and the pinhole camera model.

Conventions used throughout the package:

* Quaternions are stored ``(w, x, y, z)`` and kept canonical (``w >= 0``).
* A camera pose is the world-to-camera extrinsic ``[R | t]``, so a world point
  ``X`` lands in the camera frame at ``R @ X + t``.
* Camera frames follow the OpenCV convention (x right, y down, z forward).
* Missing depth is represented by ``NaN``; zero and negative depths are never
  used as sentinels.

Batched helpers (``rotvec_to_matrix``, ``right_jacobian`` ...) accept arrays
with arbitrary leading dimensions and are what the optimizers use. The small
value classes (`Rotation3`, `RigidTransform`) are convenient for scalar work.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

_EPS = 1e-12


class BehindCameraError(ValueError):
    """Raised when a point does not lie in front of the camera."""


# ---------------------------------------------------------------------------
# batched so(3) helpers
# ---------------------------------------------------------------------------

def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix ``[v]x`` for ``(..., 3)`` input."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def _angle_coeffs(theta: np.ndarray):
    """sin(t)/t, (1-cos t)/t^2 and (t-sin t)/t^3 with small-angle series."""
    small = theta < 1e-4
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    a = np.where(small, 1.0 - t2 / 6.0 + t2 * t2 / 120.0, np.sin(t) / t)
    b = np.where(small, 0.5 - t2 / 24.0 + t2 * t2 / 720.0, (1.0 - np.cos(t)) / (t * t))
    c = np.where(small, 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0, (t - np.sin(t)) / (t * t * t))
    return a, b, c


def rotvec_to_matrix(rv: np.ndarray) -> np.ndarray:
    """Rodrigues formula, ``(..., 3) -> (..., 3, 3)``."""
    rv = np.asarray(rv, dtype=float)
    theta = np.linalg.norm(rv, axis=-1)
    a, b, _ = _angle_coeffs(theta)
    K = skew(rv)
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye + a[..., None, None] * K + b[..., None, None] * (K @ K)


def right_jacobian(rv: np.ndarray) -> np.ndarray:
    """Right Jacobian of SO(3), ``d exp(r + d) ~ exp(r) exp(J_r(r) d)``."""
    rv = np.asarray(rv, dtype=float)
    theta = np.linalg.norm(rv, axis=-1)
    _, b, c = _angle_coeffs(theta)
    K = skew(rv)
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye - b[..., None, None] * K + c[..., None, None] * (K @ K)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    out = np.empty(q.shape[:-1] + (3, 3))
    out[..., 0, 0] = 1 - 2 * (y * y + z * z)
    out[..., 0, 1] = 2 * (x * y - w * z)
    out[..., 0, 2] = 2 * (x * z + w * y)
    out[..., 1, 0] = 2 * (x * y + w * z)
    out[..., 1, 1] = 1 - 2 * (x * x + z * z)
    out[..., 1, 2] = 2 * (y * z - w * x)
    out[..., 2, 0] = 2 * (x * z - w * y)
    out[..., 2, 1] = 2 * (y * z + w * x)
    out[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return out


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Shepperd's method; output is canonical (``w >= 0``)."""
    R = np.asarray(R, dtype=float)
    flat = R.reshape(-1, 3, 3)
    out = np.empty((flat.shape[0], 4))
    for n, m in enumerate(flat):
        tr = m[0, 0] + m[1, 1] + m[2, 2]
        if tr > 0:
            s = 2.0 * np.sqrt(tr + 1.0)
            q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
            s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
            q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        elif m[1, 1] > m[2, 2]:
            s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
            q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        else:
            s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
            q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        out[n] = q
    out /= np.linalg.norm(out, axis=-1, keepdims=True)
    out = canonical_quat(out)
    return out.reshape(R.shape[:-2] + (4,))


def canonical_quat(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    sign = np.where(q[..., :1] < 0, -1.0, 1.0)
    return q * sign


def matrix_to_rotvec(R: np.ndarray) -> np.ndarray:
    q = matrix_to_quat(R)
    return quat_to_rotvec(q)


def quat_to_rotvec(q: np.ndarray) -> np.ndarray:
    q = canonical_quat(q)
    w = np.clip(q[..., 0], -1.0, 1.0)
    v = q[..., 1:]
    s = np.linalg.norm(v, axis=-1)
    angle = 2.0 * np.arctan2(s, w)
    small = s < 1e-12
    scale = np.where(small, 2.0 / np.where(small, np.maximum(w, _EPS), 1.0), angle / np.where(small, 1.0, s))
    return v * scale[..., None]


def rotvec_to_quat(rv: np.ndarray) -> np.ndarray:
    rv = np.asarray(rv, dtype=float)
    theta = np.linalg.norm(rv, axis=-1)
    half = 0.5 * theta
    small = theta < 1e-8
    k = np.where(small, 0.5 - theta * theta / 48.0, np.sin(half) / np.where(small, 1.0, theta))
    q = np.concatenate([np.cos(half)[..., None], rv * k[..., None]], axis=-1)
    return canonical_quat(q)


def rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_angle(R: np.ndarray) -> np.ndarray:
    """Geodesic angle of a rotation matrix (radians)."""
    tr = np.trace(np.asarray(R), axis1=-2, axis2=-1)
    return np.arccos(np.clip(0.5 * (tr - 1.0), -1.0, 1.0))


def yaw_of(R: np.ndarray) -> np.ndarray:
    """Heading of the body x axis in the world xy plane."""
    R = np.asarray(R)
    return np.arctan2(R[..., 1, 0], R[..., 0, 0])


def euler_zyx_to_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    return rot_z(yaw) @ rot_y(pitch) @ rot_x(roll)


def matrix_to_euler_zyx(R: np.ndarray) -> tuple[float, float, float]:
    """Inverse of `euler_zyx_to_matrix`, returns (roll, pitch, yaw)."""
    pitch = float(np.arcsin(np.clip(-R[2, 0], -1.0, 1.0)))
    roll = float(np.arctan2(R[2, 1], R[2, 2]))
    yaw = float(np.arctan2(R[1, 0], R[0, 0]))
    return roll, pitch, yaw


def wrap_angle(a):
    return (np.asarray(a) + np.pi) % (2.0 * np.pi) - np.pi


# ---------------------------------------------------------------------------
# value types
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Rotation3:
    """Element of SO(3) stored as a canonical unit quaternion ``(w, x, y, z)``."""

    quat: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        q = np.asarray(self.quat, dtype=float).reshape(4)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n < _EPS:
            raise ValueError("quaternion must be finite and non-zero")
        q = canonical_quat(q / n)
        q.setflags(write=False)
        object.__setattr__(self, "quat", q)

    @classmethod
    def identity(cls) -> "Rotation3":
        return cls()

    @classmethod
    def from_matrix(cls, R) -> "Rotation3":
        return cls(matrix_to_quat(np.asarray(R, dtype=float)))

    @classmethod
    def from_rotvec(cls, rv) -> "Rotation3":
        return cls(rotvec_to_quat(np.asarray(rv, dtype=float)))

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> "Rotation3":
        axis = np.asarray(axis, dtype=float)
        return cls.from_rotvec(axis / np.linalg.norm(axis) * angle)

    def as_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.quat)

    def as_rotvec(self) -> np.ndarray:
        return quat_to_rotvec(self.quat)

    def inverse(self) -> "Rotation3":
        w, x, y, z = self.quat
        return Rotation3(np.array([w, -x, -y, -z]))

    def __matmul__(self, other: "Rotation3") -> "Rotation3":
        w1, x1, y1, z1 = self.quat
        w2, x2, y2, z2 = other.quat
        return Rotation3(np.array([
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]))

    def rotate(self, v) -> np.ndarray:
        return np.asarray(v, dtype=float) @ self.as_matrix().T

    def angle_to(self, other: "Rotation3") -> float:
        d = abs(float(np.dot(self.quat, other.quat)))
        return 2.0 * float(np.arccos(min(1.0, d)))

    def __repr__(self) -> str:
        return f"Rotation3(quat={np.array2string(self.quat, precision=6)})"


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """``x -> R x + t``."""

    rotation: Rotation3 = field(default_factory=Rotation3)
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=float).reshape(3).copy()
        t.setflags(write=False)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_matrix(cls, M) -> "RigidTransform":
        M = np.asarray(M, dtype=float)
        return cls(Rotation3.from_matrix(M[:3, :3]), M[:3, 3])

    @classmethod
    def from_rt(cls, R, t) -> "RigidTransform":
        return cls(Rotation3.from_matrix(R), t)

    def as_matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation.as_matrix()
        M[:3, 3] = self.translation
        return M

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``(self ∘ other)(x) = self(other(x))``."""
        R = self.rotation.as_matrix()
        return RigidTransform(self.rotation @ other.rotation, R @ other.translation + self.translation)

    __matmul__ = compose

    def inverse(self) -> "RigidTransform":
        inv = self.rotation.inverse()
        return RigidTransform(inv, -(inv.as_matrix() @ self.translation))

    def apply(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.rotation.as_matrix().T + self.translation

    __call__ = apply


@dataclass(frozen=True)
class PinholeCamera:
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
            raise ValueError("principal point must lie inside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def K_inv(self) -> np.ndarray:
        return np.linalg.inv(self.K)


@dataclass(frozen=True, eq=False)
class DepthImage:
    """Per-pixel depth in meters (or SfM units); ``NaN`` marks invalid pixels."""

    depth: np.ndarray

    def __post_init__(self):
        d = np.array(self.depth, dtype=float)
        if d.ndim != 2:
            raise ValueError("depth image must be 2-D")
        valid = np.isfinite(d)
        if np.any(d[valid] <= 0):
            raise ValueError("valid depths must be strictly positive")
        d[~valid] = np.nan
        d.setflags(write=False)
        object.__setattr__(self, "depth", d)

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.depth)

    def at(self, u: float, v: float) -> float | None:
        """Nearest-pixel lookup at image coordinates (u = column, v = row)."""
        col, row = int(round(u)), int(round(v))
        h, w = self.depth.shape
        if not (0 <= row < h and 0 <= col < w):
            return None
        d = self.depth[row, col]
        return None if not np.isfinite(d) else float(d)


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------

def _pose_rt(pose) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(pose, RigidTransform):
        return pose.rotation.as_matrix(), pose.translation
    R, t = pose
    return np.asarray(R, dtype=float), np.asarray(t, dtype=float)


def project(camera: PinholeCamera, pose, point_world) -> np.ndarray:
    """Project one world point to pixel coordinates.

    Raises `BehindCameraError` when the camera-frame depth is at most 1e-6.
    """
    R, t = _pose_rt(pose)
    u, v, w = R @ np.asarray(point_world, dtype=float) + t
    if w <= 1e-6:
        raise BehindCameraError(f"point has camera depth {w:.3g}")
    return np.array([camera.fx * u / w + camera.cx, camera.fy * v / w + camera.cy])


def project_points(camera: PinholeCamera, R: np.ndarray, t: np.ndarray, points: np.ndarray,
                   check: bool = True) -> np.ndarray:
    """Vectorized projection of ``(..., 3)`` world points with one pose."""
    pc = np.asarray(points, dtype=float) @ np.asarray(R).T + np.asarray(t)
    w = pc[..., 2]
    if check and np.any(w <= 1e-6):
        raise BehindCameraError(f"{int(np.sum(w <= 1e-6))} point(s) behind the camera")
    return np.stack([camera.fx * pc[..., 0] / w + camera.cx, camera.fy * pc[..., 1] / w + camera.cy], axis=-1)


def unproject_scaled(camera: PinholeCamera, pose, pixel, depth: float, alpha: float = 1.0) -> np.ndarray:
    """World point for a pixel at a given depth, with scene scale ``alpha``.

    Computes ``alpha * (R^T (K^-1 [u, v, 1]^T * depth) - R^T t)``.
    """
    if not depth > 0:
        raise ValueError("depth must be positive")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    R, t = _pose_rt(pose)
    u, v = np.asarray(pixel, dtype=float)
    ray = np.array([(u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy, 1.0])
    return alpha * (R.T @ (ray * depth) - R.T @ t)


def unproject_pixels(camera: PinholeCamera, R: np.ndarray, t: np.ndarray, pixels: np.ndarray,
                     depth: np.ndarray, alpha: float = 1.0) -> np.ndarray:
    """Vectorized `unproject_scaled` for ``(..., 2)`` pixels and ``(...)`` depths."""
    pixels = np.asarray(pixels, dtype=float)
    depth = np.asarray(depth, dtype=float)
    cam = np.stack([(pixels[..., 0] - camera.cx) / camera.fx * depth,
                    (pixels[..., 1] - camera.cy) / camera.fy * depth,
                    depth], axis=-1)
    R = np.asarray(R)
    return alpha * ((cam - np.asarray(t)) @ R)


def depth_to_points(camera: PinholeCamera, R: np.ndarray, t: np.ndarray, depth: DepthImage,
                    alpha: float = 1.0, stride: int = 1):
    """World points for every valid pixel; also returns their (row, col)."""
    d = depth.depth[::stride, ::stride]
    rows, cols = np.nonzero(np.isfinite(d))
    rows, cols = rows * stride, cols * stride
    pix = np.stack([cols, rows], axis=-1).astype(float)
    pts = unproject_pixels(camera, R, t, pix, depth.depth[rows, cols], alpha)
    return pts, np.stack([rows, cols], axis=-1)


@dataclass(frozen=True, eq=False)
class CameraTrack:
    """Shared intrinsics with per-frame world-to-camera extrinsics and optional depth.

    Translations and depths are in the (possibly scale-ambiguous) units of
    the reconstruction that produced them.
    """

    camera: PinholeCamera
    R: np.ndarray  # (T, 3, 3)
    t: np.ndarray  # (T, 3)
    depth: Optional[np.ndarray] = None  # (T, H, W), NaN where absent

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float)
        t = np.asarray(self.t, dtype=float)
        if R.ndim != 3 or R.shape[1:] != (3, 3) or t.shape != (R.shape[0], 3):
            raise ValueError("extrinsics must be (T, 3, 3) rotations and (T, 3) translations")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)
        if self.depth is not None:
            d = np.asarray(self.depth, dtype=float)
            if d.shape != (R.shape[0], self.camera.height, self.camera.width):
                raise ValueError(f"depth stack must be (T, {self.camera.height}, {self.camera.width})")
            if np.any(d[np.isfinite(d)] <= 0):
                raise ValueError("valid depths must be positive")
            object.__setattr__(self, "depth", d)

    def __len__(self) -> int:
        return self.R.shape[0]

    def pose(self, frame: int) -> RigidTransform:
        return RigidTransform.from_rt(self.R[frame], self.t[frame])

    def depth_image(self, frame: int) -> DepthImage:
        if self.depth is None:
            raise ValueError("camera track carries no depth")
        return DepthImage(self.depth[frame])
