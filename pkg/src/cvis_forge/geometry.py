"""Camera models, rigid poses, projection and box collision.

Frame conventions (global to the package):

World
    right-handed, +z up, the ground is the plane z = 0.
Camera
    +z forward along the optical axis, +x right, +y down.
Image
    pixel (col, row) has its center at continuous coordinates (u, v) = (col, row).

Rotations are unit quaternions stored scalar-first ``(w, x, y, z)`` with
``w >= 0``. Translations are in meters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    IntersectionBehindCamera,
    LengthMismatch,
    PointBehindCamera,
    RayParallelToPlane,
)

EPS = 1e-6
PARALLEL_EPS = 1e-9


# ---------------------------------------------------------------------------
# quaternion helpers


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return q


def quat_multiply(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R) -> np.ndarray:
    """Shepperd's method; input must be a proper rotation matrix."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    diag = np.diag(R)
    k = int(np.argmax([tr, *diag]))
    if k == 0:
        s = 2.0 * math.sqrt(max(1.0 + tr, 0.0))
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif k == 1:
        s = 2.0 * math.sqrt(max(1.0 + R[0, 0] - R[1, 1] - R[2, 2], 0.0))
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif k == 2:
        s = 2.0 * math.sqrt(max(1.0 + R[1, 1] - R[0, 0] - R[2, 2], 0.0))
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(max(1.0 + R[2, 2] - R[0, 0] - R[1, 1], 0.0))
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    return quat_normalize(q)


def rotvec_to_matrix(w) -> np.ndarray:
    """Rodrigues formula."""
    w = np.asarray(w, dtype=np.float64)
    theta = float(np.linalg.norm(w))
    K = skew(w)
    if theta < 1e-12:
        return np.eye(3) + K + 0.5 * K @ K
    return np.eye(3) + math.sin(theta) / theta * K + (1 - math.cos(theta)) / theta**2 * K @ K


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def euler_zyx_to_matrix(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """R = Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    cz, sz = math.cos(yaw), math.sin(yaw)
    cy, sy = math.cos(pitch), math.sin(pitch)
    cx, sx = math.cos(roll), math.sin(roll)
    Rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1.0]])
    Ry = np.array([[cy, 0, sy], [0, 1.0, 0], [-sy, 0, cy]])
    Rx = np.array([[1.0, 0, 0], [0, cx, -sx], [0, sx, cx]])
    return Rz @ Ry @ Rx


def matrix_to_euler_zyx(R) -> tuple[float, float, float]:
    R = np.asarray(R)
    pitch = math.asin(float(np.clip(-R[2, 0], -1.0, 1.0)))
    if abs(R[2, 0]) < 1.0 - 1e-12:
        yaw = math.atan2(R[1, 0], R[0, 0])
        roll = math.atan2(R[2, 1], R[2, 2])
    else:  # gimbal lock, put everything in yaw
        yaw = math.atan2(-R[0, 1], R[1, 1])
        roll = 0.0
    return yaw, pitch, roll


def rotation_angle(R) -> float:
    """Geodesic angle of a rotation matrix, in [0, pi]."""
    q = matrix_to_quat(R)
    return 2.0 * math.atan2(float(np.linalg.norm(q[1:])), abs(float(q[0])))


# ---------------------------------------------------------------------------
# value types


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform ``p -> R p + t``."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = quat_normalize(self.rotation)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        q.setflags(write=False)
        t = t.copy()
        t.setflags(write=False)
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "_R", quat_to_matrix(q))

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, R, t=(0.0, 0.0, 0.0)) -> "Pose":
        pose = cls(matrix_to_quat(R), t)
        return pose

    @classmethod
    def from_euler(cls, yaw=0.0, pitch=0.0, roll=0.0, translation=(0.0, 0.0, 0.0)) -> "Pose":
        return cls.from_matrix(euler_zyx_to_matrix(yaw, pitch, roll), translation)

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0)) -> "Pose":
        return cls.from_matrix(rotvec_to_matrix(rotvec), translation)

    @property
    def R(self) -> np.ndarray:
        return self._R

    @property
    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        M = np.eye(4)
        M[:3, :3] = self._R
        M[:3, 3] = self.translation
        return M

    def to_euler(self) -> tuple[float, float, float]:
        return matrix_to_euler_zyx(self._R)

    def apply(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self._R.T + self.translation

    def compose(self, other: "Pose") -> "Pose":
        """``self ∘ other``: apply ``other`` first."""
        q = quat_multiply(self.rotation, other.rotation)
        t = self._R @ other.translation + self.translation
        return Pose(q, t)

    __matmul__ = compose

    def inverse(self) -> "Pose":
        q = self.rotation * np.array([1.0, -1.0, -1.0, -1.0])
        return Pose(q, -(self._R.T @ self.translation))

    def allclose(self, other: "Pose", atol: float = 1e-9) -> bool:
        return rotation_distance(self, other) <= atol and bool(
            np.allclose(self.translation, other.translation, rtol=0.0, atol=atol)
        )

    def to_dict(self) -> dict:
        yaw, pitch, roll = self.to_euler()
        return {
            "yaw": yaw,
            "pitch": pitch,
            "roll": roll,
            "translation": [float(x) for x in self.translation],
            "quaternion": [float(x) for x in self.rotation],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        # the quaternion is the lossless field; euler angles are for humans
        if "quaternion" in d:
            return cls(d["quaternion"], d["translation"])
        return cls.from_euler(d["yaw"], d["pitch"], d["roll"], d["translation"])

    def __repr__(self):
        return f"Pose(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


def rotation_distance(a: Pose, b: Pose) -> float:
    """Geodesic angle between the rotations of two poses (radians)."""
    rel = quat_multiply(a.rotation * np.array([1.0, -1.0, -1.0, -1.0]), b.rotation)
    return 2.0 * math.atan2(float(np.linalg.norm(rel[1:])), abs(float(rel[0])))


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    skew: float = 0.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, self.skew, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def scaled_focal(self, factor: float) -> "CameraIntrinsics":
        return CameraIntrinsics(self.fx * factor, self.fy * factor, self.cx, self.cy,
                                self.width, self.height, self.skew * factor)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height, "skew": self.skew}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]), float(d.get("skew", 0.0)))


@dataclass(frozen=True, eq=False)
class CameraExtrinsics:
    world_to_camera: Pose = field(default_factory=Pose)

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0)) -> "CameraExtrinsics":
        """Camera at ``eye`` looking at ``target`` with image-up close to ``up``."""
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(right) < 1e-9:
            raise ValueError("view direction parallel to up vector")
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        R = np.stack([right, down, forward])  # rows: camera axes in world coords
        return cls(Pose.from_matrix(R, -R @ eye))

    @property
    def camera_center(self) -> np.ndarray:
        return self.world_to_camera.inverse().translation

    def to_dict(self) -> dict:
        return {"world_to_camera": self.world_to_camera.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraExtrinsics":
        return cls(Pose.from_dict(d["world_to_camera"]))


@dataclass(frozen=True, eq=False)
class Plane:
    """``{x : normal · x = offset}``."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64).reshape(3)
        norm = np.linalg.norm(n)
        if abs(norm - 1.0) > 1e-9:
            n = n / norm
            object.__setattr__(self, "offset", float(self.offset) / norm)
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", float(self.offset))

    def signed_distance(self, points) -> np.ndarray:
        return np.asarray(points) @ self.normal - self.offset


@dataclass(frozen=True, eq=False)
class OrientedBox:
    center: np.ndarray
    half_extents: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        he = np.asarray(self.half_extents, dtype=np.float64).reshape(3)
        if np.any(he <= 0):
            raise ValueError("half extents must be positive")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64).reshape(3))
        object.__setattr__(self, "half_extents", he)
        object.__setattr__(self, "rotation", quat_normalize(self.rotation))

    @property
    def axes(self) -> np.ndarray:
        """Columns are the box axes in world coordinates."""
        return quat_to_matrix(self.rotation)

    def inflated(self, margin: float) -> "OrientedBox":
        return OrientedBox(self.center, self.half_extents + margin, self.rotation)

    def corners(self) -> np.ndarray:
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
        return (signs * self.half_extents) @ self.axes.T + self.center

    def contains(self, points) -> np.ndarray:
        local = (np.asarray(points) - self.center) @ self.axes
        return np.all(np.abs(local) <= self.half_extents, axis=-1)

    def to_dict(self) -> dict:
        yaw, pitch, roll = matrix_to_euler_zyx(self.axes)
        return {"center": self.center.tolist(), "half_extents": self.half_extents.tolist(),
                "yaw": yaw, "pitch": pitch, "roll": roll, "quaternion": self.rotation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "OrientedBox":
        if "quaternion" in d:
            return cls(d["center"], d["half_extents"], d["quaternion"])
        q = matrix_to_quat(euler_zyx_to_matrix(d["yaw"], d["pitch"], d["roll"]))
        return cls(d["center"], d["half_extents"], q)


# ---------------------------------------------------------------------------
# operations


def to_camera(points, e: CameraExtrinsics) -> np.ndarray:
    return e.world_to_camera.apply(points)


def project_camera_points(pc: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    """Vectorized pinhole projection of camera-frame points (no depth check)."""
    z = pc[..., 2]
    u = (k.fx * pc[..., 0] + k.skew * pc[..., 1]) / z + k.cx
    v = k.fy * pc[..., 1] / z + k.cy
    return np.stack([u, v], axis=-1)


def project(point, k: CameraIntrinsics, e: CameraExtrinsics) -> tuple[np.ndarray, float]:
    """Project one world point; returns ``(pixel, depth)``.

    Pixels outside the image are returned as-is; clipping is the caller's job.
    """
    pc = to_camera(np.asarray(point, dtype=np.float64), e)
    if pc[2] <= EPS:
        raise PointBehindCamera(f"camera-frame depth {pc[2]:.3g} m <= {EPS}")
    return project_camera_points(pc, k), float(pc[2])


def pixel_rays(pixels, k: CameraIntrinsics) -> np.ndarray:
    """Camera-frame ray directions with unit z component."""
    pixels = np.asarray(pixels, dtype=np.float64)
    y = (pixels[..., 1] - k.cy) / k.fy
    x = (pixels[..., 0] - k.cx - k.skew * y) / k.fx
    return np.stack([x, y, np.ones_like(x)], axis=-1)


def backproject_to_plane(pixel, k: CameraIntrinsics, e: CameraExtrinsics, plane: Plane) -> np.ndarray:
    """Intersect the viewing ray through ``pixel`` with a world plane."""
    cam_to_world = e.world_to_camera.inverse()
    origin = cam_to_world.translation
    direction = cam_to_world.R @ pixel_rays(pixel, k)
    denom = float(plane.normal @ direction)
    if abs(denom) <= PARALLEL_EPS:
        raise RayParallelToPlane("viewing ray is parallel to the plane")
    s = (plane.offset - float(plane.normal @ origin)) / denom
    # direction has unit camera-z, so s is the camera-frame depth
    if s <= EPS:
        raise IntersectionBehindCamera(f"plane hit at depth {s:.3g} m")
    return origin + s * direction


def backproject_pixels_to_plane(pixels, k: CameraIntrinsics, e: CameraExtrinsics, plane: Plane):
    """Vectorized variant; returns ``(points, valid)`` instead of raising."""
    cam_to_world = e.world_to_camera.inverse()
    origin = cam_to_world.translation
    directions = pixel_rays(pixels, k) @ cam_to_world.R.T
    denom = directions @ plane.normal
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (plane.offset - plane.normal @ origin) / denom
    valid = (np.abs(denom) > PARALLEL_EPS) & (s > EPS)
    return origin + s[..., None] * directions, valid


def ground_plane_from_extrinsics(e: CameraExtrinsics) -> Plane:
    """The world ground plane; it does not depend on the camera by convention."""
    return Plane(np.array([0.0, 0.0, 1.0]), 0.0)


def obb_intersect(a: OrientedBox, b: OrientedBox) -> bool:
    """Separating-axis test over the 15 candidate axes; touching counts as overlap."""
    A = a.axes
    B = b.axes
    d = b.center - a.center
    axes = [A[:, i] for i in range(3)] + [B[:, i] for i in range(3)]
    for i in range(3):
        for j in range(3):
            c = np.cross(A[:, i], B[:, j])
            n = np.linalg.norm(c)
            if n > 1e-9:  # parallel edge pairs are covered by the face axes
                axes.append(c / n)
    for axis in axes:
        ra = float(np.sum(a.half_extents * np.abs(A.T @ axis)))
        rb = float(np.sum(b.half_extents * np.abs(B.T @ axis)))
        if abs(float(d @ axis)) > ra + rb:
            return False
    return True


def smooth_l1(pred, target) -> float:
    """Mean Huber-style loss with the kink at |d| = 1."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    target = np.asarray(target, dtype=np.float64).ravel()
    if pred.shape != target.shape:
        raise LengthMismatch(f"{pred.size} vs {target.size} components")
    if pred.size == 0:
        return 0.0
    d = np.abs(pred - target)
    return float(np.mean(np.where(d < 1.0, 0.5 * d * d, d - 0.5)))
