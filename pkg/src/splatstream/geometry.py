"""SE(3) pose algebra, pinhole camera model, and dense correspondence fields.

Conventions used throughout the package:
  - Poses are world-from-camera: X_world = R @ X_cam + t, so t is the camera
    position in world coordinates.
  - Camera frame is x-right, y-down, z-forward (right-handed).
  - Pixel coordinates have their origin at the center of the top-left pixel.
  - Tangent vectors are 6-vectors [omega, v] with the rotational part first,
    radians and meters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Points with camera-frame z below this are treated as behind the camera.
EPS_Z = 1e-6


class GeometryError(ValueError):
    pass


class BehindCameraError(GeometryError):
    pass


class InvalidDepthError(GeometryError):
    pass


class DegenerateRotationError(GeometryError):
    pass


# ---------------------------------------------------------------------------
# quaternion helpers (w, x, y, z ordering)
# ---------------------------------------------------------------------------


def _quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
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


def _quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def _matrix_to_quat(R: np.ndarray) -> np.ndarray:
    # Shepperd's method: pick the largest diagonal combination for stability.
    trace = R[0, 0] + R[1, 1] + R[2, 2]
    if trace > 0.0:
        s = np.sqrt(trace + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    elif R[0, 0] >= R[1, 1] and R[0, 0] >= R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = np.array(
            [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
        )
    elif R[1, 1] >= R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = np.array(
            [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = np.array(
            [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
        )
    if q[0] < 0.0:
        q = -q
    return q / np.linalg.norm(q)


def _hat(w: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


# ---------------------------------------------------------------------------
# Pose
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Pose:
    """Rigid transform in SE(3), world-from-camera.

    Stored as a unit quaternion plus translation; the rotation matrix is
    computed on demand. Instances are immutable and safe to share.
    """

    q: np.ndarray  # unit quaternion (w, x, y, z)
    t: np.ndarray  # translation, meters

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64).copy()
        t = np.asarray(self.t, dtype=np.float64).copy()
        if q.shape != (4,) or t.shape != (3,):
            raise GeometryError(f"bad pose shapes: q {q.shape}, t {t.shape}")
        n = np.linalg.norm(q)
        if n < 1e-12:
            raise GeometryError("zero quaternion")
        q = q / n
        if q[0] < 0.0:
            q = -q
        q.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "t", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @staticmethod
    def from_rt(R: np.ndarray, t: np.ndarray) -> "Pose":
        return Pose(_matrix_to_quat(np.asarray(R, dtype=np.float64)), t)

    @staticmethod
    def from_matrix(T: np.ndarray) -> "Pose":
        T = np.asarray(T, dtype=np.float64)
        return Pose.from_rt(T[:3, :3], T[:3, 3])

    @property
    def rotation(self) -> np.ndarray:
        return _quat_to_matrix(self.q)

    @property
    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.t
        return T

    def compose(self, other: "Pose") -> "Pose":
        q = _quat_multiply(self.q, other.q)
        t = self.rotation @ other.t + self.t
        return Pose(q, t)  # __post_init__ renormalizes

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def inverse(self) -> "Pose":
        q_inv = np.array([self.q[0], -self.q[1], -self.q[2], -self.q[3]])
        return Pose(q_inv, -(_quat_to_matrix(q_inv) @ self.t))

    def apply(self, pts: np.ndarray) -> np.ndarray:
        """Map camera-frame points to world coordinates."""
        pts = np.asarray(pts, dtype=np.float64)
        return pts @ self.rotation.T + self.t

    def apply_inverse(self, pts: np.ndarray) -> np.ndarray:
        """Map world points into the camera frame."""
        pts = np.asarray(pts, dtype=np.float64)
        return (pts - self.t) @ self.rotation


def compose(a: Pose, b: Pose) -> Pose:
    return a.compose(b)


def inverse(p: Pose) -> Pose:
    return p.inverse()


# ---------------------------------------------------------------------------
# exp / log
# ---------------------------------------------------------------------------

_SMALL_ANGLE = 1e-8


def exp(xi: np.ndarray) -> Pose:
    """Exponential map se(3) -> SE(3) for a tangent 6-vector [omega, v]."""
    xi = np.asarray(xi, dtype=np.float64)
    if xi.shape != (6,):
        raise GeometryError(f"tangent must be a 6-vector, got {xi.shape}")
    w, v = xi[:3], xi[3:]
    theta = np.linalg.norm(w)
    W = _hat(w)
    if theta < _SMALL_ANGLE:
        # second-order Taylor; below 1e-8 the truncation error is < 1e-24
        R = np.eye(3) + W + 0.5 * (W @ W)
        V = np.eye(3) + 0.5 * W + (W @ W) / 6.0
    else:
        s, c = np.sin(theta), np.cos(theta)
        R = np.eye(3) + (s / theta) * W + ((1.0 - c) / theta**2) * (W @ W)
        V = np.eye(3) + ((1.0 - c) / theta**2) * W + ((theta - s) / theta**3) * (W @ W)
    return Pose.from_rt(R, V @ v)


def log(p: Pose) -> np.ndarray:
    """Logarithm map SE(3) -> se(3); requires rotation angle below pi."""
    R = p.rotation
    cos_theta = np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    if theta > np.pi - 1e-6:
        raise DegenerateRotationError(f"rotation angle {theta:.9f} too close to pi")
    if theta < _SMALL_ANGLE:
        w = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
        W = _hat(w)
        V_inv = np.eye(3) - 0.5 * W + (W @ W) / 12.0
    else:
        w = (theta / (2.0 * np.sin(theta))) * np.array(
            [R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]
        )
        W = _hat(w)
        coeff = 1.0 / theta**2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
        V_inv = np.eye(3) - 0.5 * W + coeff * (W @ W)
    return np.concatenate([w, V_inv @ p.t])


# ---------------------------------------------------------------------------
# pinhole camera
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise GeometryError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise GeometryError("principal point outside image")

    @property
    def mean_focal(self) -> float:
        return 0.5 * (self.fx + self.fy)

    def downscaled(self, divisor: int) -> "Intrinsics":
        """Intrinsics of the coarse grid whose pixel (x, y) sits at full-res
        coordinate (divisor*x + (divisor-1)/2, ...)."""
        if divisor == 1:
            return self
        off = (divisor - 1) / 2.0
        return Intrinsics(
            fx=self.fx / divisor,
            fy=self.fy / divisor,
            cx=(self.cx - off) / divisor,
            cy=(self.cy - off) / divisor,
            width=self.width // divisor,
            height=self.height // divisor,
        )

    def pixel_grid(self) -> np.ndarray:
        """(H, W, 2) array of pixel-center coordinates (x, y)."""
        xs, ys = np.meshgrid(np.arange(self.width), np.arange(self.height))
        return np.stack([xs, ys], axis=-1).astype(np.float64)


def project(pts: np.ndarray, K: Intrinsics) -> np.ndarray:
    """Project camera-frame points to pixel coordinates.

    Raises BehindCameraError if any point has z <= EPS_Z.
    """
    pts = np.asarray(pts, dtype=np.float64)
    z = pts[..., 2]
    if np.any(z <= EPS_Z):
        raise BehindCameraError("point behind camera (z <= EPS_Z)")
    return np.stack(
        [K.fx * pts[..., 0] / z + K.cx, K.fy * pts[..., 1] / z + K.cy], axis=-1
    )


def backproject(px: np.ndarray, depth: np.ndarray, K: Intrinsics) -> np.ndarray:
    """Lift pixel coordinates and depth to camera-frame 3D points."""
    px = np.asarray(px, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth <= 0.0):
        raise InvalidDepthError("non-positive depth")
    return np.stack(
        [
            (px[..., 0] - K.cx) * depth / K.fx,
            (px[..., 1] - K.cy) * depth / K.fy,
            depth,
        ],
        axis=-1,
    )


# ---------------------------------------------------------------------------
# depth maps and correspondence fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel depth in meters with an explicit validity mask."""

    values: np.ndarray  # (H, W) float
    valid: np.ndarray   # (H, W) bool

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if values.shape != valid.shape or values.ndim != 2:
            raise GeometryError("depth/valid shape mismatch")
        # non-finite or non-positive entries can never be valid
        valid = valid & np.isfinite(values) & (values > 0.0)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @staticmethod
    def full(values: np.ndarray) -> "DepthMap":
        values = np.asarray(values, dtype=np.float64)
        return DepthMap(values, np.ones(values.shape, dtype=bool))


@dataclass(frozen=True)
class PixelField:
    """Dense grid of target-image pixel coordinates with a validity mask.

    Validity is explicit; coordinates of valid entries may still land outside
    the image rectangle, which `in_bounds` reports separately.
    """

    coords: np.ndarray  # (H, W, 2), (x, y)
    valid: np.ndarray   # (H, W) bool
    width: int
    height: int

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if coords.ndim != 3 or coords.shape[2] != 2 or coords.shape[:2] != valid.shape:
            raise GeometryError("pixel field shape mismatch")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "valid", valid)

    @property
    def in_bounds(self) -> np.ndarray:
        x, y = self.coords[..., 0], self.coords[..., 1]
        return self.valid & (x >= 0) & (x < self.width) & (y >= 0) & (y < self.height)

    @staticmethod
    def identity(K: Intrinsics) -> "PixelField":
        grid = K.pixel_grid()
        return PixelField(grid, np.ones(grid.shape[:2], dtype=bool), K.width, K.height)


def correspondence_field(
    depth_i: DepthMap, pose_i: Pose, pose_j: Pose, K: Intrinsics
) -> PixelField:
    """Where each pixel of frame i lands in frame j under the given poses.

    Each valid source pixel is lifted with its depth, mapped cam-i -> cam-j,
    and reprojected. With world-from-camera poses the cam-i -> cam-j transform
    is G_j^{-1} . G_i. Pixels with invalid depth or mapping behind camera j
    are masked out; points landing outside the image stay valid.
    """
    if depth_i.shape != (K.height, K.width):
        raise GeometryError(
            f"depth shape {depth_i.shape} does not match intrinsics "
            f"({K.height}, {K.width})"
        )
    grid = K.pixel_grid()
    d = np.where(depth_i.valid, depth_i.values, 1.0)  # placeholder for invalid
    pts_i = np.stack(
        [(grid[..., 0] - K.cx) * d / K.fx, (grid[..., 1] - K.cy) * d / K.fy, d],
        axis=-1,
    )
    rel = pose_j.inverse().compose(pose_i)
    pts_j = pts_i @ rel.rotation.T + rel.t
    z = pts_j[..., 2]
    valid = depth_i.valid & (z > EPS_Z)
    z_safe = np.where(z > EPS_Z, z, 1.0)
    coords = np.stack(
        [K.fx * pts_j[..., 0] / z_safe + K.cx, K.fy * pts_j[..., 1] / z_safe + K.cy],
        axis=-1,
    )
    coords = np.where(valid[..., None], coords, 0.0)
    return PixelField(coords, valid, K.width, K.height)
