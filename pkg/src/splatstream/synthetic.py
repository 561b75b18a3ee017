"""Analytic test scene: a textured axis-aligned room with colored spheres.

Everything here is closed-form: depth maps are exact ray-surface
intersections, correspondences between views follow from the geometry, and
occlusion is decided by re-casting rays in the target view. This scene backs
every oracle the solver and pipeline tests rely on, standing in for real
sensor datasets.

Depth convention is z-depth: ray directions are the unnormalized pinhole
directions ((x-cx)/fx, (y-cy)/fy, 1) in the camera frame, so the ray
parameter t equals camera-frame z at the hit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import EPS_Z, DepthMap, Intrinsics, Pose

DEFAULT_INTRINSICS = Intrinsics(fx=120.0, fy=120.0, cx=79.5, cy=59.5,
                                width=160, height=120)

ROOM_HALF = np.array([3.0, 2.2, 3.0])
CHECKER_CELL = 0.25
OCCLUSION_TOL = 0.01  # relative depth slack when deciding co-visibility


@dataclass(frozen=True)
class SyntheticScene:
    half_extents: np.ndarray     # (3,) room half sizes, meters
    sphere_centers: np.ndarray   # (S, 3)
    sphere_radii: np.ndarray     # (S,)
    sphere_colors: np.ndarray    # (S, 3)
    palette: np.ndarray          # (P, 3) checker cell colors
    seed: int


def make_scene(seed: int = 0, n_spheres: int = 24) -> SyntheticScene:
    rng = np.random.default_rng(seed)
    palette = rng.uniform(0.15, 0.95, size=(64, 3))
    # keep a clear bubble around the origin so default trajectories never
    # enter a sphere
    dirs = rng.normal(size=(n_spheres, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    dist = rng.uniform(1.45, 2.4, size=n_spheres)
    centers = dirs * dist[:, None]
    margin = ROOM_HALF - 0.35
    centers = np.clip(centers, -margin, margin)
    radii = rng.uniform(0.12, 0.3, size=n_spheres)
    colors = palette[rng.integers(0, len(palette), size=n_spheres)]
    return SyntheticScene(ROOM_HALF.copy(), centers, radii, colors,
                          palette, seed)


# ---------------------------------------------------------------------------
# ray casting
# ---------------------------------------------------------------------------


def _cast(scene: SyntheticScene, origins: np.ndarray, dirs: np.ndarray):
    """Nearest hit along each ray. Returns (t, object id); ids 0..5 are the
    box faces (2*axis + negative-side bit), 6+k is sphere k. Origins must be
    inside the room, so the box always provides a hit."""
    o, d = origins, dirs
    m = o.shape[0]
    t_best = np.full(m, np.inf)
    obj = np.full(m, -1, dtype=np.int64)
    for axis in range(3):
        h = scene.half_extents[axis]
        da = d[:, axis]
        with np.errstate(divide="ignore", invalid="ignore"):
            t_pos = (h - o[:, axis]) / da
            t_neg = (-h - o[:, axis]) / da
        t_axis = np.where(da > 0, t_pos, np.where(da < 0, t_neg, np.inf))
        face = np.where(da > 0, 2 * axis, 2 * axis + 1)
        better = t_axis < t_best
        t_best = np.where(better, t_axis, t_best)
        obj = np.where(better, face, obj)
    for k in range(scene.sphere_centers.shape[0]):
        oc = o - scene.sphere_centers[k]
        a = np.sum(d * d, axis=1)
        b = 2.0 * np.sum(d * oc, axis=1)
        c = np.sum(oc * oc, axis=1) - scene.sphere_radii[k] ** 2
        disc = b * b - 4.0 * a * c
        hit = disc > 0.0
        sq = np.sqrt(np.where(hit, disc, 0.0))
        t_near = (-b - sq) / (2.0 * a)
        t_far = (-b + sq) / (2.0 * a)
        t_k = np.where(t_near > 1e-9, t_near, t_far)
        ok = hit & (t_k > 1e-9) & (t_k < t_best)
        t_best = np.where(ok, t_k, t_best)
        obj = np.where(ok, 6 + k, obj)
    return t_best, obj


def _modulation(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    # smooth sub-cell texture so photometric losses have gradient everywhere
    return 0.8 + 0.2 * (0.5 + 0.5 * np.sin(2 * np.pi * u / 0.37)
                        * np.cos(2 * np.pi * v / 0.29))


def _shade(scene: SyntheticScene, pts: np.ndarray, obj: np.ndarray) -> np.ndarray:
    colors = np.zeros((pts.shape[0], 3))
    P = len(scene.palette)
    for face in range(6):
        sel = obj == face
        if not sel.any():
            continue
        axis = face // 2
        b, c = (axis + 1) % 3, (axis + 2) % 3
        u, v = pts[sel, b], pts[sel, c]
        i = np.floor(u / CHECKER_CELL).astype(np.int64)
        j = np.floor(v / CHECKER_CELL).astype(np.int64)
        idx = (i * 73856093 + j * 19349663 + face * 83492791) % P
        parity = 0.65 + 0.35 * ((i + j + face) % 2)
        m = _modulation(u, v)
        colors[sel] = scene.palette[idx] * (parity * m)[:, None]
    for k in range(scene.sphere_centers.shape[0]):
        sel = obj == 6 + k
        if not sel.any():
            continue
        n = (pts[sel] - scene.sphere_centers[k]) / scene.sphere_radii[k]
        u = np.arctan2(n[:, 2], n[:, 0]) * 0.5
        v = np.arccos(np.clip(n[:, 1], -1.0, 1.0)) * 0.5
        colors[sel] = scene.sphere_colors[k] * _modulation(u, v)[:, None]
    return np.clip(colors, 0.0, 1.0)


def _ray_dirs_world(pose: Pose, K: Intrinsics) -> np.ndarray:
    grid = K.pixel_grid().reshape(-1, 2)
    d_cam = np.stack([
        (grid[:, 0] - K.cx) / K.fx,
        (grid[:, 1] - K.cy) / K.fy,
        np.ones(grid.shape[0]),
    ], axis=-1)
    return d_cam @ pose.rotation.T


def gt_depth(scene: SyntheticScene, pose: Pose, K: Intrinsics) -> DepthMap:
    d_world = _ray_dirs_world(pose, K)
    origins = np.broadcast_to(pose.t, d_world.shape)
    t, _ = _cast(scene, origins, d_world)
    return DepthMap.full(t.reshape(K.height, K.width))


def render_synthetic(scene: SyntheticScene, pose: Pose, K: Intrinsics):
    """(rgb, gt depth) of the scene from a camera pose."""
    d_world = _ray_dirs_world(pose, K)
    origins = np.broadcast_to(pose.t, d_world.shape)
    t, obj = _cast(scene, origins, d_world)
    pts = origins + t[:, None] * d_world
    rgb = _shade(scene, pts, obj).reshape(K.height, K.width, 3)
    return rgb, DepthMap.full(t.reshape(K.height, K.width))


# ---------------------------------------------------------------------------
# ground-truth correspondences
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GtCorrespondence:
    coords: np.ndarray   # (H, W, 2) landing pixel in the target view
    valid: np.ndarray    # (H, W) projects in front of the target camera
    visible: np.ndarray  # (H, W) co-visible: valid, in bounds, unoccluded
    depth_i: np.ndarray  # (H, W) source analytic depth


def transport_visibility(scene: SyntheticScene, depth_i: np.ndarray,
                         pose_i: Pose, pose_j: Pose, K: Intrinsics):
    """Transport source-view geometry into view j and test co-visibility.

    Works for any source depth (analytic, rendered, or noisy): the occlusion
    test re-casts the landing ray in view j against the analytic scene and
    compares z within a relative tolerance.
    """
    H, W = K.height, K.width
    grid = K.pixel_grid().reshape(-1, 2)
    d = np.asarray(depth_i, dtype=np.float64).reshape(-1)
    pts_cam = np.stack([
        (grid[:, 0] - K.cx) * d / K.fx,
        (grid[:, 1] - K.cy) * d / K.fy,
        d,
    ], axis=-1)
    X = pose_i.apply(pts_cam)
    Xj = pose_j.apply_inverse(X)
    z = Xj[:, 2]
    valid = z > EPS_Z
    zs = np.where(valid, z, 1.0)
    u = K.fx * Xj[:, 0] / zs + K.cx
    v = K.fy * Xj[:, 1] / zs + K.cy
    in_b = valid & (u >= 0) & (u < W) & (v >= 0) & (v < H)
    # cast straight at the 3D point: the point sits at ray parameter 1, and
    # anything hit strictly earlier occludes it. Parameter-space comparison
    # is the same 1%-relative depth test (depth is linear along the ray) but
    # immune to pixel rounding at grazing sightlines.
    seg = X - pose_j.t
    safe = np.where(valid[:, None], seg, np.array([0.0, 0.0, 1.0]))
    t_hit, _ = _cast(scene, np.broadcast_to(pose_j.t, safe.shape), safe)
    unoccluded = t_hit >= 1.0 / (1.0 + OCCLUSION_TOL)
    visible = in_b & unoccluded
    coords = np.stack([u, v], axis=-1)
    coords[~valid] = 0.0
    return (coords.reshape(H, W, 2), valid.reshape(H, W),
            visible.reshape(H, W))


def gt_flow(scene: SyntheticScene, pose_i: Pose, pose_j: Pose,
            K: Intrinsics) -> GtCorrespondence:
    """Exact correspondence field from view i to view j with visibility."""
    depth_i = gt_depth(scene, pose_i, K).values
    coords, valid, visible = transport_visibility(scene, depth_i, pose_i,
                                                  pose_j, K)
    return GtCorrespondence(coords, valid, visible, depth_i)


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------


def look_at(eye, target, down=(0.0, 1.0, 0.0)) -> Pose:
    """World-from-camera pose at `eye` with +z toward `target` (y-down)."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd = fwd / np.linalg.norm(fwd)
    down = np.asarray(down, dtype=np.float64)
    x = np.cross(down, fwd)
    if np.linalg.norm(x) < 1e-9:  # looking straight along `down`
        down = np.array([0.0, 0.0, 1.0])
        x = np.cross(down, fwd)
    x = x / np.linalg.norm(x)
    y = np.cross(fwd, x)
    R = np.stack([x, y, fwd], axis=-1)
    return Pose.from_rt(R, eye)


def orbit_trajectory(n_frames: int, radius: float = 1.0, height: float = 0.0,
                     center=(0.0, 0.0, 0.0), sweep: float = 2.0 * np.pi,
                     phase: float = 0.0) -> list:
    center = np.asarray(center, dtype=np.float64)
    poses = []
    for k in range(n_frames):
        a = phase + sweep * k / n_frames
        eye = center + np.array([radius * np.cos(a), height,
                                 radius * np.sin(a)])
        poses.append(look_at(eye, center))
    return poses


def constant_velocity_trajectory(n_frames: int, start: Pose,
                                 step: np.ndarray) -> list:
    from .geometry import exp
    poses = [start]
    step = np.asarray(step, dtype=np.float64)
    for _ in range(n_frames - 1):
        poses.append(exp(step).compose(poses[-1]))
    return poses


def random_walk_trajectory(n_frames: int, seed: int, start: Pose,
                           rot_step: float = 0.01,
                           t_step: float = 0.015) -> list:
    from .geometry import exp
    rng = np.random.default_rng(seed)
    poses = [start]
    for _ in range(n_frames - 1):
        xi = np.concatenate([
            rng.normal(size=3) * rot_step,
            rng.normal(size=3) * t_step,
        ])
        poses.append(exp(xi).compose(poses[-1]))
    return poses
