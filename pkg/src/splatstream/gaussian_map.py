"""Growable set of isotropic 3D Gaussians: the scene representation.

Each element is a world-space blob f(x) = o * exp(-|x - mu|^2 / (2 r^2)) with
an RGB color attached for rendering. The map is stored as flat parallel
arrays so the renderer and optimizer can work vectorized; Gaussian is the
scalar view used at API boundaries and in tests.

Single-writer contract: the pipeline mutates the map between renders, renders
read a snapshot. Nothing here locks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .frame import Frame
from .geometry import GeometryError, Pose

O_INIT = 0.5
S_INIT = 1.0
TAU_SIL = 0.5
TAU_DEPTH = 0.05
TAU_PRUNE = 0.005
R_MIN = 1e-4
R_MAX = 1.0

# optimizer clamp floor; prune bounds are policy, this is an invariant guard
_R_FLOOR = 1e-6


@dataclass(frozen=True)
class Gaussian:
    mu: np.ndarray
    radius: float
    opacity: float
    color: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        color = np.asarray(self.color, dtype=np.float64)
        if mu.shape != (3,) or color.shape != (3,):
            raise GeometryError("gaussian mu/color must be 3-vectors")
        if not self.radius > 0.0:
            raise GeometryError(f"radius must be positive, got {self.radius}")
        if not (0.0 <= self.opacity <= 1.0):
            raise GeometryError(f"opacity outside [0,1]: {self.opacity}")
        if np.any(color < 0.0) or np.any(color > 1.0):
            raise GeometryError("color outside [0,1]")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "color", color)


def eval_gaussian(g: Gaussian, x: np.ndarray) -> float:
    d2 = float(np.sum((np.asarray(x, dtype=np.float64) - g.mu) ** 2))
    return g.opacity * np.exp(-d2 / (2.0 * g.radius**2))


@dataclass(frozen=True)
class GaussianBatch:
    """Column-wise bundle of Gaussians, the unit of map growth."""

    mu: np.ndarray       # (N, 3)
    radius: np.ndarray   # (N,)
    opacity: np.ndarray  # (N,)
    color: np.ndarray    # (N, 3)

    def __len__(self):
        return self.mu.shape[0]

    @staticmethod
    def empty() -> "GaussianBatch":
        return GaussianBatch(
            np.zeros((0, 3)), np.zeros(0), np.zeros(0), np.zeros((0, 3))
        )


class GaussianMap:
    """Mutable array-of-structs scene map.

    Attributes mu (N,3), radius (N,), opacity (N,), color (N,3), created (N,)
    are plain float64/int64 arrays; the optimizer writes them in place and
    calls clamp_() afterwards to restore the per-field invariants.
    """

    def __init__(self):
        self.mu = np.zeros((0, 3), dtype=np.float64)
        self.radius = np.zeros(0, dtype=np.float64)
        self.opacity = np.zeros(0, dtype=np.float64)
        self.color = np.zeros((0, 3), dtype=np.float64)
        self.created = np.zeros(0, dtype=np.int64)

    def __len__(self):
        return self.mu.shape[0]

    def extend(self, batch: GaussianBatch, created: int = 0) -> None:
        if len(batch) == 0:
            return
        self.mu = np.concatenate([self.mu, np.asarray(batch.mu, dtype=np.float64)])
        self.radius = np.concatenate([self.radius, np.asarray(batch.radius, dtype=np.float64)])
        self.opacity = np.concatenate([self.opacity, np.asarray(batch.opacity, dtype=np.float64)])
        self.color = np.concatenate([self.color, np.asarray(batch.color, dtype=np.float64)])
        self.created = np.concatenate(
            [self.created, np.full(len(batch), created, dtype=np.int64)]
        )

    def gaussian(self, i: int) -> Gaussian:
        return Gaussian(self.mu[i], float(self.radius[i]), float(self.opacity[i]), self.color[i])

    def clamp_(self) -> None:
        np.clip(self.opacity, 0.0, 1.0, out=self.opacity)
        np.clip(self.color, 0.0, 1.0, out=self.color)
        np.maximum(self.radius, _R_FLOOR, out=self.radius)

    def check_invariants(self) -> None:
        assert np.all(self.radius > 0.0)
        assert np.all((self.opacity >= 0.0) & (self.opacity <= 1.0))
        assert np.all((self.color >= 0.0) & (self.color <= 1.0))
        assert np.all(np.isfinite(self.mu))

    def point_cloud(self) -> tuple:
        """(centers, colors) view for PLY export."""
        return self.mu, self.color


@dataclass
class MapSettings:
    o_init: float = O_INIT
    s_init: float = S_INIT
    tau_sil: float = TAU_SIL
    tau_depth: float = TAU_DEPTH
    tau_prune: float = TAU_PRUNE
    r_min: float = R_MIN
    r_max: float = R_MAX
    stride: int = 1
    densify_stride: int = 1


def init_from_depth(
    frame: Frame,
    pose: Pose,
    mask: np.ndarray | None = None,
    stride: int = 1,
    o_init: float = O_INIT,
    s_init: float = S_INIT,
) -> GaussianBatch:
    """Lift selected valid-depth pixels to one Gaussian each.

    Centers are world-space backprojections through `pose`; the radius is the
    footprint of one source pixel at that depth, d / fx * s_init. Selection is
    the AND of the validity mask, the caller mask, and an every-`stride`
    pixel grid anchored at (0, 0).
    """
    K = frame.intrinsics
    select = frame.depth.valid.copy()
    if mask is not None:
        select &= np.asarray(mask, dtype=bool)
    if stride > 1:
        grid = np.zeros_like(select)
        grid[::stride, ::stride] = True
        select &= grid
    ys, xs = np.nonzero(select)
    if ys.size == 0:
        return GaussianBatch.empty()
    d = frame.depth.values[ys, xs]
    pts_cam = np.stack(
        [(xs - K.cx) * d / K.fx, (ys - K.cy) * d / K.fy, d], axis=-1
    )
    mu = pose.apply(pts_cam)
    radius = d / K.fx * s_init
    opacity = np.full(ys.size, o_init)
    color = frame.rgb[ys, xs].copy()
    return GaussianBatch(mu, radius, opacity, color)


def densify(
    gmap: GaussianMap,
    frame: Frame,
    pose: Pose,
    silhouette: np.ndarray,
    depth_rendered: np.ndarray,
    settings: MapSettings | None = None,
) -> GaussianMap:
    """Grow the map where the current render fails to explain the frame.

    A pixel spawns a Gaussian when the silhouette is thin there, or when the
    rendered depth disagrees with the pseudo-depth by more than a relative
    threshold. Both images must come from a render of `gmap` at `pose`.
    """
    cfg = settings or MapSettings()
    sil = np.asarray(silhouette, dtype=np.float64)
    dr = np.asarray(depth_rendered, dtype=np.float64)
    d = frame.depth.values
    uncovered = sil < cfg.tau_sil
    # only trust the rendered depth where the map actually covers the pixel
    depth_off = (~uncovered) & (np.abs(dr - d) > cfg.tau_depth * d)
    select = frame.depth.valid & (uncovered | depth_off)
    batch = init_from_depth(
        frame, pose, mask=select, stride=cfg.densify_stride,
        o_init=cfg.o_init, s_init=cfg.s_init,
    )
    gmap.extend(batch, created=frame.index)
    return gmap


def prune(gmap: GaussianMap, settings: MapSettings | None = None) -> GaussianMap:
    cfg = settings or MapSettings()
    keep = (
        (gmap.opacity >= cfg.tau_prune)
        & (gmap.radius >= cfg.r_min)
        & (gmap.radius <= cfg.r_max)
    )
    gmap.mu = gmap.mu[keep]
    gmap.radius = gmap.radius[keep]
    gmap.opacity = gmap.opacity[keep]
    gmap.color = gmap.color[keep]
    gmap.created = gmap.created[keep]
    return gmap
