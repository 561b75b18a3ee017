"""Dense correspondence providers: flow corrections plus confidences.

A provider stands in for a learned optical-flow module. Given a prior
correspondence field (where the current pose/depth estimates say each source
pixel lands in the target image) it returns per-pixel corrections toward the
true correspondence and per-axis confidence weights. Two implementations:

  - OracleFlowProvider: uses the synthetic scene's ground truth, with
    configurable Gaussian noise and outlier contamination. The correction
    target is the edge's own source geometry (its depth map and pose)
    transported to the target's true pose, so a noise-free oracle is exactly
    consistent with the solver's reprojection model regardless of how the
    source depth was produced.
  - FileFlowProvider: reads precomputed fields from disk, for running with
    the output of an external network.

A provider's `prior_free` attribute declares what its corrections are
measured against. An oracle sees the request's prior field and returns the
residual toward the truth (prior_free=False). A file on disk was written
before any prior existed, so its corrections are absolute displacements
from the source pixel grid (prior_free=True); the tracker must pair such
fields with a zero-motion prior, which is exactly that grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fileio import FileFormatError, read_flow
from .geometry import GeometryError, Intrinsics, PixelField, Pose
from .synthetic import SyntheticScene, transport_visibility

ALLOWED_DIVISORS = (1, 2, 4, 8)


@dataclass(frozen=True)
class FlowField:
    corrections: np.ndarray  # (H, W, 2) pixels
    confidence: np.ndarray   # (H, W, 2) per-axis weights, >= 0
    valid: np.ndarray        # (H, W)

    def __post_init__(self):
        corr = np.asarray(self.corrections, dtype=np.float64)
        conf = np.asarray(self.confidence, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if corr.shape[:2] != valid.shape or corr.shape != conf.shape:
            raise GeometryError("flow field shape mismatch")
        if not np.isfinite(conf).all() or (conf < 0).any():
            raise GeometryError("confidences must be finite and >= 0")
        if not np.isfinite(corr[valid]).all():
            raise GeometryError("corrections must be finite where valid")
        object.__setattr__(self, "corrections", corr)
        object.__setattr__(self, "confidence", conf)
        object.__setattr__(self, "valid", valid)


@dataclass(frozen=True)
class FlowRequest:
    """One edge's worth of correspondence work, at coarse resolution.

    The prior field and source depth live on the grid of
    intrinsics.downscaled(divisor). source_pose is the pose the source
    geometry is lifted with: the tracked pose for a real frame, the exact
    sampled pose for a rendered node.
    """

    source_index: int
    target_index: int
    prior: PixelField
    divisor: int
    source_pose: Pose
    source_depth: np.ndarray

    def __post_init__(self):
        if self.divisor not in ALLOWED_DIVISORS:
            raise GeometryError(f"divisor must be one of {ALLOWED_DIVISORS}")


@dataclass
class FlowNoise:
    sigma_px: float = 0.0
    outlier_frac: float = 0.0
    outlier_confident: bool = True  # stress case: outliers keep confidence 1
    benign_confidence: float = 0.05


class OracleFlowProvider:
    """Perfect (optionally corrupted) correspondences from scene geometry.

    gauge maps the caller's world frame into scene coordinates. A tracker
    that anchors its world at its first camera passes that camera's true
    pose here; callers already working in scene coordinates leave it unset.
    """

    prior_free = False

    def __init__(self, scene: SyntheticScene, gt_poses, K: Intrinsics,
                 noise: FlowNoise | None = None, seed: int = 0,
                 gauge: Pose | None = None):
        self.scene = scene
        self.gt_poses = list(gt_poses)
        self.K = K
        self.noise = noise or FlowNoise()
        self.seed = seed
        self.gauge = gauge

    def __call__(self, req: FlowRequest) -> FlowField:
        if req.target_index >= len(self.gt_poses):
            raise IndexError(f"no ground-truth pose for frame {req.target_index}")
        Kc = self.K.downscaled(req.divisor)
        target_gt = self.gt_poses[req.target_index]
        source_pose = (req.source_pose if self.gauge is None
                       else self.gauge.compose(req.source_pose))
        coords, valid_t, visible = transport_visibility(
            self.scene, req.source_depth, source_pose, target_gt, Kc)
        valid = req.prior.valid & valid_t
        corrections = np.where(valid[..., None],
                               coords - req.prior.coords, 0.0)
        confidence = np.zeros_like(corrections)
        confidence[valid & visible] = 1.0
        rng = np.random.default_rng([self.seed, req.source_index,
                                     req.target_index, req.divisor])
        if self.noise.sigma_px > 0.0:
            corrections = corrections + rng.normal(
                0.0, self.noise.sigma_px, size=corrections.shape)
            corrections[~valid] = 0.0
        if self.noise.outlier_frac > 0.0:
            ys, xs = np.nonzero(valid & visible)
            n_out = int(round(self.noise.outlier_frac * ys.size))
            if n_out > 0:
                pick = rng.choice(ys.size, size=n_out, replace=False)
                corrections[ys[pick], xs[pick]] = rng.uniform(
                    -20.0, 20.0, size=(n_out, 2))
                if not self.noise.outlier_confident:
                    confidence[ys[pick], xs[pick]] = self.noise.benign_confidence
        return FlowField(corrections, confidence, valid)


class FileFlowProvider:
    """Loads fields stored as flow_{source:06d}_{target:06d}.gflw.

    Stored corrections are displacements from the source pixel grid
    (prior_free=True); they only exist for real frame pairs, so runs
    consuming them cannot render extra graph nodes.
    """

    prior_free = True

    def __init__(self, directory):
        self.directory = Path(directory)

    def path_for(self, source_index: int, target_index: int) -> Path:
        return self.directory / f"flow_{source_index:06d}_{target_index:06d}.gflw"

    def __call__(self, req: FlowRequest) -> FlowField:
        path = self.path_for(req.source_index, req.target_index)
        corr, conf, valid = read_flow(path)
        if valid.shape != req.prior.valid.shape:
            raise FileFormatError(
                f"{path}: field is {valid.shape}, request wants "
                f"{req.prior.valid.shape}"
            )
        return FlowField(corr, conf, valid & req.prior.valid)


def load_flow(path) -> FlowField:
    corr, conf, valid = read_flow(path)
    return FlowField(corr, conf, valid)


def corrected_correspondence(prior: PixelField, flow: FlowField) -> PixelField:
    """p* = prior + corrections, masked by both validities."""
    if flow.valid.shape != prior.valid.shape:
        raise GeometryError("flow/prior dimension mismatch")
    valid = prior.valid & flow.valid
    coords = np.where(valid[..., None], prior.coords + flow.corrections, 0.0)
    return PixelField(coords, valid, prior.width, prior.height)
