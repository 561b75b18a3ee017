"""Alternating refinement: map parameters over a keyframe window, or a
single camera pose against the current map.

mapping_step runs plain per-parameter gradient descent on the summed masked
L1 image + depth loss over the window, poses held fixed. track_iterative is
the render-and-descend pose baseline the feed-forward tracker is measured
against: gradient steps on the se(3) tangent, loss restricted to well-seen
pixels. Both are deterministic and line-search free; learning rates are the
knobs, and the best-seen state is what comes back.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .frame import Frame
from .gaussian_map import GaussianMap
from .geometry import Pose, exp
from .renderer import LossSpec, evaluate_loss, render, render_with_gradients


class OptimError(ValueError):
    pass


class KeyframeWindow:
    """Ordered (frame, pose) pairs, newest last, capped at max_size."""

    def __init__(self, max_size: int = 8):
        if max_size < 1:
            raise OptimError(f"window size must be >= 1, got {max_size}")
        self.max_size = max_size
        self._entries: list[tuple[Frame, Pose]] = []

    def push(self, frame: Frame, pose: Pose) -> None:
        self._entries.append((frame, pose))
        if len(self._entries) > self.max_size:
            del self._entries[0]

    @property
    def latest(self) -> tuple[Frame, Pose]:
        if not self._entries:
            raise OptimError("empty keyframe window")
        return self._entries[-1]

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)


@dataclass
class OptimSettings:
    it_map: int = 60
    it_track: int = 40
    lr_mu: float = 1e-4
    lr_radius: float = 1e-3
    lr_opacity: float = 5e-2
    lr_color: float = 2.5e-3
    lr_pose_rot: float = 2e-3
    lr_pose_trans: float = 1e-3
    lambda_img: float = 1.0
    lambda_dep: float = 0.5
    sil_thresh: float = 0.99

    def __post_init__(self):
        if self.it_map < 1 or self.it_track < 1:
            raise OptimError("iteration counts must be >= 1")
        rates = (self.lr_mu, self.lr_radius, self.lr_opacity, self.lr_color,
                 self.lr_pose_rot, self.lr_pose_trans,
                 self.lambda_img, self.lambda_dep)
        if any(not r > 0.0 for r in rates):
            raise OptimError("learning rates and loss weights must be positive")
        if not 0.0 < self.sil_thresh < 1.0:
            raise OptimError(
                f"silhouette threshold outside (0,1): {self.sil_thresh}")


def _map_spec(frame: Frame, s: OptimSettings) -> LossSpec:
    return LossSpec(target_rgb=frame.rgb, target_depth=frame.depth,
                    lambda_img=s.lambda_img, lambda_dep=s.lambda_dep)


def window_loss(gmap: GaussianMap, window: KeyframeWindow,
                settings: OptimSettings | None = None) -> float:
    """Summed mapping loss over the window at its fixed poses."""
    s = settings or OptimSettings()
    if len(window) == 0:
        raise OptimError("empty keyframe window")
    return sum(
        evaluate_loss(gmap, pose, frame.intrinsics, _map_spec(frame, s))
        for frame, pose in window
    )


def _snapshot(gmap: GaussianMap):
    return (gmap.mu.copy(), gmap.radius.copy(),
            gmap.opacity.copy(), gmap.color.copy())


def _restore(gmap: GaussianMap, state) -> None:
    gmap.mu, gmap.radius, gmap.opacity, gmap.color = state


def mapping_step(gmap: GaussianMap, window: KeyframeWindow,
                 settings: OptimSettings | None = None) -> GaussianMap:
    """it_map descent steps on the window loss; poses fixed, map mutated.

    Steps are plain per-parameter GD with clamping after each update, so a
    late step can overshoot; the lowest-loss state seen wins.
    """
    s = settings or OptimSettings()
    if len(window) == 0:
        raise OptimError("empty keyframe window")
    n = len(gmap)
    best_loss = np.inf
    best_state = None
    for _ in range(s.it_map):
        loss = 0.0
        d_mu = np.zeros((n, 3))
        d_radius = np.zeros(n)
        d_opacity = np.zeros(n)
        d_color = np.zeros((n, 3))
        for frame, pose in window:
            li, gi, _ = render_with_gradients(
                gmap, pose, frame.intrinsics, _map_spec(frame, s))
            loss += li
            d_mu += gi.d_mu
            d_radius += gi.d_radius
            d_opacity += gi.d_opacity
            d_color += gi.d_color
        if loss < best_loss:
            best_loss = loss
            best_state = _snapshot(gmap)
        gmap.mu -= s.lr_mu * d_mu
        gmap.radius -= s.lr_radius * d_radius
        gmap.opacity -= s.lr_opacity * d_opacity
        gmap.color -= s.lr_color * d_color
        gmap.clamp_()
    if window_loss(gmap, window, s) > best_loss and best_state is not None:
        _restore(gmap, best_state)
    return gmap


def track_iterative(gmap: GaussianMap, frame: Frame, init: Pose,
                    settings: OptimSettings | None = None) -> Pose:
    """Descend the masked frame loss on the se(3) tangent; best pose wins.

    The loss only counts pixels the map already explained at the starting
    pose (silhouette above sil_thresh there). Freezing the mask keeps the
    objective a fixed function of pose: re-masking per candidate would let
    any pose that hides badly-explained pixels undercut better poses.
    """
    s = settings or OptimSettings()
    if len(gmap) == 0:
        raise OptimError("empty map")
    seen = render(gmap, init, frame.intrinsics).silhouette > s.sil_thresh
    if not seen.any():
        # nothing the map can say about this frame; keep the prior pose
        return init
    spec = LossSpec(target_rgb=frame.rgb, target_depth=frame.depth,
                    lambda_img=s.lambda_img, lambda_dep=s.lambda_dep,
                    mask=seen)
    pose = init
    best_loss = np.inf
    best_pose = init
    for _ in range(s.it_track):
        loss, grads, _ = render_with_gradients(
            gmap, pose, frame.intrinsics, spec)
        if loss < best_loss:
            best_loss = loss
            best_pose = pose
        xi = np.empty(6)
        xi[:3] = -s.lr_pose_rot * grads.d_pose[:3]
        xi[3:] = -s.lr_pose_trans * grads.d_pose[3:]
        pose = exp(xi).compose(pose)
    if evaluate_loss(gmap, pose, frame.intrinsics, spec) < best_loss:
        best_pose = pose
    return best_pose
