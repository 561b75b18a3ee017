"""Shared tracking-trial setup: a mapped synthetic room, ground-truth frames,
and helpers to run feed-forward tracking against known poses. Used by the
front-end tests and by the acceptance suite."""

import numpy as np

from conftest import K_DESK
from splatstream.flow import FlowNoise, OracleFlowProvider
from splatstream.frame import Frame
from splatstream.gaussian_map import GaussianMap, init_from_depth
from splatstream.geometry import Pose, log
from splatstream.local_graph import SamplingSettings, feedforward_track
from splatstream.synthetic import (
    constant_velocity_trajectory,
    look_at,
    make_scene,
    render_synthetic,
)


def gt_frame(scene, pose, K, index):
    rgb, depth = render_synthetic(scene, pose, K)
    return Frame(index, float(index) / 30.0, rgb, depth, K)


def build_gt_map(scene, poses, K, stride=1):
    gmap = GaussianMap()
    for i, pose in enumerate(poses):
        frame = gt_frame(scene, pose, K, i)
        gmap.extend(init_from_depth(frame, pose, stride=stride), created=i)
    return gmap


def pose_errors(est: Pose, gt: Pose):
    """(rotation angle rad, translation distance m) between two poses."""
    rel = est.compose(gt.inverse())
    return (float(np.linalg.norm(log(rel)[:3])),
            float(np.linalg.norm(est.t - gt.t)))


def sideways_walk(n_frames: int):
    """Constant-velocity path facing the depth-varied side of the room."""
    start = look_at(np.array([0.7, 0.0, -0.1]), np.array([3.0, 0.5, 1.0]))
    step = np.array([0.002, -0.003, 0.001, 0.012, 0.004, -0.006])
    return constant_velocity_trajectory(n_frames, start, step)


class TrackingSetup:
    """A short ground-truth walk with a map built from its first frames."""

    def __init__(self, n_frames=5, K=K_DESK, scene_seed=0, map_stride=1):
        self.K = K
        self.scene = make_scene(seed=scene_seed)
        self.poses = sideways_walk(n_frames)
        self.frames = [gt_frame(self.scene, p, K, i)
                       for i, p in enumerate(self.poses)]
        self.gmap = build_gt_map(self.scene, self.poses[:max(2, n_frames - 2)],
                                 K, stride=map_stride)

    def provider(self, noise: FlowNoise, seed=0):
        return OracleFlowProvider(self.scene, self.poses, self.K, noise, seed)

    def track(self, t: int, provider, n_nodes=6, divisor=8, seed=0,
              priors=None, **kwargs):
        settings = SamplingSettings(n_nodes=n_nodes, seed=seed)
        if priors is None:
            priors = [(self.frames[t - 2], self.poses[t - 2]),
                      (self.frames[t - 1], self.poses[t - 1])]
        return feedforward_track(self.gmap, priors, self.frames[t], provider,
                                 settings, divisor=divisor, **kwargs)


def ab_trial(setup: TrackingSetup, t: int, trial_seed: int, n_nodes: int,
             noise: FlowNoise, divisor=8):
    """One seeded tracking attempt; returns (rot_err, t_err) vs ground truth."""
    provider = setup.provider(noise, seed=trial_seed)
    pose, _ = setup.track(t, provider, n_nodes=n_nodes, divisor=divisor,
                          seed=trial_seed)
    return pose_errors(pose, setup.poses[t])
