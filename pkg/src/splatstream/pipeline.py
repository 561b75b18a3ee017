"""The online loop: depth in, pose out, map growing behind.

Each frame is tracked against the current map (feed-forward by default,
iterative descent as the baseline arm), then the map is densified and
refined over a small keyframe window. Depth arrives from a provider so the
same loop runs on synthetic oracles and on precomputed files.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dba import DbaSettings
from .fileio import read_depth_png
from .flow import FlowNoise, OracleFlowProvider
from .frame import Frame
from .gaussian_map import (
    GaussianMap,
    MapSettings,
    densify,
    init_from_depth,
    prune,
)
from .geometry import DepthMap, Intrinsics, Pose
from .local_graph import SamplingSettings, feedforward_track, inertia_extrapolate
from .optimizer import KeyframeWindow, OptimSettings, mapping_step, track_iterative
from .renderer import render
from .synthetic import (
    gt_depth,
    look_at,
    make_scene,
    orbit_trajectory,
    render_synthetic,
)

TRACKERS = ("feedforward", "feedforward_no_lgr", "iterative")


class PipelineError(ValueError):
    pass


# ---------------------------------------------------------------- depth in


@dataclass
class DepthNoise:
    """Multiplicative log-normal error plus a fraction of gross outliers."""

    sigma: float = 0.02
    outlier_frac: float = 0.0

    def __post_init__(self):
        if self.sigma < 0.0:
            raise PipelineError("depth sigma must be >= 0")
        if not 0.0 <= self.outlier_frac <= 1.0:
            raise PipelineError("outlier fraction must be in [0, 1]")


class OracleDepthProvider:
    """Ray-cast depth of a synthetic scene, corrupted like an estimator's.

    Outlier pixels keep a positive depth but lose the 2% error model: they
    get squashed or stretched by up to a factor of two.
    """

    def __init__(self, scene, gt_poses, K: Intrinsics,
                 noise: DepthNoise | None = None, seed: int = 0):
        self.scene = scene
        self.gt_poses = list(gt_poses)
        self.K = K
        self.noise = noise or DepthNoise()
        self.seed = seed

    def provide(self, index: int) -> DepthMap:
        if index >= len(self.gt_poses):
            raise PipelineError(f"no ground-truth pose for frame {index}")
        exact = gt_depth(self.scene, self.gt_poses[index], self.K)
        values = exact.values.copy()
        rng = np.random.default_rng([self.seed, index])
        if self.noise.sigma > 0.0:
            values = values * rng.lognormal(0.0, self.noise.sigma,
                                            size=values.shape)
        if self.noise.outlier_frac > 0.0:
            ys, xs = np.nonzero(exact.valid)
            n_out = int(round(self.noise.outlier_frac * ys.size))
            if n_out > 0:
                pick = rng.choice(ys.size, size=n_out, replace=False)
                factor = np.exp(rng.uniform(-np.log(2.0), np.log(2.0),
                                            size=n_out))
                values[ys[pick], xs[pick]] *= factor
        return DepthMap(np.where(exact.valid, values, 0.0), exact.valid)


class FileDepthProvider:
    """Depth PNGs named depth_{index:06d}.png in one directory."""

    def __init__(self, directory):
        self.directory = Path(directory)

    def provide(self, index: int) -> DepthMap:
        return read_depth_png(self.directory / f"depth_{index:06d}.png")


class SequenceDepthProvider:
    """Serves a dataset's own depth images as the pseudo-depth stream."""

    def __init__(self, sequence):
        self.sequence = sequence

    def provide(self, index: int) -> DepthMap:
        return read_depth_png(self.sequence.entries[index].depth_path)


# ------------------------------------------------------------- points out


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray  # (M, 3) world coordinates
    colors: np.ndarray  # (M, 3) in [0, 1]

    def __len__(self) -> int:
        return self.points.shape[0]


def emit_pointcloud(frame: Frame, pose: Pose, stride: int = 1) -> PointCloud:
    """World-frame backprojection of every stride-th valid depth pixel."""
    if stride < 1:
        raise PipelineError("stride must be >= 1")
    K = frame.intrinsics
    d = frame.depth.values[::stride, ::stride]
    valid = frame.depth.valid[::stride, ::stride]
    ys, xs = np.nonzero(valid)
    if ys.size == 0:
        return PointCloud(np.zeros((0, 3)), np.zeros((0, 3)))
    px = xs * stride
    py = ys * stride
    z = d[ys, xs]
    cam = np.stack([(px - K.cx) * z / K.fx, (py - K.cy) * z / K.fy, z],
                   axis=1)
    colors = frame.rgb[::stride, ::stride][ys, xs]
    return PointCloud(pose.apply(cam), colors.copy())


# ------------------------------------------------------------------ state


@dataclass
class PipelineSettings:
    tracker: str = "feedforward"
    divisor: int = 8           # coarse grid for graph edges and flow
    outer_rounds: int = 3      # flow re-query rounds inside the tracker
    n_kf: int = 5              # admit every n_kf-th frame as a keyframe
    k_w: int = 8               # keyframe window capacity
    map_every: int = 1         # run the window refinement every so many frames
    densify_every: int = 1
    emit_stride: int = 1
    fallback_residual: float = 25.0  # px^2 weighted mean; above it, coast
    seed: int = 0
    sampling: SamplingSettings = field(default_factory=SamplingSettings)
    optim: OptimSettings = field(default_factory=OptimSettings)
    map: MapSettings = field(default_factory=MapSettings)
    dba: DbaSettings = field(default_factory=DbaSettings)

    def __post_init__(self):
        if self.tracker not in TRACKERS:
            raise PipelineError(
                f"tracker must be one of {TRACKERS}, got {self.tracker!r}")
        for name in ("outer_rounds", "n_kf", "k_w", "map_every",
                     "densify_every", "emit_stride"):
            if getattr(self, name) < 1:
                raise PipelineError(f"{name} must be >= 1")
        if self.fallback_residual <= 0.0:
            raise PipelineError("fallback_residual must be positive")


@dataclass(frozen=True)
class StepDiagnostics:
    index: int
    fallback: bool
    dba_residual: float | None   # None for bootstrap and iterative frames
    dba_converged: bool | None
    track_s: float
    map_s: float
    map_size: int


@dataclass
class PipelineState:
    intrinsics: Intrinsics
    depth_provider: object
    settings: PipelineSettings
    flow_provider: object | None = None
    gmap: GaussianMap = field(default_factory=GaussianMap)
    trajectory: list = field(default_factory=list)
    stamps: list = field(default_factory=list)
    timings: list = field(default_factory=list)       # (track_s, map_s)
    diagnostics: list = field(default_factory=list)
    window: KeyframeWindow = None
    recent: list = field(default_factory=list)        # last two (Frame, Pose)

    def __post_init__(self):
        if self.window is None:
            self.window = KeyframeWindow(self.settings.k_w)
        if self.settings.tracker != "iterative" and self.flow_provider is None:
            raise PipelineError(
                "feed-forward tracking needs a flow provider")


def make_state(intrinsics: Intrinsics, depth_provider,
               flow_provider=None,
               settings: PipelineSettings | None = None) -> PipelineState:
    return PipelineState(intrinsics=intrinsics,
                         depth_provider=depth_provider,
                         settings=settings or PipelineSettings(),
                         flow_provider=flow_provider)


# ------------------------------------------------------------------- loop


def _track(state: PipelineState, frame: Frame):
    """(pose, fallback, residual, converged) for a non-bootstrap frame."""
    s = state.settings
    prev_pose = state.recent[-1][1]
    prev2_pose = state.recent[-2][1] if len(state.recent) >= 2 else prev_pose
    if s.tracker == "iterative":
        # descent only polishes, so seed it with full constant velocity
        # (rotation included), the usual convention for render-based tracking
        rel = prev2_pose.inverse().compose(prev_pose)
        pose = track_iterative(state.gmap, frame, prev_pose.compose(rel),
                               s.optim)
        return pose, False, None, None
    guess = inertia_extrapolate(prev_pose, prev2_pose)
    sampling = s.sampling
    if s.tracker == "feedforward_no_lgr":
        sampling = replace(sampling, n_nodes=1)
    pose, sol = feedforward_track(
        state.gmap, state.recent, frame, state.flow_provider,
        settings=sampling, divisor=s.divisor, dba_settings=s.dba,
        outer_rounds=s.outer_rounds)
    if not sol.converged or sol.residual > s.fallback_residual:
        return guess, True, sol.residual, sol.converged
    return pose, False, sol.residual, sol.converged


def step(state: PipelineState, rgb: np.ndarray,
         timestamp: float) -> tuple[Pose, PointCloud, StepDiagnostics]:
    s = state.settings
    t = len(state.trajectory)
    depth = state.depth_provider.provide(t)
    frame = Frame(t, timestamp, rgb, depth, state.intrinsics)

    t0 = time.perf_counter()
    if t == 0:
        pose, fellback, residual, converged = Pose.identity(), False, None, None
    else:
        pose, fellback, residual, converged = _track(state, frame)
    track_s = time.perf_counter() - t0

    t0 = time.perf_counter()
    if t == 0:
        state.gmap.extend(
            init_from_depth(frame, pose, stride=s.map.stride,
                            o_init=s.map.o_init, s_init=s.map.s_init),
            created=t)
    elif t % s.densify_every == 0:
        out = render(state.gmap, pose, state.intrinsics)
        state.gmap = densify(state.gmap, frame, pose, out.silhouette,
                             out.depth, s.map)
    if t % s.map_every == 0:
        scratch = KeyframeWindow(s.k_w + 1)
        for entry in state.window:
            scratch.push(*entry)
        scratch.push(frame, pose)
        mapping_step(state.gmap, scratch, s.optim)
        state.gmap = prune(state.gmap, s.map)
    if t % s.n_kf == 0:
        state.window.push(frame, pose)
    map_s = time.perf_counter() - t0

    cloud = emit_pointcloud(frame, pose, s.emit_stride)
    diag = StepDiagnostics(index=t, fallback=fellback, dba_residual=residual,
                           dba_converged=converged, track_s=track_s,
                           map_s=map_s, map_size=len(state.gmap))
    state.trajectory.append(pose)
    state.stamps.append(timestamp)
    state.timings.append((track_s, map_s))
    state.diagnostics.append(diag)
    state.recent = (state.recent + [(frame, pose)])[-2:]
    return pose, cloud, diag


@dataclass
class RunReport:
    trajectory: list
    stamps: list
    timings: list
    diagnostics: list
    gmap: GaussianMap

    def __len__(self) -> int:
        return len(self.trajectory)

    @property
    def fallback_count(self) -> int:
        return sum(d.fallback for d in self.diagnostics)


def run(state: PipelineState, source) -> RunReport:
    """Streams (rgb, timestamp) pairs through step; empty source is fine."""
    for rgb, timestamp in source:
        step(state, rgb, timestamp)
    return RunReport(trajectory=list(state.trajectory),
                     stamps=list(state.stamps),
                     timings=list(state.timings),
                     diagnostics=list(state.diagnostics),
                     gmap=state.gmap)


# ------------------------------------------------------- synthetic inputs


@dataclass
class SynthSpec:
    """What the built-in generator produces when no dataset is given."""

    kind: str = "orbit"        # orbit | static
    n_frames: int = 100
    radius: float = 2.0
    height: float = 0.25
    sweep_deg: float = 60.0    # total arc; 0 means a parked camera
    ease: bool = True          # smoothstep ramp: start and end at rest
    scene_seed: int = 0
    fps: float = 30.0

    def __post_init__(self):
        if self.kind not in ("orbit", "static"):
            raise PipelineError(f"unknown synthetic kind {self.kind!r}")
        if self.n_frames < 0:
            raise PipelineError("n_frames must be >= 0")
        if self.radius <= 0.0 or self.fps <= 0.0:
            raise PipelineError("radius and fps must be positive")


@dataclass(frozen=True)
class SynthInputs:
    scene: object
    poses: list
    stamps: list
    intrinsics: Intrinsics
    depth_provider: OracleDepthProvider
    flow_provider: OracleFlowProvider

    def frames(self):
        for pose, stamp in zip(self.poses, self.stamps):
            rgb, _ = render_synthetic(self.scene, pose, self.intrinsics)
            yield rgb, stamp

    def gt_entries(self):
        return list(zip(self.stamps, self.poses))


def make_synthetic_inputs(spec: SynthSpec, K: Intrinsics,
                          depth_noise: DepthNoise | None = None,
                          flow_noise: FlowNoise | None = None,
                          seed: int = 0) -> SynthInputs:
    scene = make_scene(spec.scene_seed)
    sweep = 0.0 if spec.kind == "static" else np.deg2rad(spec.sweep_deg)
    if spec.ease and spec.n_frames > 1 and sweep != 0.0:
        # camera starts and ends at rest; a cold tracker has no velocity
        # estimate at frame 1, so a standing start is the realistic case
        u = np.arange(spec.n_frames) / (spec.n_frames - 1)
        angles = sweep * (3.0 * u**2 - 2.0 * u**3)
        poses = []
        for a in angles:
            eye = np.array([spec.radius * np.cos(a), spec.height,
                            spec.radius * np.sin(a)])
            poses.append(look_at(eye, np.zeros(3)))
    else:
        poses = orbit_trajectory(spec.n_frames, radius=spec.radius,
                                 height=spec.height, sweep=sweep)
    stamps = [k / spec.fps for k in range(spec.n_frames)]
    # the loop anchors its world at camera 0, so the oracle needs the true
    # first pose to carry tracker-frame geometry into scene coordinates
    gauge = poses[0] if poses else None
    return SynthInputs(
        scene=scene, poses=poses, stamps=stamps, intrinsics=K,
        depth_provider=OracleDepthProvider(scene, poses, K,
                                           depth_noise or DepthNoise(),
                                           seed=seed),
        flow_provider=OracleFlowProvider(scene, poses, K,
                                         flow_noise or FlowNoise(),
                                         seed=seed, gauge=gauge),
    )
