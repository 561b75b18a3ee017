"""Feed-forward tracking front end.

Per new frame: extrapolate the pose by translation inertia, sample extra
viewpoints on a sphere around the extrapolated position, render the map from
each sample, and hand one correspondence edge per view to the fixed-depth
pose solver. The real previous frame contributes the single edge a plain
two-view tracker would have; the rendered views add baseline diversity that
dilutes bad flow on any one edge.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dba import DbaEdge, DbaProblem, DbaSettings, DbaSolution, solve
from .flow import FlowRequest, corrected_correspondence
from .frame import Frame
from .gaussian_map import GaussianMap
from .geometry import DepthMap, Intrinsics, Pose, correspondence_field
from .renderer import render

SIL_COVERED = 0.5      # a pixel counts as covered above this silhouette
MIN_COVERAGE = 0.2     # rendered nodes covering less than this are dropped
RENDERED_SOURCE_BASE = 1_000_000  # flow-request ids for rendered nodes


class GraphError(ValueError):
    pass


@dataclass
class SamplingSettings:
    n_nodes: int = 6           # 1 real edge + n_nodes-1 rendered ones
    alpha: float = 5.0         # sphere radius per unit of inertia step
    theta_deg: float = 30.0    # cone half-angle around the inertia direction
    seed: int = 0
    rho_min: float = 0.01      # sphere radius when the camera was still
    literal_offsets: bool = False  # sample about the origin, not T_{t-1}

    def __post_init__(self):
        if self.n_nodes < 1:
            raise GraphError("need at least one node")
        if self.alpha <= 0:
            raise GraphError("alpha must be positive")
        if not 0.0 <= self.theta_deg <= 90.0:
            raise GraphError("theta must be in [0, 90] degrees")


@dataclass(frozen=True)
class GraphNode:
    pose: Pose
    color: np.ndarray        # (h, w, 3) at the coarse grid
    depth: np.ndarray        # (h, w) meters, 0 where unknown
    depth_valid: np.ndarray  # (h, w)
    silhouette: np.ndarray   # (h, w), ones for the real frame
    is_real: bool
    sample_index: int        # position in the sample list, -1 for the real frame


def inertia_extrapolate(g_prev: Pose, g_prev2: Pose) -> Pose:
    """Constant translational velocity; the rotation is carried over."""
    return Pose(g_prev.q, 2.0 * g_prev.t - g_prev2.t)


def _azimuth_basis(u: np.ndarray):
    helper = np.array([0.0, 0.0, 1.0])
    if abs(u @ helper) > 0.9:
        helper = np.array([0.0, 1.0, 0.0])
    e1 = np.cross(u, helper)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(u, e1)


def spherical_sample(g_prev: Pose, g_prev2: Pose,
                     settings: SamplingSettings, salt: int = 0) -> list:
    """n_nodes-1 poses on the sphere of radius rho about T_{t-1}.

    Directions sit at exactly theta from the inertia direction, equally
    spaced in azimuth with a random phase drawn from (seed, salt). A still
    camera gets a small sphere around its forward axis instead.
    """
    n = settings.n_nodes - 1
    if n <= 0:
        return []
    dt = g_prev.t - g_prev2.t
    step = np.linalg.norm(dt)
    if step < 1e-9:
        u = g_prev.rotation @ np.array([0.0, 0.0, 1.0])
        rho = settings.rho_min
    else:
        u = dt / step
        rho = settings.alpha * step
    theta = np.deg2rad(settings.theta_deg)
    e1, e2 = _azimuth_basis(u)
    phase = np.random.default_rng([settings.seed, salt]).uniform(0.0, 2 * np.pi)
    base = np.zeros(3) if settings.literal_offsets else g_prev.t
    out = []
    for k in range(n):
        az = phase + 2.0 * np.pi * k / n
        v = (np.cos(theta) * u
             + np.sin(theta) * (np.cos(az) * e1 + np.sin(az) * e2))
        out.append(Pose(g_prev.q, base + rho * v))
    return out


def coarse_view(arr: np.ndarray, divisor: int) -> np.ndarray:
    """Nearest-sample downscale matching Intrinsics.downscaled pixel centers."""
    if divisor == 1:
        return arr
    h, w = arr.shape[0] // divisor, arr.shape[1] // divisor
    off = (divisor - 1) // 2
    return arr[off::divisor, off::divisor][:h, :w]


def build_graph(gmap: GaussianMap, prev_frame, samples, K: Intrinsics,
                divisor: int = 8) -> list:
    """Node 0 is the real previous frame; the rest are coarse map renders."""
    if len(gmap) == 0:
        raise GraphError("cannot build a graph from an empty map")
    frame, pose = prev_frame
    if (frame.intrinsics.width, frame.intrinsics.height) != (K.width, K.height):
        raise GraphError("previous frame resolution does not match intrinsics")
    Kc = K.downscaled(divisor)
    depth_c = coarse_view(frame.depth.values, divisor)
    valid_c = coarse_view(frame.depth.valid, divisor)
    nodes = [GraphNode(
        pose=pose,
        color=coarse_view(frame.rgb, divisor),
        depth=np.where(valid_c, depth_c, 0.0),
        depth_valid=valid_c,
        silhouette=np.ones((Kc.height, Kc.width)),
        is_real=True,
        sample_index=-1,
    )]
    for k, sample in enumerate(samples):
        out = render(gmap, sample, Kc)
        covered = out.silhouette > SIL_COVERED
        if covered.mean() < MIN_COVERAGE:
            continue
        nodes.append(GraphNode(
            pose=sample,
            color=out.color,
            depth=np.where(covered, out.depth, 0.0),
            depth_valid=covered,
            silhouette=out.silhouette,
            is_real=False,
            sample_index=k,
        ))
    return nodes


def feedforward_track(gmap: GaussianMap, priors, target: Frame, flow_provider,
                      settings: SamplingSettings | None = None,
                      divisor: int = 8,
                      dba_settings: DbaSettings | None = None,
                      outer_rounds: int = 3):
    """One tracked pose without any gradient descent on the map.

    priors is a sequence of (Frame, Pose) already tracked; the last one
    donates the real edge, the last two the inertia extrapolation. With a
    single prior the motion model degrades to identity and the sampling
    sphere to its minimal radius.

    Each outer round rebuilds the prior correspondence fields at the current
    estimate and asks the flow provider again; providers whose corrections
    are independent of the prior make rounds past the first cheap no-ops.
    Providers with prior_free=True store absolute displacements from the
    source grid, so their prior is built at zero motion instead.
    """
    settings = settings or SamplingSettings()
    if len(priors) == 0:
        raise GraphError("tracking needs at least one posed prior frame")
    if outer_rounds < 1:
        raise GraphError("need at least one refinement round")
    prev_frame, prev_pose = priors[-1]
    prev2_pose = priors[-2][1] if len(priors) >= 2 else prev_pose
    estimate = inertia_extrapolate(prev_pose, prev2_pose)
    samples = spherical_sample(prev_pose, prev2_pose, settings,
                               salt=target.index)
    K = target.intrinsics
    Kc = K.downscaled(divisor)
    nodes = build_graph(gmap, (prev_frame, prev_pose), samples, K, divisor)
    prior_free = getattr(flow_provider, "prior_free", False)
    solution = None
    for _ in range(outer_rounds):
        edges = []
        for node in nodes:
            depth = DepthMap(node.depth, node.depth_valid)
            prior_at = node.pose if prior_free else estimate
            prior_field = correspondence_field(depth, node.pose, prior_at, Kc)
            source_index = (prev_frame.index if node.is_real
                            else RENDERED_SOURCE_BASE + node.sample_index)
            flow = flow_provider(FlowRequest(
                source_index=source_index,
                target_index=target.index,
                prior=prior_field,
                divisor=divisor,
                source_pose=node.pose,
                source_depth=node.depth,
            ))
            p_star = corrected_correspondence(prior_field, flow)
            edges.append(DbaEdge(node.pose, node.depth, p_star,
                                 flow.confidence))
        solution = solve(DbaProblem(edges, estimate, Kc,
                                    dba_settings or DbaSettings()))
        estimate = solution.pose
    return estimate, solution
