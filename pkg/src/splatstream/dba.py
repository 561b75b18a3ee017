"""Confidence-weighted Gauss-Newton solve for a single camera pose.

Every edge pairs the frame being solved with a posed neighbor. Depths are
held fixed, so the only unknown is the target pose and the normal equations
are 6x6 with no elimination step. The update is a left perturbation,
G <- exp(xi) . G, with Levenberg damping on the diagonal; steps are accepted
only when the weighted mean residual drops.

Edges come in two directions. In the default one the neighbor is the source:
its depth is lifted and projected into the frame being solved. With
``source_is_target`` the roles swap, the solved frame's own depth is lifted
and lands in the neighbor's image.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import EPS_Z, Intrinsics, PixelField, Pose, exp


class DbaError(ValueError):
    pass


@dataclass(frozen=True)
class DbaEdge:
    neighbor_pose: Pose        # known pose on this edge (world-from-camera)
    source_depth: np.ndarray   # (h, w) meters, at the edge's source frame
    target_coords: PixelField  # corrected correspondences p* in the sink image
    weights: np.ndarray        # (h, w, 2) per-axis confidence
    source_is_target: bool = False  # True: the solved frame is the source


@dataclass
class DbaSettings:
    max_iters: int = 10
    lm_lambda0: float = 1e-4
    lm_up: float = 10.0
    lm_down: float = 0.5
    lm_max: float = 1e10
    eps_dx: float = 1e-8
    huber: bool = False        # optional outlier clamp, off by default
    huber_delta: float = 4.0


@dataclass
class DbaProblem:
    edges: list
    init: Pose
    intrinsics: Intrinsics  # at the edges' coarse resolution
    settings: DbaSettings = field(default_factory=DbaSettings)


@dataclass
class DbaSolution:
    pose: Pose
    residual: float          # weighted mean squared residual, px^2
    iterations: int
    converged: bool
    history: list            # accepted residual values, non-increasing


def _edge_points(edge: DbaEdge, K: Intrinsics):
    """Source-camera points and flattened targets/weights for one edge."""
    h, w = edge.source_depth.shape
    xs, ys = np.meshgrid(np.arange(w), np.arange(h))
    d = edge.source_depth.reshape(-1)
    pts_cam = np.stack([
        (xs.reshape(-1) - K.cx) * d / K.fx,
        (ys.reshape(-1) - K.cy) * d / K.fy,
        d,
    ], axis=-1)
    valid = edge.target_coords.valid.reshape(-1) & (d > 0)
    target = edge.target_coords.coords.reshape(-1, 2)
    weights = edge.weights.reshape(-1, 2) * valid[:, None]
    return pts_cam, target, weights


def _project_edge(edge: DbaEdge, G_t: Pose, K: Intrinsics):
    """Residuals for one edge at the current pose estimate.

    Returns (r, w, front, Xw, Xt, sink) where Xw are world points, Xt the
    points in the sink camera, and sink the pose whose image the residual
    lives in. Pixels mapping behind the sink camera get zero weight.
    """
    pts_cam, target, weights = _edge_points(edge, K)
    if edge.source_is_target:
        Xw = G_t.apply(pts_cam)       # moves with the unknown
        sink = edge.neighbor_pose
    else:
        Xw = edge.neighbor_pose.apply(pts_cam)
        sink = G_t
    R = sink.rotation
    Xt = (Xw - sink.t) @ R
    z = Xt[:, 2]
    front = z > EPS_Z
    zs = np.where(front, z, 1.0)
    u = np.stack([K.fx * Xt[:, 0] / zs + K.cx,
                  K.fy * Xt[:, 1] / zs + K.cy], axis=-1)
    r = np.where(front[:, None], target - u, 0.0)
    w = weights * front[:, None]
    return r, w, front, Xw, Xt, sink


def residuals_and_jacobian(edge: DbaEdge, G_t: Pose, K: Intrinsics):
    """Per-pixel residual r = p* - project(sink-frame point), its 2x6
    Jacobian w.r.t. a left perturbation of G_t, and the weights."""
    r, w, front, Xw, Xt, sink = _project_edge(edge, G_t, K)
    R = sink.rotation
    z = np.where(front, Xt[:, 2], 1.0)

    # du/dXt, rows of the projection Jacobian
    inv_z = 1.0 / z
    n = Xw.shape[0]
    du = np.zeros((n, 2, 3))
    du[:, 0, 0] = K.fx * inv_z
    du[:, 0, 2] = -K.fx * Xt[:, 0] * inv_z**2
    du[:, 1, 1] = K.fy * inv_z
    du[:, 1, 2] = -K.fy * Xt[:, 1] * inv_z**2

    # neighbor source: Xt(xi) ~ R^T((Xw - t) - [w]x Xw - v), so
    #   dXt/dw = R^T [Xw]x, dXt/dv = -R^T.
    # solved-frame source: Xw(xi) ~ Xw + [w]x Xw + v moves instead, giving
    #   dXt/dw = -R^T [Xw]x, dXt/dv = +R^T. Same blocks, opposite sign.
    hat = np.zeros((n, 3, 3))
    hat[:, 0, 1] = -Xw[:, 2]
    hat[:, 0, 2] = Xw[:, 1]
    hat[:, 1, 0] = Xw[:, 2]
    hat[:, 1, 2] = -Xw[:, 0]
    hat[:, 2, 0] = -Xw[:, 1]
    hat[:, 2, 1] = Xw[:, 0]
    sign = -1.0 if edge.source_is_target else 1.0
    dXt = np.empty((n, 3, 6))
    dXt[:, :, :3] = sign * np.einsum("ab,nbc->nac", R.T, hat)
    dXt[:, :, 3:] = (-sign) * np.broadcast_to(R.T, (n, 3, 3))
    J = -np.einsum("nab,nbc->nac", du, dXt)  # residual = target - u
    J[~front] = 0.0
    return r, J, w


def _weighted_residual(edges, pose: Pose, K: Intrinsics, settings: DbaSettings):
    num = 0.0
    den = 0.0
    for edge in edges:
        r, w, _, _, _, _ = _project_edge(edge, pose, K)
        if settings.huber:
            w = w * _huber_factor(r, settings.huber_delta)
        num += float(np.sum(w * r * r))
        den += float(np.sum(w))
    if den == 0.0:
        raise DbaError("all confidence weights are zero")
    return num / den


def _huber_factor(r: np.ndarray, delta: float) -> np.ndarray:
    norm = np.hypot(r[:, 0], r[:, 1])
    f = np.ones_like(norm)
    big = norm > delta
    f[big] = delta / norm[big]
    return f[:, None]


def solve(problem: DbaProblem) -> DbaSolution:
    if len(problem.edges) < 1:
        raise DbaError("need at least one edge")
    K = problem.intrinsics
    s = problem.settings
    pose = problem.init
    res = _weighted_residual(problem.edges, pose, K, s)
    best_pose, best_res = pose, res
    history = [res]
    lam = s.lm_lambda0
    iters = 0
    for iters in range(1, s.max_iters + 1):
        H = np.zeros((6, 6))
        b = np.zeros(6)
        for edge in problem.edges:
            r, J, w = residuals_and_jacobian(edge, pose, K)
            if s.huber:
                w = w * _huber_factor(r, s.huber_delta)
            H += np.einsum("nci,nc,ncj->ij", J, w, J)
            b -= np.einsum("nci,nc->i", J, w * r)
        stepped = False
        while lam <= s.lm_max:
            damped = H + lam * np.diag(np.diag(H))
            try:
                xi = np.linalg.solve(damped, b)
            except np.linalg.LinAlgError:
                lam *= s.lm_up
                continue
            if not np.isfinite(xi).all():
                lam *= s.lm_up
                continue
            if np.linalg.norm(xi) < s.eps_dx:
                # stationary: the remaining update is below resolution
                return DbaSolution(best_pose, best_res, iters, True, history)
            candidate = exp(xi).compose(pose)
            cand_res = _weighted_residual(problem.edges, candidate, K, s)
            if cand_res < res:
                pose, res = candidate, cand_res
                history.append(res)
                lam = max(lam * s.lm_down, 1e-12)
                stepped = True
                break
            lam *= s.lm_up
        if not stepped:
            # no descent direction left at maximum damping
            return DbaSolution(best_pose, best_res, iters, False, history)
        if res < best_res:
            best_pose, best_res = pose, res
    return DbaSolution(best_pose, best_res, iters, True, history)
