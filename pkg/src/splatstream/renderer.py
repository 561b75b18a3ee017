"""Differentiable CPU splatting of the Gaussian map.

Forward: every Gaussian projects to a circular 2D footprint of sigma
r * fbar / z pixels, truncated at 3 sigma; footprints composite front to back
with alpha = o * exp(-d^2 / (2 sigma^2)) clipped to [0, 0.999], terminating
once transmittance drops under 1e-4. Depth is the alpha-weighted mean
normalized by the silhouette. Rendering is a pure function of the map
snapshot and bit-reproducible: splats are traversed in camera-depth order
with the lower map index winning ties.

Backward: analytic gradients of a masked L1 color + depth loss w.r.t. every
Gaussian parameter and the camera pose tangent (left perturbation, rotation
first). The kernel accumulates per-splat image-space partials; the chain
through projection and the pose action happens vectorized out here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _render_kernels as _rk
from .gaussian_map import Gaussian, GaussianMap
from .geometry import EPS_Z, DepthMap, Intrinsics, Pose

# depth normalization guard; rendered depth is 0 where nothing landed
EPS_DIV = 1e-10
# silhouette above this counts as "pixel has geometry" for depth validity
SIL_VALID = 1e-6


@dataclass(frozen=True)
class SplatProjection:
    center_px: np.ndarray  # (2,) pixel coords
    radius_px: float       # footprint sigma in pixels
    depth: float           # camera-frame z, meters


def project_splat(g: Gaussian, camera: Pose, K: Intrinsics):
    """2D footprint of one Gaussian, or None if culled.

    Culling: center behind the camera, or center farther than 3 sigma from
    the pixel rectangle [0, W-1] x [0, H-1].
    """
    X = camera.apply_inverse(g.mu)
    z = X[2]
    if z <= EPS_Z:
        return None
    u = np.array([K.fx * X[0] / z + K.cx, K.fy * X[1] / z + K.cy])
    sigma = g.radius * K.mean_focal / z
    dx = max(0.0, -u[0], u[0] - (K.width - 1))
    dy = max(0.0, -u[1], u[1] - (K.height - 1))
    if dx * dx + dy * dy > (_rk.TRUNC_SIGMAS * sigma) ** 2:
        return None
    return SplatProjection(u, float(sigma), float(z))


class _RenderContext:
    """Everything the backward pass needs, kept off the public dataclass."""

    def __init__(self, keep, order, X, ux, uy, sigma, opac, zcam, col,
                 offsets, csr_splat, csr_T):
        self.keep = keep          # indices into the full map
        self.order = order        # depth order within the compact arrays
        self.X = X                # camera-frame centers, compact
        self.ux, self.uy = ux, uy
        self.sigma = sigma
        self.opac = opac
        self.zcam = zcam
        self.col = col
        self.offsets = offsets
        self.csr_splat = csr_splat
        self.csr_T = csr_T


@dataclass
class RenderOutput:
    color: np.ndarray        # (H, W, 3) in [0, 1]
    depth: np.ndarray        # (H, W) meters, 0 where empty
    silhouette: np.ndarray   # (H, W) accumulated opacity in [0, 1]
    depth_valid: np.ndarray  # (H, W) bool, any geometry at all
    draw: np.ndarray         # (H, W) unnormalized depth sum (internal)
    contrib_offsets: np.ndarray | None = None  # CSR into contrib_splat
    contrib_splat: np.ndarray | None = None    # full-map Gaussian ids
    _ctx: _RenderContext | None = None


@dataclass
class RenderGradients:
    d_mu: np.ndarray       # (N, 3)
    d_radius: np.ndarray   # (N,)
    d_opacity: np.ndarray  # (N,)
    d_color: np.ndarray    # (N, 3)
    d_pose: np.ndarray     # (6,) tangent, rotation first


@dataclass
class LossSpec:
    """Masked L1 photometric + depth objective.

    loss = lambda_img * mean over masked pixels/channels of |C - rgb|
         + lambda_dep * mean over depth-masked pixels of |D - depth|,
    where the depth mask additionally requires target validity and rendered
    silhouette above presence_thresh. Masks are held fixed during a gradient
    evaluation.
    """

    target_rgb: np.ndarray | None = None
    target_depth: DepthMap | None = None
    lambda_img: float = 1.0
    lambda_dep: float = 0.0
    mask: np.ndarray | None = None
    presence_thresh: float = 0.5
    # restrict the whole loss to well-seen pixels (rendered silhouette above
    # this value); None disables. The pose tracker sets it so unmapped regions
    # cannot pull gradients.
    sil_mask_thresh: float | None = None


def _prepare(gmap: GaussianMap, camera: Pose, K: Intrinsics):
    if len(gmap) == 0:
        return None
    X = camera.apply_inverse(gmap.mu)
    z = X[:, 2]
    front = z > EPS_Z
    if not front.any():
        return None
    idx = np.nonzero(front)[0]
    Xf = X[idx]
    zf = z[idx]
    ux = K.fx * Xf[:, 0] / zf + K.cx
    uy = K.fy * Xf[:, 1] / zf + K.cy
    sigma = gmap.radius[idx] * K.mean_focal / zf
    dx = np.maximum(0.0, np.maximum(-ux, ux - (K.width - 1)))
    dy = np.maximum(0.0, np.maximum(-uy, uy - (K.height - 1)))
    on = dx * dx + dy * dy <= (_rk.TRUNC_SIGMAS * sigma) ** 2
    if not on.any():
        return None
    keep = idx[on]
    Xf, zf, ux, uy, sigma = Xf[on], zf[on], ux[on], uy[on], sigma[on]
    order = np.argsort(zf, kind="stable")  # stable: lower map index wins ties
    return keep, order, Xf, ux, uy, sigma, gmap.opacity[keep], zf, \
        np.ascontiguousarray(gmap.color[keep])


def _empty_output(K: Intrinsics) -> RenderOutput:
    H, W = K.height, K.width
    zero = np.zeros((H, W))
    return RenderOutput(
        color=np.zeros((H, W, 3)), depth=zero.copy(), silhouette=zero.copy(),
        depth_valid=np.zeros((H, W), dtype=bool), draw=zero.copy(),
    )


def render(gmap: GaussianMap, camera: Pose, K: Intrinsics,
           contributors: bool = False) -> RenderOutput:
    prep = _prepare(gmap, camera, K)
    if prep is None:
        return _empty_output(K)
    keep, order, X, ux, uy, sigma, opac, zcam, col = prep
    H, W = K.height, K.width
    npix = H * W
    uxo, uyo = ux[order], uy[order]
    sgo, opo, zco, clo = sigma[order], opac[order], zcam[order], col[order]
    clo = np.ascontiguousarray(clo)

    out_color = np.zeros((npix, 3))
    out_draw = np.zeros(npix)
    out_sil = np.zeros(npix)
    counts = np.zeros(npix, dtype=np.int64)
    trans = np.ones(npix)
    dummy_off = np.zeros(1, dtype=np.int64)
    dummy_splat = np.zeros(1, dtype=np.int64)
    dummy_T = np.zeros(1)
    dummy_cur = np.zeros(1, dtype=np.int64)
    _rk.composite(0, uxo, uyo, sgo, opo, zco, clo, H, W,
                  out_color, out_draw, out_sil, trans, counts,
                  dummy_off, dummy_splat, dummy_T, dummy_cur)

    offsets = csr_splat = csr_T = None
    if contributors:
        offsets = np.zeros(npix + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        nnz = int(offsets[-1])
        csr_splat = np.zeros(nnz, dtype=np.int64)
        csr_T = np.zeros(nnz)
        trans2 = np.ones(npix)
        cursor = np.zeros(npix, dtype=np.int64)
        _rk.composite(1, uxo, uyo, sgo, opo, zco, clo, H, W,
                      out_color, out_draw, out_sil, trans2, counts,
                      offsets, csr_splat, csr_T, cursor)

    sil = out_sil.reshape(H, W)
    draw = out_draw.reshape(H, W)
    depth = draw / np.maximum(sil, EPS_DIV)
    out = RenderOutput(
        color=out_color.reshape(H, W, 3),
        depth=depth,
        silhouette=sil,
        depth_valid=sil > SIL_VALID,
        draw=draw,
    )
    if contributors:
        out.contrib_offsets = offsets
        # expose full-map ids; the kernel works in ordered-compact space
        out.contrib_splat = keep[order[csr_splat]]
        out._ctx = _RenderContext(keep, order, X, ux, uy, sigma, opac, zcam,
                                  col, offsets, csr_splat, csr_T)
    return out


def _loss_and_pixel_grads(out: RenderOutput, spec: LossSpec, K: Intrinsics):
    H, W = K.height, K.width
    loss = 0.0
    gC = np.zeros((H, W, 3))
    gS = np.zeros((H, W))
    gDraw = np.zeros((H, W))
    base = spec.mask
    if spec.sil_mask_thresh is not None:
        seen = out.silhouette > spec.sil_mask_thresh
        base = seen if base is None else (base & seen)
    if spec.target_rgb is not None and spec.lambda_img > 0.0:
        mask = np.ones((H, W), dtype=bool) if base is None else base
        n = max(int(mask.sum()), 1)
        res = out.color - spec.target_rgb
        loss += spec.lambda_img * np.abs(res[mask]).sum() / (3.0 * n)
        gC = spec.lambda_img * np.sign(res) * mask[..., None] / (3.0 * n)
    if spec.target_depth is not None and spec.lambda_dep > 0.0:
        mask_d = spec.target_depth.valid & (out.silhouette > spec.presence_thresh)
        if base is not None:
            mask_d = mask_d & base
        n = max(int(mask_d.sum()), 1)
        res = out.depth - spec.target_depth.values
        loss += spec.lambda_dep * np.abs(res[mask_d]).sum() / n
        gD = spec.lambda_dep * np.sign(res) * mask_d / n
        s_safe = np.maximum(out.silhouette, EPS_DIV)
        gDraw = gD / s_safe
        gS = -gD * out.draw / (s_safe * s_safe)
        gS[out.silhouette <= EPS_DIV] = 0.0
    return loss, gC, gS, gDraw


def render_with_gradients(gmap: GaussianMap, camera: Pose, K: Intrinsics,
                          spec: LossSpec):
    """Render, evaluate the LossSpec, and return analytic gradients.

    Returns (loss, RenderGradients, RenderOutput). Gradients cover both the
    Gaussian parameters and the camera pose tangent; callers use whichever
    side they optimize.
    """
    out = render(gmap, camera, K, contributors=True)
    n = len(gmap)
    grads = RenderGradients(
        d_mu=np.zeros((n, 3)), d_radius=np.zeros(n), d_opacity=np.zeros(n),
        d_color=np.zeros((n, 3)), d_pose=np.zeros(6),
    )
    loss, gC, gS, gDraw = _loss_and_pixel_grads(out, spec, K)
    ctx = out._ctx
    if ctx is None:  # nothing rendered
        return loss, grads, out

    m = ctx.keep.shape[0]
    order = ctx.order
    uxo = ctx.ux[order]
    uyo = ctx.uy[order]
    sgo = ctx.sigma[order]
    opo = ctx.opac[order]
    zco = ctx.zcam[order]
    clo = np.ascontiguousarray(ctx.col[order])
    g_u = np.zeros((m, 2))
    g_sigma = np.zeros(m)
    g_opac = np.zeros(m)
    g_z = np.zeros(m)
    g_col = np.zeros((m, 3))
    H, W = K.height, K.width
    _rk.composite_backward(
        uxo, uyo, sgo, opo, zco, clo,
        ctx.offsets, ctx.csr_splat, ctx.csr_T,
        out.color.reshape(-1, 3), out.draw.reshape(-1), out.silhouette.reshape(-1),
        gC.reshape(-1, 3), gS.reshape(-1), gDraw.reshape(-1),
        H, W, g_u, g_sigma, g_opac, g_z, g_col,
    )
    # back to unordered-compact space
    inv = np.empty(m, dtype=np.int64)
    inv[order] = np.arange(m)
    g_u = g_u[inv]
    g_sigma = g_sigma[inv]
    g_opac = g_opac[inv]
    g_z = g_z[inv]
    g_col = g_col[inv]

    X = ctx.X
    z = ctx.zcam
    fbar = K.mean_focal
    # chain image-space partials through the projection to camera-frame X
    gX = np.empty((m, 3))
    gX[:, 0] = (K.fx / z) * g_u[:, 0]
    gX[:, 1] = (K.fy / z) * g_u[:, 1]
    gX[:, 2] = (
        -(K.fx * X[:, 0] / z**2) * g_u[:, 0]
        - (K.fy * X[:, 1] / z**2) * g_u[:, 1]
        - (ctx.sigma / z) * g_sigma
        + g_z
    )
    R = camera.rotation
    g_mu = gX @ R.T  # world center of each splat; X = R^T (mu - t)
    grads.d_mu[ctx.keep] = g_mu
    grads.d_radius[ctx.keep] = g_sigma * fbar / z
    grads.d_opacity[ctx.keep] = g_opac
    grads.d_color[ctx.keep] = g_col
    # left-perturbation pose tangent: X(xi) ~ R^T((mu - t) - [w]x mu - v)
    mu_kept = gmap.mu[ctx.keep]
    grads.d_pose[:3] = np.cross(g_mu, mu_kept).sum(axis=0)
    grads.d_pose[3:] = -g_mu.sum(axis=0)
    return loss, grads, out


def evaluate_loss(gmap: GaussianMap, camera: Pose, K: Intrinsics,
                  spec: LossSpec) -> float:
    """LossSpec value at this pose, no gradients."""
    out = render(gmap, camera, K)
    loss, _, _, _ = _loss_and_pixel_grads(out, spec, K)
    return loss
