"""Shared oracle scaffolding for the renderer and solver test suites."""

import numpy as np

from splatstream.gaussian_map import GaussianBatch, GaussianMap
from splatstream.geometry import DepthMap, Intrinsics, Pose, exp
from splatstream.renderer import LossSpec, render, render_with_gradients

K_FD = Intrinsics(fx=40.0, fy=40.0, cx=15.5, cy=15.5, width=32, height=32)


def fd_scene():
    """5 fat Gaussians on a 32x32 sensor, built so the loss is smooth inside
    the finite-difference span: footprints cover the whole image (the 3 sigma
    truncation circle lies outside it), depths are well separated, opacities
    stay clear of the clip, and targets keep residual signs fixed.
    """
    z = np.array([1.0, 1.3, 1.6, 1.9, 2.2])
    mu = np.stack([
        np.array([0.02, -0.05, 0.03, -0.02, 0.06]) * z,
        np.array([-0.04, 0.03, -0.06, 0.05, -0.01]) * z,
        z,
    ], axis=-1)
    batch = GaussianBatch(
        mu=mu,
        radius=0.5 * z,  # sigma = 20 px at every depth
        opacity=np.array([0.6, 0.5, 0.7, 0.55, 0.65]),
        color=np.array([
            [0.8, 0.3, 0.2],
            [0.2, 0.7, 0.4],
            [0.3, 0.4, 0.8],
            [0.7, 0.6, 0.2],
            [0.4, 0.2, 0.6],
        ]),
    )
    gmap = GaussianMap()
    gmap.extend(batch)
    camera = exp(np.array([0.05, -0.04, 0.03, 0.06, -0.05, 0.04]))
    base = render(gmap, camera, K_FD)
    # push targets away from the render so the L1 signs cannot flip under
    # the finite-difference perturbations
    target_rgb = np.where(base.color < 0.5, base.color + 0.15, base.color - 0.15)
    target_d = np.where(base.depth < np.median(base.depth),
                        base.depth + 0.3, base.depth - 0.3)
    spec = LossSpec(
        target_rgb=target_rgb,
        target_depth=DepthMap.full(target_d),
        lambda_img=1.0,
        lambda_dep=0.5,
    )
    assert base.silhouette.min() > 0.6  # presence mask stays fixed
    return gmap, camera, spec


def _loss_only(gmap, camera, K, spec):
    loss, _, _ = render_with_gradients(gmap, camera, K, spec)
    return loss


def _clone_map(gmap):
    out = GaussianMap()
    out.extend(GaussianBatch(gmap.mu.copy(), gmap.radius.copy(),
                             gmap.opacity.copy(), gmap.color.copy()))
    return out


def fd_gradients(gmap, camera, K, spec, h_param=1e-4, h_pose=1e-3):
    """Central finite differences over every parameter class."""
    n = len(gmap)
    fd = {
        "mu": np.zeros((n, 3)), "radius": np.zeros(n), "opacity": np.zeros(n),
        "color": np.zeros((n, 3)), "pose": np.zeros(6),
    }

    def bump(field, i, j, delta):
        m = _clone_map(gmap)
        arr = getattr(m, field)
        if arr.ndim == 2:
            arr[i, j] += delta
        else:
            arr[i] += delta
        return m

    for i in range(n):
        for j in range(3):
            lp = _loss_only(bump("mu", i, j, h_param), camera, K, spec)
            lm = _loss_only(bump("mu", i, j, -h_param), camera, K, spec)
            fd["mu"][i, j] = (lp - lm) / (2 * h_param)
            lp = _loss_only(bump("color", i, j, h_param), camera, K, spec)
            lm = _loss_only(bump("color", i, j, -h_param), camera, K, spec)
            fd["color"][i, j] = (lp - lm) / (2 * h_param)
        lp = _loss_only(bump("radius", i, 0, h_param), camera, K, spec)
        lm = _loss_only(bump("radius", i, 0, -h_param), camera, K, spec)
        fd["radius"][i] = (lp - lm) / (2 * h_param)
        lp = _loss_only(bump("opacity", i, 0, h_param), camera, K, spec)
        lm = _loss_only(bump("opacity", i, 0, -h_param), camera, K, spec)
        fd["opacity"][i] = (lp - lm) / (2 * h_param)
    for k in range(6):
        e = np.zeros(6)
        e[k] = h_pose
        lp = _loss_only(gmap, exp(e).compose(camera), K, spec)
        lm = _loss_only(gmap, exp(-e).compose(camera), K, spec)
        fd["pose"][k] = (lp - lm) / (2 * h_pose)
    return fd


def class_errors(gmap, camera, K, spec, **kw):
    """Per-class relative error max|analytic - fd| / max|fd|."""
    _, grads, _ = render_with_gradients(gmap, camera, K, spec)
    fd = fd_gradients(gmap, camera, K, spec, **kw)
    analytic = {
        "mu": grads.d_mu, "radius": grads.d_radius, "opacity": grads.d_opacity,
        "color": grads.d_color, "pose": grads.d_pose,
    }
    errs = {}
    for name, g_fd in fd.items():
        scale = max(np.abs(g_fd).max(), 1e-12)
        errs[name] = float(np.abs(analytic[name] - g_fd).max() / scale)
    return errs
