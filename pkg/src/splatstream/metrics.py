"""Trajectory and image-quality metrics.

ATE RMSE aligns the estimated positions onto ground truth with a closed-form
rigid fit first, so only the non-rigid part of the error counts. Alignment
is SE(3) by default: the map is supposed to be metric, and absorbing a scale
factor would hide scale drift. PSNR and SSIM take unit-range images; SSIM is
the Gaussian-window formulation, single scale, and a 5-level multi-scale
variant is available where the images are big enough for it.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

from .geometry import DepthMap, Pose

ASSOC_TOL = 0.02
SSIM_SIGMA = 1.5
SSIM_TRUNCATE = 3.5
SSIM_WIN = 2 * int(SSIM_TRUNCATE * SSIM_SIGMA + 0.5) + 1  # 11
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
PSNR_CAP = 99.0


class MetricsError(ValueError):
    pass


class Trajectory:
    """Time-stamped camera path, timestamps strictly increasing."""

    def __init__(self, entries):
        entries = list(entries)
        self.stamps = np.array([t for t, _ in entries], dtype=np.float64)
        if np.any(np.diff(self.stamps) <= 0.0):
            raise MetricsError("timestamps must be strictly increasing")
        self.poses = [p for _, p in entries]

    def __len__(self) -> int:
        return len(self.poses)

    def __iter__(self):
        return iter(zip(self.stamps, self.poses))

    @property
    def positions(self) -> np.ndarray:
        if not self.poses:
            return np.zeros((0, 3))
        return np.stack([p.t for p in self.poses])


def associate_stamps(a: np.ndarray, b: np.ndarray, tol: float = ASSOC_TOL):
    """Greedy unique nearest-timestamp matching within tol seconds.

    Both inputs must be sorted ascending. Returns (a_indices, b_indices),
    sorted by a index.
    """
    cands = []
    for i, ts in enumerate(a):
        j = int(np.searchsorted(b, ts))
        for jj in (j - 1, j):
            if 0 <= jj < len(b):
                dt = abs(b[jj] - ts)
                if dt <= tol:
                    cands.append((dt, i, jj))
    cands.sort()
    used_a, used_b = set(), set()
    pairs = []
    for _, i, j in cands:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        pairs.append((i, j))
    pairs.sort()
    if not pairs:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    ia, ib = zip(*pairs)
    return np.array(ia, dtype=int), np.array(ib, dtype=int)


def associate(est: Trajectory, gt: Trajectory, tol: float = ASSOC_TOL):
    """Timestamp association between two trajectories."""
    return associate_stamps(est.stamps, gt.stamps, tol)


def _umeyama(E: np.ndarray, G: np.ndarray, with_scale: bool):
    """Closed-form fit of s*R*e + t onto g (s=1 unless with_scale)."""
    e_mean = E.mean(axis=0)
    g_mean = G.mean(axis=0)
    Eh = E - e_mean
    Gh = G - g_mean
    H = Eh.T @ Gh
    U, S, Vt = np.linalg.svd(H)
    if S[1] <= 1e-9 * max(S[0], 1e-300):
        raise MetricsError("degenerate trajectory: associated positions "
                           "are collinear, rotation is not recoverable")
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    D = np.diag([1.0, 1.0, d])
    R = Vt.T @ D @ U.T
    if with_scale:
        denom = (Eh**2).sum()
        s = float((S * np.diag(D)).sum() / denom)
    else:
        s = 1.0
    t = g_mean - s * (R @ e_mean)
    return R, t, s


def _aligned_pairs(est: Trajectory, gt: Trajectory, tol: float,
                   with_scale: bool):
    ie, ig = associate(est, gt, tol)
    if len(ie) < 3:
        raise MetricsError(
            f"need at least 3 associated pose pairs, got {len(ie)}")
    E = est.positions[ie]
    G = gt.positions[ig]
    R, t, s = _umeyama(E, G, with_scale)
    return E, G, R, t, s


def align_rigid(est: Trajectory, gt: Trajectory,
                tol: float = ASSOC_TOL) -> Pose:
    """SE(3) transform W minimizing sum ||W(est position) - gt position||^2."""
    _, _, R, t, _ = _aligned_pairs(est, gt, tol, with_scale=False)
    return Pose.from_rt(R, t)


def ate_rmse(est: Trajectory, gt: Trajectory, tol: float = ASSOC_TOL,
             sim3: bool = False) -> float:
    """Absolute trajectory error RMSE in centimeters, after alignment.

    sim3=True additionally fits a scale (dataset-comparison mode); default
    keeps the metric-scale contract.
    """
    E, G, R, t, s = _aligned_pairs(est, gt, tol, with_scale=sim3)
    res = (s * (E @ R.T) + t) - G
    return float(np.sqrt((res**2).sum(axis=1).mean()) * 100.0)


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise MetricsError(f"shape mismatch: {a.shape} vs {b.shape}")


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for unit-range images."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    mse = float(((a - b) ** 2).mean())
    if mse < 1e-10:
        return PSNR_CAP
    return 10.0 * np.log10(1.0 / mse)


def _ssim_plane(x: np.ndarray, y: np.ndarray):
    """Per-pixel SSIM and contrast-structure maps, border cropped."""
    blur = lambda im: gaussian_filter(im, SSIM_SIGMA, truncate=SSIM_TRUNCATE,
                                      mode="reflect")
    ux = blur(x)
    uy = blur(y)
    vx = blur(x * x) - ux * ux
    vy = blur(y * y) - uy * uy
    vxy = blur(x * y) - ux * uy
    cs = (2.0 * vxy + SSIM_C2) / (vx + vy + SSIM_C2)
    lum = (2.0 * ux * uy + SSIM_C1) / (ux * ux + uy * uy + SSIM_C1)
    pad = (SSIM_WIN - 1) // 2
    sl = np.s_[pad:-pad, pad:-pad]
    return (lum * cs)[sl], cs[sl]


def _as_planes(a: np.ndarray):
    if a.ndim == 2:
        return [a]
    if a.ndim == 3:
        return [a[..., c] for c in range(a.shape[2])]
    raise MetricsError(f"expected 2-d or 3-d image, got shape {a.shape}")


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Single-scale SSIM, 11x11 Gaussian window, channel-averaged."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    if min(a.shape[0], a.shape[1]) < SSIM_WIN:
        raise MetricsError(
            f"image smaller than the {SSIM_WIN}x{SSIM_WIN} ssim window")
    vals = [_ssim_plane(x, y)[0].mean() for x, y in zip(_as_planes(a),
                                                        _as_planes(b))]
    return float(np.mean(vals))


def _halve(x: np.ndarray) -> np.ndarray:
    h, w = (x.shape[0] // 2) * 2, (x.shape[1] // 2) * 2
    x = x[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def ms_ssim(a: np.ndarray, b: np.ndarray) -> float:
    """5-level multi-scale SSIM with the canonical level weights."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    levels = len(MSSSIM_WEIGHTS)
    need = SSIM_WIN * 2 ** (levels - 1)
    if min(a.shape[0], a.shape[1]) < need:
        raise MetricsError(
            f"multi-scale ssim needs at least {need} px per side, "
            f"got {a.shape[0]}x{a.shape[1]}")
    result = 1.0
    for lvl, weight in enumerate(MSSSIM_WEIGHTS):
        per_chan = []
        for x, y in zip(_as_planes(a), _as_planes(b)):
            full, cs = _ssim_plane(x, y)
            per_chan.append((full if lvl == levels - 1 else cs).mean())
        # negative covariance can occur on tiny crops; clamp before the
        # fractional power
        result *= max(float(np.mean(per_chan)), 0.0) ** weight
        if lvl < levels - 1:
            a = _halve(a) if a.ndim == 2 else np.dstack(
                [_halve(p) for p in _as_planes(a)])
            b = _halve(b) if b.ndim == 2 else np.dstack(
                [_halve(p) for p in _as_planes(b)])
    return result


def depth_l1(a: DepthMap, b: DepthMap) -> float:
    """Mean absolute depth difference in meters over jointly valid pixels."""
    if a.shape != b.shape:
        raise MetricsError(f"shape mismatch: {a.shape} vs {b.shape}")
    joint = a.valid & b.valid
    if not joint.any():
        raise MetricsError("no jointly valid depth pixels")
    return float(np.abs(a.values[joint] - b.values[joint]).mean())
