"""File formats: ASCII PLY clouds, TUM trajectories, 16-bit depth PNGs, and
the binary flow-field container.

All writers produce byte-stable output for fixed input so runs can be diffed.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import DepthMap, Pose

DEPTH_PNG_SCALE = 5000.0  # counts per meter, 0 means invalid
FLOW_MAGIC = b"GFLW"


class FileFormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# PLY
# ---------------------------------------------------------------------------


def export_ply(points: np.ndarray, colors: np.ndarray, path) -> None:
    """ASCII PLY with x y z and 8-bit red green blue per vertex."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
    if points.shape[0] != colors.shape[0]:
        raise FileFormatError("points/colors length mismatch")
    rgb8 = np.clip(np.round(colors * 255.0), 0, 255).astype(np.uint8)
    lines = [
        "ply", "format ascii 1.0",
        f"element vertex {points.shape[0]}",
        "property float x", "property float y", "property float z",
        "property uchar red", "property uchar green", "property uchar blue",
        "end_header",
    ]
    for p, c in zip(points, rgb8):
        lines.append(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {c[0]} {c[1]} {c[2]}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_ply(path):
    """Parse the subset of PLY that export_ply writes."""
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != "ply":
        raise FileFormatError(f"{path}: not a PLY file")
    n = None
    body_at = None
    for i, line in enumerate(text):
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            n = int(parts[2])
        if line.strip() == "end_header":
            body_at = i + 1
            break
    if n is None or body_at is None:
        raise FileFormatError(f"{path}: malformed PLY header")
    pts = np.zeros((n, 3))
    cols = np.zeros((n, 3))
    for k in range(n):
        parts = text[body_at + k].split()
        if len(parts) != 6:
            raise FileFormatError(f"{path}: bad vertex at line {body_at + k + 1}")
        pts[k] = [float(v) for v in parts[:3]]
        cols[k] = [int(v) / 255.0 for v in parts[3:]]
    return pts, cols


# ---------------------------------------------------------------------------
# TUM trajectories
# ---------------------------------------------------------------------------


def write_trajectory(path, timestamps, poses) -> None:
    """One line per pose: timestamp tx ty tz qx qy qz qw.

    Pose fields use shortest-roundtrip formatting, so reading the file back
    reproduces the exact poses; fixed decimals would perturb them enough to
    flip hard visibility boundaries when re-rendering.
    """
    lines = ["# timestamp tx ty tz qx qy qz qw"]
    for ts, pose in zip(timestamps, poses):
        t = pose.t
        w, x, y, z = pose.q
        fields = " ".join(repr(float(v)) for v in (t[0], t[1], t[2],
                                                   x, y, z, w))
        lines.append(f"{ts:.6f} {fields}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_trajectory(path):
    """Returns (timestamps list, poses list); '#' comment lines skipped."""
    timestamps, poses = [], []
    for ln, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 8:
            raise FileFormatError(f"{path}:{ln}: expected 8 fields, got {len(parts)}")
        try:
            vals = [float(v) for v in parts]
        except ValueError as e:
            raise FileFormatError(f"{path}:{ln}: {e}") from None
        ts, tx, ty, tz, qx, qy, qz, qw = vals
        timestamps.append(ts)
        poses.append(Pose(np.array([qw, qx, qy, qz]), np.array([tx, ty, tz])))
    return timestamps, poses


# ---------------------------------------------------------------------------
# depth / color PNG
# ---------------------------------------------------------------------------


def write_depth_png(depth: DepthMap, path) -> None:
    counts = np.where(depth.valid,
                      np.clip(np.round(depth.values * DEPTH_PNG_SCALE), 0, 65535),
                      0.0).astype(np.uint16)
    Image.fromarray(counts).save(path)


def read_depth_png(path) -> DepthMap:
    img = Image.open(path)
    counts = np.asarray(img, dtype=np.uint16).astype(np.float64)
    valid = counts > 0
    return DepthMap(counts / DEPTH_PNG_SCALE, valid)


def write_color_png(rgb: np.ndarray, path) -> None:
    img = np.clip(np.round(np.asarray(rgb) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(img, mode="RGB").save(path)


def read_color_png(path) -> np.ndarray:
    img = Image.open(path).convert("RGB")
    return np.asarray(img, dtype=np.float64) / 255.0


def write_gray_png(values: np.ndarray, path) -> None:
    img = np.clip(np.round(np.asarray(values) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(img, mode="L").save(path)


# ---------------------------------------------------------------------------
# flow fields
# ---------------------------------------------------------------------------


def write_flow(path, corrections: np.ndarray, confidence: np.ndarray,
               valid: np.ndarray) -> None:
    """Binary layout: magic GFLW, u32 LE width and height, f32 LE corrections
    (row-major, x/y interleaved), f32 LE confidence (two channels, same
    layout), then one 0/1 byte per pixel for the mask."""
    corrections = np.asarray(corrections, dtype=np.float32)
    confidence = np.asarray(confidence, dtype=np.float32)
    valid = np.asarray(valid, dtype=bool)
    h, w = valid.shape
    if corrections.shape != (h, w, 2) or confidence.shape != (h, w, 2):
        raise FileFormatError("flow field shape mismatch")
    with open(path, "wb") as f:
        f.write(FLOW_MAGIC)
        f.write(struct.pack("<II", w, h))
        f.write(corrections.astype("<f4").tobytes())
        f.write(confidence.astype("<f4").tobytes())
        f.write(valid.astype(np.uint8).tobytes())


def read_flow(path):
    """Returns (corrections, confidence, valid); errors on any truncation."""
    data = Path(path).read_bytes()
    if data[:4] != FLOW_MAGIC:
        raise FileFormatError(f"{path}: bad magic {data[:4]!r}")
    if len(data) < 12:
        raise FileFormatError(f"{path}: truncated header")
    w, h = struct.unpack("<II", data[4:12])
    n = w * h
    expect = 12 + 4 * n * 2 + 4 * n * 2 + n
    if len(data) != expect:
        raise FileFormatError(
            f"{path}: expected {expect} bytes for {w}x{h}, got {len(data)}"
        )
    off = 12
    corr = np.frombuffer(data, dtype="<f4", count=n * 2, offset=off)
    off += 4 * n * 2
    conf = np.frombuffer(data, dtype="<f4", count=n * 2, offset=off)
    off += 4 * n * 2
    mask = np.frombuffer(data, dtype=np.uint8, count=n, offset=off)
    return (corr.reshape(h, w, 2).astype(np.float64),
            conf.reshape(h, w, 2).astype(np.float64),
            mask.reshape(h, w).astype(bool))
