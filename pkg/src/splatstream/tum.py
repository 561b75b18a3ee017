"""TUM-RGBD directory ingestion.

Layout: rgb.txt / depth.txt listing "timestamp path" lines, optional
groundtruth.txt with TUM pose lines. RGB and depth listings are associated
by nearest timestamp within 0.02 s; frames whose depth strays further are
dropped. Depth PNGs are 16-bit at 5000 counts per meter, 0 invalid.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .fileio import (
    FileFormatError,
    read_color_png,
    read_depth_png,
    read_trajectory,
)
from .frame import Frame
from .geometry import Intrinsics
from .metrics import ASSOC_TOL, Trajectory, associate_stamps

import numpy as np


@dataclass(frozen=True)
class TumEntry:
    timestamp: float  # rgb timestamp; the pair's reference clock
    rgb_path: Path
    depth_path: Path


@dataclass(frozen=True)
class TumSequence:
    directory: Path
    entries: list[TumEntry]
    groundtruth: Trajectory | None

    def __len__(self) -> int:
        return len(self.entries)

    def load_frame(self, i: int, K: Intrinsics) -> Frame:
        e = self.entries[i]
        rgb = read_color_png(e.rgb_path)
        depth = read_depth_png(e.depth_path)
        return Frame(i, e.timestamp, rgb, depth, K)


def _read_listing(path: Path):
    """Parse "timestamp path" lines; '#' comments and blanks skipped."""
    if not path.is_file():
        raise FileFormatError(f"{path}: missing listing file")
    stamps, rels = [], []
    for ln, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise FileFormatError(
                f"{path}:{ln}: expected 'timestamp path', got {len(parts)} fields")
        try:
            stamps.append(float(parts[0]))
        except ValueError:
            raise FileFormatError(
                f"{path}:{ln}: bad timestamp {parts[0]!r}") from None
        rels.append(parts[1])
    order = np.argsort(stamps, kind="stable")
    return np.array(stamps, dtype=np.float64)[order], [rels[i] for i in order]


def load_tum(directory, tol: float = ASSOC_TOL) -> TumSequence:
    """Associate the rgb and depth listings and read ground truth if any."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileFormatError(f"{directory}: not a directory")
    rgb_stamps, rgb_paths = _read_listing(directory / "rgb.txt")
    dep_stamps, dep_paths = _read_listing(directory / "depth.txt")
    ir, id_ = associate_stamps(rgb_stamps, dep_stamps, tol)
    entries = [
        TumEntry(float(rgb_stamps[a]),
                 directory / rgb_paths[a],
                 directory / dep_paths[b])
        for a, b in zip(ir, id_)
    ]
    gt = None
    gt_path = directory / "groundtruth.txt"
    if gt_path.is_file():
        stamps, poses = read_trajectory(gt_path)
        gt = Trajectory(zip(stamps, poses))
    return TumSequence(directory, entries, gt)
