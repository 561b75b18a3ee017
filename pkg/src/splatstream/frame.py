"""Frame container shared by the map, tracker, and pipeline modules."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import DepthMap, GeometryError, Intrinsics


@dataclass(frozen=True)
class Frame:
    """One stream element: RGB image plus pseudo-depth at known intrinsics.

    rgb is float64 in [0, 1], shape (H, W, 3). Depth is metric but comes from
    a depth provider, so treat it as an estimate, not sensor truth.
    """

    index: int
    timestamp: float
    rgb: np.ndarray
    depth: DepthMap
    intrinsics: Intrinsics

    def __post_init__(self):
        rgb = np.asarray(self.rgb, dtype=np.float64)
        K = self.intrinsics
        if rgb.shape != (K.height, K.width, 3):
            raise GeometryError(
                f"rgb shape {rgb.shape} does not match intrinsics "
                f"({K.height}, {K.width}, 3)"
            )
        if self.depth.shape != (K.height, K.width):
            raise GeometryError("depth dimensions do not match intrinsics")
        object.__setattr__(self, "rgb", rgb)
