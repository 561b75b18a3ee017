import numpy as np
import pytest

from splatstream.frame import Frame
from splatstream.geometry import DepthMap, Intrinsics, Pose, exp

# desk-scale default used across the suite
K_DESK = Intrinsics(fx=120.0, fy=120.0, cx=79.5, cy=59.5, width=160, height=120)
K_TINY = Intrinsics(fx=40.0, fy=40.0, cx=15.5, cy=15.5, width=32, height=32)


def random_pose(rng, rot_scale=1.0, t_scale=1.0):
    w = rng.normal(size=3)
    n = np.linalg.norm(w)
    cap = min(rot_scale, np.pi - 0.2)
    if n > cap:
        w = w * cap / n
    return exp(np.concatenate([w, rng.normal(size=3) * t_scale]))


def make_frame(K, rgb=None, depth=None, valid=None, index=0, timestamp=0.0, rng=None):
    rng = rng or np.random.default_rng(0)
    if rgb is None:
        rgb = rng.uniform(0, 1, size=(K.height, K.width, 3))
    if depth is None:
        depth = rng.uniform(0.5, 5.0, size=(K.height, K.width))
    if valid is None:
        valid = np.ones((K.height, K.width), dtype=bool)
    return Frame(index, timestamp, rgb, DepthMap(depth, valid), K)


@pytest.fixture
def desk_intrinsics():
    return K_DESK


@pytest.fixture
def tiny_intrinsics():
    return K_TINY
