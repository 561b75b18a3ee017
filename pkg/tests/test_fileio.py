import numpy as np
import pytest

from conftest import random_pose
from splatstream.fileio import (
    DEPTH_PNG_SCALE,
    FileFormatError,
    export_ply,
    read_color_png,
    read_depth_png,
    read_ply,
    read_trajectory,
    write_color_png,
    write_depth_png,
    write_gray_png,
    write_trajectory,
)
from splatstream.geometry import DepthMap


class TestPly:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        pts = rng.normal(size=(50, 3))
        cols = rng.uniform(0, 1, size=(50, 3))
        p = tmp_path / "cloud.ply"
        export_ply(pts, cols, p)
        pts2, cols2 = read_ply(p)
        assert np.abs(pts2 - pts).max() < 1e-6      # 6 decimals written
        assert np.abs(cols2 - cols).max() <= 0.5 / 255 + 1e-12

    def test_header(self, tmp_path):
        p = tmp_path / "c.ply"
        export_ply(np.zeros((3, 3)), np.zeros((3, 3)), p)
        head = p.read_text().splitlines()
        assert head[0] == "ply"
        assert "element vertex 3" in head
        assert "end_header" in head

    def test_length_mismatch(self, tmp_path):
        with pytest.raises(FileFormatError):
            export_ply(np.zeros((3, 3)), np.zeros((2, 3)), tmp_path / "x.ply")

    def test_not_a_ply(self, tmp_path):
        p = tmp_path / "x.ply"
        p.write_text("obj\n")
        with pytest.raises(FileFormatError):
            read_ply(p)

    def test_truncated_body(self, tmp_path):
        p = tmp_path / "x.ply"
        export_ply(np.zeros((4, 3)), np.zeros((4, 3)), p)
        lines = p.read_text().splitlines()
        p.write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises((FileFormatError, IndexError)):
            read_ply(p)


class TestTrajectory:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(1)
        poses = [random_pose(rng) for _ in range(20)]
        ts = [0.1 * k for k in range(20)]
        p = tmp_path / "traj.txt"
        write_trajectory(p, ts, poses)
        ts2, poses2 = read_trajectory(p)
        assert np.abs(np.array(ts2) - np.array(ts)).max() < 1e-6
        for a, b in zip(poses, poses2):
            assert np.abs(a.t - b.t).max() < 1e-8
            assert min(np.abs(a.q - b.q).max(), np.abs(a.q + b.q).max()) < 1e-8

    def test_field_order_is_xyzw(self, tmp_path):
        # quaternion written scalar-last regardless of internal layout
        pose = random_pose(np.random.default_rng(2))
        p = tmp_path / "t.txt"
        write_trajectory(p, [3.25], [pose])
        line = [l for l in p.read_text().splitlines() if not l.startswith("#")][0]
        vals = [float(v) for v in line.split()]
        assert vals[0] == 3.25
        assert np.abs(np.array(vals[1:4]) - pose.t).max() < 1e-8
        w, x, y, z = pose.q
        assert np.abs(np.array(vals[4:]) - np.array([x, y, z, w])).max() < 1e-8

    def test_comments_and_blanks_skipped(self, tmp_path):
        p = tmp_path / "t.txt"
        p.write_text("# header\n\n1.0 0 0 0 0 0 0 1\n")
        ts, poses = read_trajectory(p)
        assert ts == [1.0]
        assert np.allclose(poses[0].matrix, np.eye(4))

    def test_bad_field_count(self, tmp_path):
        p = tmp_path / "t.txt"
        p.write_text("1.0 0 0 0 0 0 1\n")
        with pytest.raises(FileFormatError, match=":1:"):
            read_trajectory(p)

    def test_bad_number(self, tmp_path):
        p = tmp_path / "t.txt"
        p.write_text("# ok\n1.0 0 0 zero 0 0 0 1\n")
        with pytest.raises(FileFormatError, match=":2:"):
            read_trajectory(p)


class TestDepthPng:
    def test_scale_oracle(self, tmp_path):
        # one meter is exactly 5000 counts
        depth = DepthMap(np.full((4, 4), 1.0), np.ones((4, 4), bool))
        p = tmp_path / "d.png"
        write_depth_png(depth, p)
        from PIL import Image
        raw = np.asarray(Image.open(p))
        assert raw.dtype == np.uint16 or raw.dtype == np.int32
        assert (np.asarray(raw) == 5000).all()
        assert DEPTH_PNG_SCALE == 5000.0

    def test_roundtrip_quantized(self, tmp_path):
        rng = np.random.default_rng(3)
        vals = rng.uniform(0.2, 8.0, size=(32, 48))
        valid = rng.uniform(0, 1, size=(32, 48)) > 0.2
        p = tmp_path / "d.png"
        write_depth_png(DepthMap(vals, valid), p)
        d2 = read_depth_png(p)
        assert (d2.valid == valid).all()  # depths >= 0.2 m never hit count 0
        assert np.abs(d2.values[valid] - vals[valid]).max() <= 0.5 / DEPTH_PNG_SCALE
        assert (d2.values[~valid] == 0).all()

    def test_invalid_is_zero_count(self, tmp_path):
        vals = np.full((4, 4), 2.0)
        valid = np.zeros((4, 4), bool)
        valid[0, 0] = True
        p = tmp_path / "d.png"
        write_depth_png(DepthMap(vals, valid), p)
        d2 = read_depth_png(p)
        assert d2.valid.sum() == 1
        assert d2.valid[0, 0]

    def test_far_depth_saturates(self, tmp_path):
        depth = DepthMap(np.full((2, 2), 100.0), np.ones((2, 2), bool))
        p = tmp_path / "d.png"
        write_depth_png(depth, p)
        d2 = read_depth_png(p)
        assert np.allclose(d2.values, 65535 / DEPTH_PNG_SCALE)


class TestColorPng:
    def test_roundtrip_quantized(self, tmp_path):
        rng = np.random.default_rng(4)
        rgb = rng.uniform(0, 1, size=(16, 24, 3))
        p = tmp_path / "c.png"
        write_color_png(rgb, p)
        rgb2 = read_color_png(p)
        assert rgb2.shape == rgb.shape
        assert np.abs(rgb2 - rgb).max() <= 0.5 / 255 + 1e-12

    def test_out_of_range_clipped(self, tmp_path):
        rgb = np.stack([np.full((2, 2), -0.5), np.full((2, 2), 0.5),
                        np.full((2, 2), 1.7)], axis=-1)
        p = tmp_path / "c.png"
        write_color_png(rgb, p)
        rgb2 = read_color_png(p)
        assert (rgb2[..., 0] == 0).all()
        assert (rgb2[..., 2] == 1).all()

    def test_gray(self, tmp_path):
        vals = np.linspace(0, 1, 16).reshape(4, 4)
        p = tmp_path / "g.png"
        write_gray_png(vals, p)
        from PIL import Image
        raw = np.asarray(Image.open(p), dtype=np.float64) / 255.0
        assert np.abs(raw - vals).max() <= 0.5 / 255 + 1e-12
