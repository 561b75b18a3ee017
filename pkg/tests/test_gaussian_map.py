import numpy as np
import pytest

from splatstream.gaussian_map import (
    Gaussian,
    GaussianBatch,
    GaussianMap,
    MapSettings,
    densify,
    eval_gaussian,
    init_from_depth,
    prune,
)
from splatstream.geometry import GeometryError, Pose, project

from conftest import K_DESK, make_frame, random_pose


def random_batch(rng, n):
    return GaussianBatch(
        mu=rng.normal(size=(n, 3)),
        radius=rng.uniform(1e-5, 2.0, size=n),
        opacity=rng.uniform(0, 1, size=n),
        color=rng.uniform(0, 1, size=(n, 3)),
    )


class TestGaussian:
    def test_eval_at_center(self):
        g = Gaussian(np.array([1.0, 2.0, 3.0]), 0.1, 0.7, np.array([1.0, 0.0, 0.0]))
        assert eval_gaussian(g, g.mu) == pytest.approx(0.7)

    def test_eval_at_one_radius(self):
        g = Gaussian(np.zeros(3), 0.5, 1.0, np.ones(3))
        x = np.array([0.5, 0.0, 0.0])
        assert eval_gaussian(g, x) == pytest.approx(np.exp(-0.5))

    def test_zero_opacity(self):
        g = Gaussian(np.zeros(3), 0.5, 0.0, np.ones(3))
        rng = np.random.default_rng(0)
        for _ in range(10):
            assert eval_gaussian(g, rng.normal(size=3)) == 0.0

    def test_validation(self):
        with pytest.raises(GeometryError):
            Gaussian(np.zeros(3), -0.1, 0.5, np.zeros(3))
        with pytest.raises(GeometryError):
            Gaussian(np.zeros(3), 0.1, 1.5, np.zeros(3))
        with pytest.raises(GeometryError):
            Gaussian(np.zeros(3), 0.1, 0.5, np.array([0.0, 0.0, 2.0]))


class TestInitFromDepth:
    def test_all_invalid_empty(self):
        frame = make_frame(K_DESK, valid=np.zeros((K_DESK.height, K_DESK.width), bool))
        assert len(init_from_depth(frame, Pose.identity())) == 0

    def test_single_center_pixel(self):
        valid = np.zeros((K_DESK.height, K_DESK.width), dtype=bool)
        # principal point (79.5, 59.5) is not a pixel center; use an explicit
        # pixel and check the closed form
        valid[60, 80] = True
        depth = np.full((K_DESK.height, K_DESK.width), 2.0)
        frame = make_frame(K_DESK, depth=depth, valid=valid)
        batch = init_from_depth(frame, Pose.identity(), s_init=1.0)
        assert len(batch) == 1
        expect = np.array([(80 - K_DESK.cx) * 2.0 / K_DESK.fx,
                           (60 - K_DESK.cy) * 2.0 / K_DESK.fy, 2.0])
        assert np.allclose(batch.mu[0], expect, atol=1e-12)
        assert batch.radius[0] == pytest.approx(2.0 / K_DESK.fx)

    def test_stride_count(self):
        frame = make_frame(K_DESK)
        batch = init_from_depth(frame, Pose.identity(), stride=4)
        expect = int(np.ceil(K_DESK.width / 4)) * int(np.ceil(K_DESK.height / 4))
        assert len(batch) == expect

    def test_stride_count_minus_invalid(self):
        valid = np.ones((K_DESK.height, K_DESK.width), dtype=bool)
        valid[0, 0] = False   # on the stride grid
        valid[1, 1] = False   # off the stride grid
        frame = make_frame(K_DESK, valid=valid)
        batch = init_from_depth(frame, Pose.identity(), stride=4)
        full = int(np.ceil(K_DESK.width / 4)) * int(np.ceil(K_DESK.height / 4))
        assert len(batch) == full - 1

    def test_reprojection_oracle(self):
        # every center, pushed back through the creating pose, must land on
        # its source pixel with the source depth
        rng = np.random.default_rng(1)
        frame = make_frame(K_DESK, rng=rng)
        pose = random_pose(rng, t_scale=0.5)
        batch = init_from_depth(frame, pose, stride=3)
        cam = pose.apply_inverse(batch.mu)
        px = project(cam, K_DESK)
        ys, xs = np.mgrid[0:K_DESK.height:3, 0:K_DESK.width:3]
        src = np.stack([xs.ravel(), ys.ravel()], axis=-1).astype(float)
        assert np.max(np.abs(px - src)) < 1e-6
        d_src = frame.depth.values[ys.ravel(), xs.ravel()]
        assert np.max(np.abs(cam[:, 2] / d_src - 1.0)) < 1e-9

    def test_colors_copied_from_frame(self):
        rng = np.random.default_rng(2)
        frame = make_frame(K_DESK, rng=rng)
        batch = init_from_depth(frame, Pose.identity(), stride=5)
        ys, xs = np.mgrid[0:K_DESK.height:5, 0:K_DESK.width:5]
        assert np.array_equal(batch.color, frame.rgb[ys.ravel(), xs.ravel()])


class TestDensify:
    def test_empty_map_fills_frame(self):
        frame = make_frame(K_DESK)
        gmap = GaussianMap()
        sil = np.zeros((K_DESK.height, K_DESK.width))
        dr = np.zeros((K_DESK.height, K_DESK.width))
        densify(gmap, frame, Pose.identity(), sil, dr)
        assert len(gmap) == K_DESK.width * K_DESK.height

    def test_explained_frame_adds_nothing(self):
        frame = make_frame(K_DESK)
        gmap = GaussianMap()
        sil = np.ones((K_DESK.height, K_DESK.width))
        densify(gmap, frame, Pose.identity(), sil, frame.depth.values.copy())
        assert len(gmap) == 0

    def test_depth_disagreement_triggers(self):
        frame = make_frame(K_DESK, depth=np.full((K_DESK.height, K_DESK.width), 2.0))
        gmap = GaussianMap()
        sil = np.ones((K_DESK.height, K_DESK.width))
        dr = frame.depth.values.copy()
        dr[10:20, 10:20] = 2.0 * 1.2  # 20% off, above the 5% threshold
        densify(gmap, frame, Pose.identity(), sil, dr)
        assert len(gmap) == 100

    def test_growth_bounded_by_selection(self):
        rng = np.random.default_rng(3)
        frame = make_frame(K_DESK, rng=rng)
        gmap = GaussianMap()
        sil = rng.uniform(0, 1, size=(K_DESK.height, K_DESK.width))
        dr = frame.depth.values * rng.uniform(0.9, 1.1, size=frame.depth.shape)
        cfg = MapSettings()
        selected = frame.depth.valid & (
            (sil < cfg.tau_sil)
            | ((sil >= cfg.tau_sil) & (np.abs(dr - frame.depth.values) > cfg.tau_depth * frame.depth.values))
        )
        densify(gmap, frame, Pose.identity(), sil, dr, cfg)
        assert len(gmap) == selected.sum()

    def test_created_stamp(self):
        frame = make_frame(K_DESK, index=7)
        gmap = GaussianMap()
        densify(gmap, frame, Pose.identity(),
                np.zeros(frame.depth.shape), np.zeros(frame.depth.shape))
        assert (gmap.created == 7).all()


class TestPrune:
    def test_empty(self):
        assert len(prune(GaussianMap())) == 0

    def test_all_zero_opacity(self):
        gmap = GaussianMap()
        rng = np.random.default_rng(4)
        batch = random_batch(rng, 50)
        gmap.extend(GaussianBatch(batch.mu, np.clip(batch.radius, 1e-3, 0.5),
                                  np.zeros(50), batch.color))
        assert len(prune(gmap)) == 0

    def test_predicate_recheck(self):
        rng = np.random.default_rng(5)
        gmap = GaussianMap()
        gmap.extend(random_batch(rng, 500))
        cfg = MapSettings()
        prune(gmap, cfg)
        assert np.all(gmap.opacity >= cfg.tau_prune)
        assert np.all((gmap.radius >= cfg.r_min) & (gmap.radius <= cfg.r_max))

    def test_survivor_fields_consistent(self):
        rng = np.random.default_rng(6)
        gmap = GaussianMap()
        batch = random_batch(rng, 300)
        gmap.extend(batch)
        cfg = MapSettings()
        keep = (batch.opacity >= cfg.tau_prune) & (batch.radius >= cfg.r_min) & (batch.radius <= cfg.r_max)
        prune(gmap, cfg)
        assert np.array_equal(gmap.mu, batch.mu[keep])
        assert np.array_equal(gmap.color, batch.color[keep])


class TestMapMutation:
    def test_clamp_restores_invariants(self):
        gmap = GaussianMap()
        rng = np.random.default_rng(7)
        gmap.extend(random_batch(rng, 100))
        gmap.opacity += rng.normal(size=100) * 2.0
        gmap.color += rng.normal(size=(100, 3))
        gmap.radius -= 1.0
        gmap.clamp_()
        gmap.check_invariants()

    def test_extend_monotone(self):
        gmap = GaussianMap()
        rng = np.random.default_rng(8)
        total = 0
        for _ in range(5):
            n = int(rng.integers(0, 50))
            gmap.extend(random_batch(rng, n))
            total += n
            assert len(gmap) == total
