import numpy as np
import pytest

from rangeloop.errors import ConfigurationError, DataError
from rangeloop.range_image import (
    MIN_SELF_RETURN,
    ProjectionConfig,
    RangeImage,
    load_cloud,
    load_range_image,
    project,
    save_cloud,
    save_range_image,
    unproject,
)

# full-size spinning-sensor geometry matching the ProjectionConfig defaults
SENSOR_CFG = ProjectionConfig(height=64, width=1440, fov_up=2.0, fov_down=-24.8,
                              max_range=80.0)


def make_cloud(points):
    return np.array(points, dtype=np.float32)


class TestProjectionConfig:
    def test_defaults_match_expected_resolution(self):
        cfg = ProjectionConfig()
        assert (cfg.height, cfg.width) == (64, 1440)
        assert cfg.fov_up == 2.0 and cfg.fov_down == -24.8

    @pytest.mark.parametrize("kwargs", [
        {"height": 0}, {"width": -1}, {"fov_up": -30.0, "fov_down": -24.8},
        {"max_range": 0.0},
    ])
    def test_invalid_geometry_rejected(self, kwargs):
        with pytest.raises(ConfigurationError):
            ProjectionConfig(**kwargs)


class TestProject:
    def test_empty_cloud_gives_all_invalid_image(self):
        img = project(np.zeros((0, 4), dtype=np.float32), SENSOR_CFG)
        assert img.data.shape == (64, 1440, 2)
        assert not img.data.any()
        assert not img.mask.any()

    def test_single_point_lands_at_hand_computed_pixel(self):
        # (10, 0, 0): azimuth 0, elevation 0.
        # col = floor((0 + pi) / (2 pi) * 1440) = 720
        # row = floor((2 - 0) / 26.8 * 64) = floor(4.776) = 4
        img = project(make_cloud([[10.0, 0.0, 0.0, 0.5]]), SENSOR_CFG)
        rows, cols = np.nonzero(img.mask)
        assert rows.tolist() == [4]
        assert cols.tolist() == [720]
        assert img.data[4, 720, 0] == pytest.approx(10.0)
        assert img.data[4, 720, 1] == pytest.approx(0.5)

    def test_nearest_point_wins_pixel_collisions(self):
        cloud = make_cloud([[12.0, 0.0, 0.0, 0.9], [10.0, 0.0, 0.0, 0.5]])
        img = project(cloud, SENSOR_CFG)
        assert img.data[4, 720, 0] == pytest.approx(10.0)
        assert img.data[4, 720, 1] == pytest.approx(0.5)
        assert img.mask.sum() == 1

    def test_collision_tie_keeps_first_point(self):
        cloud = make_cloud([[10.0, 0.0, 0.0, 0.9], [10.0, 0.0, 0.0, 0.1]])
        img = project(cloud, SENSOR_CFG)
        assert img.data[4, 720, 1] == pytest.approx(0.9)

    def test_out_of_fov_and_out_of_range_dropped(self):
        cloud = make_cloud([
            [10.0, 0.0, 10.0, 0.5],    # elevation 45 deg, above fov_up
            [10.0, 0.0, -10.0, 0.5],   # elevation -45 deg, below fov_down
            [120.0, 0.0, 0.0, 0.5],    # beyond max_range
            [1e-4, 0.0, 0.0, 0.5],     # self-return, below the floor
        ])
        img = project(cloud, SENSOR_CFG)
        assert not img.mask.any()

    def test_min_self_return_boundary_kept(self):
        cloud = make_cloud([[MIN_SELF_RETURN, 0.0, 0.0, 0.5]])
        img = project(cloud, SENSOR_CFG)
        assert img.mask.sum() == 1

    def test_invalid_pixels_are_zero_filled(self, rng):
        cloud = make_cloud([[10.0, 0.0, 0.0, 0.5]])
        img = project(cloud, SENSOR_CFG)
        invalid = ~img.mask
        assert not img.data[invalid].any()
        assert (img.data[..., 0] >= 0).all()

    def test_nan_cloud_rejected(self):
        cloud = make_cloud([[np.nan, 0.0, 0.0, 0.5]])
        with pytest.raises(DataError):
            project(cloud, SENSOR_CFG)

    def test_bad_shape_rejected(self):
        with pytest.raises(DataError):
            project(np.zeros((5, 3), dtype=np.float32), SENSOR_CFG)


class TestUnproject:
    def test_all_zero_image_gives_empty_cloud(self):
        img = RangeImage(np.zeros((64, 1440, 2), dtype=np.float32))
        assert unproject(img, SENSOR_CFG).shape == (0, 4)

    def test_intensity_passes_through_bit_exactly(self, rng):
        data = np.zeros((64, 1440, 2), dtype=np.float32)
        rows = rng.choice(64, 40)
        cols = rng.choice(1440, 40)
        data[rows, cols, 0] = rng.uniform(1.0, 70.0, 40).astype(np.float32)
        data[rows, cols, 1] = rng.uniform(0.0, 1.0, 40).astype(np.float32)
        img = RangeImage(data)
        cloud = unproject(img, SENSOR_CFG)
        valid = img.data[img.mask]
        assert np.array_equal(cloud[:, 3].astype(np.float32), valid[:, 1])

    def test_unprojected_points_match_brute_force_rays(self, rng):
        data = np.zeros((8, 16, 2), dtype=np.float32)
        data[:, :, 0] = rng.uniform(2.0, 50.0, (8, 16)).astype(np.float32)
        data[:, :, 1] = 0.25
        cfg = ProjectionConfig(height=8, width=16, fov_up=2.0, fov_down=-24.8,
                               max_range=80.0)
        cloud = unproject(RangeImage(data), cfg)
        assert cloud.shape == (8 * 16, 4)

        fov = np.radians(cfg.fov_up - cfg.fov_down)
        k = 0
        for r in range(8):
            for c in range(16):
                elev = np.radians(cfg.fov_up) - (r + 0.5) / 8 * fov
                az = -np.pi + (c + 0.5) / 16 * 2 * np.pi
                direction = np.array([
                    np.cos(elev) * np.cos(az),
                    np.cos(elev) * np.sin(az),
                    np.sin(elev),
                ])
                expected = direction * data[r, c, 0]
                np.testing.assert_allclose(cloud[k, :3], expected, atol=1e-5)
                k += 1

    def test_position_error_bounded_by_angular_bin_width(self, rng):
        # One random point per pixel, jittered inside its angular bin.
        cfg = SENSOR_CFG
        n = 500
        rows = rng.integers(0, cfg.height, n)
        cols = rng.integers(0, cfg.width, n)
        fov = np.radians(cfg.fov_up - cfg.fov_down)
        d_elev = fov / cfg.height
        d_az = 2 * np.pi / cfg.width
        elev = np.radians(cfg.fov_up) - (rows + rng.uniform(0.05, 0.95, n)) * d_elev
        az = -np.pi + (cols + rng.uniform(0.05, 0.95, n)) * d_az
        rngs = rng.uniform(1.0, 79.0, n)
        cloud = np.stack([
            rngs * np.cos(elev) * np.cos(az),
            rngs * np.cos(elev) * np.sin(az),
            rngs * np.sin(elev),
            np.full(n, 0.5),
        ], axis=1).astype(np.float32)

        img = project(cloud, cfg)
        back = unproject(img, cfg)
        bound = cfg.max_range * max(d_az, d_elev)
        # Match reconstructed points to originals via their pixel.
        orig_by_pixel = {}
        for i in range(n):
            r_i = int(np.floor((np.radians(cfg.fov_up) - elev[i]) / fov * cfg.height))
            c_i = int(np.floor((az[i] + np.pi) / (2 * np.pi) * cfg.width))
            key = (min(r_i, cfg.height - 1), min(c_i, cfg.width - 1))
            prev = orig_by_pixel.get(key)
            if prev is None or rngs[i] < prev[1]:
                orig_by_pixel[key] = (cloud[i, :3], rngs[i])
        rows_b, cols_b = np.nonzero(img.mask)
        flat = {(r, c): j for j, (r, c) in enumerate(zip(rows_b, cols_b))}
        checked = 0
        for key, (pos, _) in orig_by_pixel.items():
            j = flat[key]
            err = np.linalg.norm(back[j, :3] - pos)
            assert err <= bound
            checked += 1
        assert checked >= 400


class TestIdempotence:
    def test_project_unproject_project_is_bit_exact(self, rng):
        n = 3000
        pts = rng.uniform(-60, 60, (n, 3))
        cloud = np.concatenate(
            [pts, rng.uniform(0, 1, (n, 1))], axis=1).astype(np.float32)
        img1 = project(cloud, SENSOR_CFG)
        img2 = project(unproject(img1, SENSOR_CFG), SENSOR_CFG)
        assert img1.data.tobytes() == img2.data.tobytes()


class TestFileIO:
    def test_cloud_round_trip(self, tmp_path, rng):
        cloud = rng.uniform(-10, 10, (100, 4)).astype(np.float32)
        save_cloud(tmp_path / "a.bin", cloud)
        assert np.array_equal(load_cloud(tmp_path / "a.bin"), cloud)

    def test_range_image_round_trip(self, tmp_path, rng):
        data = rng.uniform(0, 50, (16, 32, 2)).astype(np.float32)
        save_range_image(tmp_path / "a.rimg", RangeImage(data))
        assert np.array_equal(load_range_image(tmp_path / "a.rimg").data, data)

    def test_missing_file_raises_data_error(self, tmp_path):
        with pytest.raises(DataError):
            load_cloud(tmp_path / "missing.bin")
        with pytest.raises(DataError):
            load_range_image(tmp_path / "missing.rimg")

    def test_truncated_cloud_rejected(self, tmp_path):
        (tmp_path / "bad.bin").write_bytes(b"\x00" * 10)
        with pytest.raises(DataError):
            load_cloud(tmp_path / "bad.bin")
