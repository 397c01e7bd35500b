import numpy as np
import pytest

from rangeloop.corruption import SCATTER_INTENSITY_MAX, CorruptionParams, corrupt
from rangeloop.errors import ConfigurationError


def make_cloud(rng, n=1000):
    pts = rng.uniform(-40, 40, (n, 3))
    inten = rng.uniform(0.2, 1.0, (n, 1))
    return np.concatenate([pts, inten], axis=1)


class TestParams:
    def test_unknown_kind_rejected(self):
        with pytest.raises(ConfigurationError):
            CorruptionParams(kind="hail")

    @pytest.mark.parametrize("kwargs", [
        {"dropout_prob": 1.5}, {"dropout_prob": -0.1}, {"scatter_rate": -1.0},
        {"scatter_range_max": 0.0}, {"attenuation": -0.5},
    ])
    def test_out_of_range_values_rejected(self, kwargs):
        with pytest.raises(ConfigurationError):
            CorruptionParams(**kwargs)


class TestCorrupt:
    def test_identity_params_return_input_unchanged(self, rng):
        cloud = make_cloud(rng)
        out, flags = corrupt(cloud, CorruptionParams(kind="none", rng_seed=3))
        assert np.array_equal(out, cloud)
        assert not flags.any()

    def test_full_dropout_no_scatter_gives_empty_output(self, rng):
        cloud = make_cloud(rng)
        out, flags = corrupt(cloud, CorruptionParams(
            kind="rain", dropout_prob=1.0, scatter_rate=0.0, rng_seed=1))
        assert out.shape == (0, 4)
        assert flags.shape == (0,)

    def test_seed7_scatter_count_is_reproducible(self, rng):
        # Replaying the generator stream (1000 dropout draws, then the
        # Poisson count) for seed 7 and rate 100 yields 104 points.
        cloud = make_cloud(rng, n=1000)
        params = CorruptionParams(kind="snow", scatter_rate=100.0,
                                  dropout_prob=0.0, rng_seed=7)
        out, flags = corrupt(cloud, params)
        assert out.shape[0] == 1000 + 104
        assert flags.sum() == 104
        out2, flags2 = corrupt(cloud, params)
        assert np.array_equal(out, out2)
        assert np.array_equal(flags, flags2)

    def test_determinism_is_bitwise(self, rng):
        cloud = make_cloud(rng)
        params = CorruptionParams(kind="fog", scatter_rate=50.0,
                                  dropout_prob=0.3, attenuation=0.02, rng_seed=11)
        a, fa = corrupt(cloud, params)
        b, fb = corrupt(cloud, params)
        assert a.tobytes() == b.tobytes()
        assert np.array_equal(fa, fb)

    def test_flagged_points_are_new_and_unflagged_points_are_original(self, rng):
        cloud = make_cloud(rng, n=400)
        out, flags = corrupt(cloud, CorruptionParams(
            kind="snow", scatter_rate=80.0, dropout_prob=0.25, rng_seed=5))
        originals = {row.tobytes() for row in cloud[:, :3]}
        for row, flag in zip(out, flags):
            if flag:
                assert row[:3].tobytes() not in originals
            else:
                assert row[:3].tobytes() in originals

    def test_attenuation_scales_intensity_exponentially(self):
        cloud = np.array([[10.0, 0.0, 0.0, 1.0], [0.0, 20.0, 0.0, 0.5]])
        out, _ = corrupt(cloud, CorruptionParams(
            kind="fog", attenuation=0.1, rng_seed=0))
        assert out[0, 3] == pytest.approx(np.exp(-1.0), rel=1e-12)
        assert out[1, 3] == pytest.approx(0.5 * np.exp(-2.0), rel=1e-12)

    def test_scatter_points_live_in_ball_with_low_intensity(self, rng):
        cloud = make_cloud(rng, n=10)
        out, flags = corrupt(cloud, CorruptionParams(
            kind="snow", scatter_rate=500.0, scatter_range_max=20.0, rng_seed=2))
        scatter = out[flags]
        assert scatter.shape[0] > 400
        dists = np.linalg.norm(scatter[:, :3], axis=1)
        assert (dists <= 20.0).all()
        assert (scatter[:, 3] >= 0).all()
        assert (scatter[:, 3] <= SCATTER_INTENSITY_MAX).all()

    def test_mean_survivor_count_matches_dropout_within_3se(self, rng):
        n, p, trials = 500, 0.3, 120
        cloud = make_cloud(rng, n=n)
        counts = []
        for seed in range(trials):
            out, flags = corrupt(cloud, CorruptionParams(
                kind="rain", dropout_prob=p, rng_seed=seed))
            counts.append(len(out) - int(flags.sum()))
        mean = np.mean(counts)
        se = np.sqrt(n * p * (1 - p) / trials)
        assert abs(mean - n * (1 - p)) <= 3 * se
