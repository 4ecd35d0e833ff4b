import numpy as np
import pytest

from moireforge.data_pipeline import Patch
from moireforge.denoise import (
    StructureScore,
    ThresholdEntry,
    ThresholdTable,
    accept_pair,
    calibrate_threshold,
    edge_map,
    percentile_threshold,
    structure_score,
)
from moireforge.errors import DataError
from moireforge.moire_prior import luma

from conftest import make_patch, random_patch, striped_patch, tiny_bundle


class TestEdgeMap:
    def test_constant_patch_zero(self):
        out = edge_map(make_patch(np.full((12, 12, 3), 0.7)))
        np.testing.assert_array_equal(out, np.zeros((12, 12)))

    def test_single_bright_pixel_imprint(self):
        pixels = np.zeros((9, 9, 3))
        pixels[4, 4] = 1.0
        y = luma(pixels)[4, 4]
        out = edge_map(make_patch(pixels))
        assert out[4, 4] == pytest.approx(-4 * y)
        for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            assert out[4 + dy, 4 + dx] == pytest.approx(y)
        assert out[0, 0] == 0.0

    def test_linearity(self, rng):
        pixels = rng.random((16, 16, 3))
        np.testing.assert_allclose(
            edge_map(make_patch(pixels * 0.5)),
            0.5 * edge_map(make_patch(pixels)),
            atol=1e-12,
        )


class TestStructureScore:
    def test_identical_pair_zero(self, rng):
        p = random_patch(rng, 16, 16)
        assert structure_score(p, p) == 0.0

    def test_four_pixel_difference(self):
        # construct edge maps differing by exactly 1 at 4 pixels: a patch whose
        # luma is raised by 0.25 at four isolated interior pixels changes the
        # center response by -4 * 0.25 = -1 there (and +0.25 at neighbors)
        base = np.full((16, 16, 3), 0.5, np.float32)
        bumped = base.copy()
        spots = [(4, 4), (4, 11), (11, 4), (11, 11)]
        for (i, j) in spots:
            bumped[i, j] = 0.75
        a, b = make_patch(base), make_patch(bumped)
        diff = np.abs(edge_map(b) - edge_map(a))
        # each bump contributes |−4·Δ| at the center and |Δ| at 4 neighbors
        delta = luma(bumped)[4, 4] - luma(base)[4, 4]
        expected = 4 * (4 * delta + 4 * delta)
        assert structure_score(b, a) == pytest.approx(expected, rel=1e-6)

    def test_symmetry(self, rng):
        a = random_patch(rng, 16, 16)
        b = random_patch(rng, 16, 16)
        assert structure_score(a, b) == pytest.approx(structure_score(b, a))

    def test_shape_mismatch(self, rng):
        with pytest.raises(DataError):
            structure_score(random_patch(rng, 16, 16), random_patch(rng, 8, 8))

    def test_nonnegative(self, rng):
        for _ in range(20):
            a, b = random_patch(rng, 12, 12), random_patch(rng, 12, 12)
            assert structure_score(a, b) >= 0.0


class TestPercentile:
    def test_one_to_hundred(self):
        scores = list(range(1, 101))
        assert percentile_threshold(scores, 50) == 50
        assert percentile_threshold(scores, 40) == 40
        assert percentile_threshold(scores, 30) == 30
        assert percentile_threshold(scores, 20) == 20
        assert percentile_threshold(scores, 100) == 100

    def test_constant_distribution(self):
        for gamma in (1, 20, 50, 99, 100):
            assert percentile_threshold([7.0] * 55, gamma) == 7.0

    def test_unsorted_input(self):
        assert percentile_threshold([5, 1, 4, 2, 3], 60) == 3

    def test_monotone_in_gamma(self, rng):
        scores = rng.random(500).tolist()
        thresholds = [percentile_threshold(scores, g) for g in range(1, 101)]
        assert all(a <= b for a, b in zip(thresholds, thresholds[1:]))

    def test_gamma_bounds(self):
        with pytest.raises(ValueError):
            percentile_threshold([1.0], 0)
        with pytest.raises(ValueError):
            percentile_threshold([1.0], 101)


class TestThresholdTable:
    def test_roundtrip(self, tmp_path):
        table = ThresholdTable(config_hash="abc123")
        table.set(1, 192, ThresholdEntry(50, 12.5, 6400))
        table.set(2, 192, ThresholdEntry(40, 8.25, 6400))
        path = tmp_path / "thresholds.json"
        table.save(path)
        loaded = ThresholdTable.load(path)
        assert loaded.config_hash == "abc123"
        assert loaded.get(1, 192).threshold_value == 12.5
        assert loaded.get(2, 192).gamma_percent == 40

    def test_missing_entry(self):
        table = ThresholdTable()
        with pytest.raises(DataError, match="group 3"):
            table.get(3, 192)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            ThresholdTable.load(tmp_path / "nope.json")


class TestAcceptPair:
    def _table(self, threshold=50.0):
        table = ThresholdTable()
        table.set(1, 32, ThresholdEntry(50, threshold, 6400))
        return table

    def test_below_accepted(self):
        score = StructureScore(10.0, "p", 1, 32)
        assert accept_pair(score, self._table()) is True

    def test_boundary_inclusive(self):
        score = StructureScore(50.0, "p", 1, 32)
        assert accept_pair(score, self._table()) is True

    def test_above_rejected(self):
        score = StructureScore(51.0, "p", 1, 32)
        assert accept_pair(score, self._table()) is False

    def test_missing_entry_hard_error(self):
        score = StructureScore(10.0, "p", 2, 32)
        with pytest.raises(DataError):
            accept_pair(score, self._table())


class TestAcceptanceRate:
    def test_rate_tracks_gamma_on_fresh_samples(self):
        # calibration-sized sample, then 10k fresh draws from the same
        # continuous distribution: acceptance within gamma +/- 2 points
        rng = np.random.default_rng(99)
        for gamma in (50, 40, 30, 20):
            calibration = rng.gamma(2.0, 10.0, size=6400)
            threshold = percentile_threshold(calibration.tolist(), gamma)
            fresh = rng.gamma(2.0, 10.0, size=10_000)
            rate = 100.0 * np.mean(fresh <= threshold)
            assert abs(rate - gamma) <= 2.0, f"gamma={gamma}, rate={rate:.2f}"


class TestCalibrateThreshold:
    def test_small_real_calibration(self, rng):
        bundle = tiny_bundle(group_id=1, crop_size=32).eval()
        group = [striped_patch(rng, 48, 48, source_id=f"m{i}") for i in range(5)]
        free = [random_patch(rng, 48, 48, source_id=f"f{i}", role="moire_free")
                for i in range(5)]
        entry = calibrate_threshold(bundle, group, free, gamma_percent=50,
                                    rng=rng, n_samples=120)
        assert entry.sample_count == 120
        assert entry.gamma_percent == 50
        assert entry.threshold_value >= 0.0

    def test_too_few_samples(self, rng):
        bundle = tiny_bundle(group_id=1, crop_size=32)
        group = [striped_patch(rng, 48, 48, source_id="m0")]
        free = [random_patch(rng, 48, 48, source_id="f0", role="moire_free")]
        with pytest.raises(DataError, match="at least 100"):
            calibrate_threshold(bundle, group, free, 50, rng, n_samples=99)

    def test_deterministic_given_seed(self, rng):
        bundle = tiny_bundle(group_id=1, crop_size=32).eval()
        group = [striped_patch(rng, 48, 48, source_id=f"m{i}") for i in range(4)]
        free = [random_patch(rng, 48, 48, source_id=f"f{i}", role="moire_free")
                for i in range(4)]
        e1 = calibrate_threshold(bundle, group, free, 40,
                                 np.random.default_rng(7), n_samples=100)
        e2 = calibrate_threshold(bundle, group, free, 40,
                                 np.random.default_rng(7), n_samples=100)
        assert e1.threshold_value == e2.threshold_value
