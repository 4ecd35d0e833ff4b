import numpy as np
import pytest
from PIL import Image

from moireforge.data_pipeline import (
    ImageRecord,
    load_image_set,
    patch_filename,
    random_crop,
    read_patch_store,
    sample_unpaired,
    split_into_patches,
    write_patch_store,
)
from moireforge.errors import DataError

from conftest import make_patch


def _write_png(path, h, w, seed=0):
    rng = np.random.default_rng(seed)
    arr = (rng.random((h, w, 3)) * 255).astype(np.uint8)
    Image.fromarray(arr).save(path)
    return arr


class TestLoadImageSet:
    def test_loads_in_filename_order(self, tmp_path):
        for name in ("b.png", "a.png", "c.png"):
            _write_png(tmp_path / name, 200, 200, seed=hash(name) % 100)
        records = load_image_set(tmp_path, "moire")
        assert [r.id for r in records] == ["a", "b", "c"]
        assert all(r.role == "moire" for r in records)

    def test_pixels_normalized(self, tmp_path):
        arr = _write_png(tmp_path / "x.png", 192, 192)
        (record,) = load_image_set(tmp_path, "moire_free")
        assert record.pixels.min() >= 0.0 and record.pixels.max() <= 1.0
        np.testing.assert_allclose(record.pixels, arr / 255.0, atol=1e-7)

    def test_shape_passthrough(self, tmp_path):
        _write_png(tmp_path / "x.jpg", 1080, 1920)
        (record,) = load_image_set(tmp_path, "moire")
        assert record.pixels.shape == (1080, 1920, 3)

    def test_corrupt_file_named_in_error(self, tmp_path):
        _write_png(tmp_path / "a.png", 192, 192)
        (tmp_path / "bad.png").write_bytes(b"not a png at all")
        _write_png(tmp_path / "c.png", 192, 192)
        with pytest.raises(DataError, match="bad.png"):
            load_image_set(tmp_path, "moire")

    def test_empty_directory(self, tmp_path):
        with pytest.raises(DataError, match="no PNG/JPEG"):
            load_image_set(tmp_path, "moire")

    def test_missing_directory(self, tmp_path):
        with pytest.raises(DataError):
            load_image_set(tmp_path / "nope", "moire")

    def test_too_small_rejected(self, tmp_path):
        _write_png(tmp_path / "small.png", 100, 300)
        with pytest.raises(DataError, match="192"):
            load_image_set(tmp_path, "moire")


class TestSplitIntoPatches:
    def test_fhd_eight_cells(self):
        image = ImageRecord("img", np.zeros((1080, 1920, 3), np.float32), "moire")
        patches = split_into_patches(image, 8)
        assert len(patches) == 8
        assert all(p.pixels.shape == (540, 480, 3) for p in patches)
        assert [p.grid_index for p in patches] == list(range(8))

    def test_uhd_six_cells(self):
        image = ImageRecord("img", np.zeros((2160, 3840, 3), np.float32), "moire")
        patches = split_into_patches(image, 6)
        assert len(patches) == 6
        assert all(p.pixels.shape == (1080, 1280, 3) for p in patches)

    def test_tiling_covers_truncated_area(self):
        rng = np.random.default_rng(0)
        image = ImageRecord("img", rng.random((203, 405, 3)).astype(np.float32),
                            "moire")
        patches = split_into_patches(image, 8)
        ph, pw = 203 // 2, 405 // 4
        assert sum(p.pixels.shape[0] * p.pixels.shape[1] for p in patches) \
            == (ph * 2) * (pw * 4)
        # row-major reassembly reproduces the truncated image exactly
        rows = [
            np.concatenate([patches[r * 4 + c].pixels for c in range(4)], axis=1)
            for r in range(2)
        ]
        np.testing.assert_array_equal(
            np.concatenate(rows, axis=0), image.pixels[:ph * 2, :pw * 4]
        )

    def test_min_patch_side_enforced(self):
        image = ImageRecord("img", np.zeros((200, 200, 3), np.float32), "moire")
        with pytest.raises(DataError, match="minimum cell side"):
            split_into_patches(image, 8, min_patch_side=64)

    def test_bad_cell_count(self):
        image = ImageRecord("img", np.zeros((200, 200, 3), np.float32), "moire")
        with pytest.raises(ValueError):
            split_into_patches(image, 5)


class TestRandomCrop:
    def test_shape_contract(self, rng):
        patch = make_patch(np.random.default_rng(0).random((540, 480, 3)))
        out = random_crop(patch, 384, rng)
        assert out.pixels.shape == (384, 384, 3)

    def test_deterministic_given_rng_state(self):
        patch = make_patch(np.random.default_rng(0).random((256, 256, 3)))
        a = random_crop(patch, 192, np.random.default_rng(42))
        b = random_crop(patch, 192, np.random.default_rng(42))
        np.testing.assert_array_equal(a.pixels, b.pixels)

    def test_zero_slack_returns_whole_patch(self, rng):
        patch = make_patch(np.random.default_rng(0).random((192, 192, 3)))
        out = random_crop(patch, 192, rng)
        np.testing.assert_array_equal(out.pixels, patch.pixels)

    def test_too_small_patch(self, rng):
        patch = make_patch(np.zeros((100, 100, 3)))
        with pytest.raises(DataError):
            random_crop(patch, 192, rng)

    def test_crop_is_a_true_subregion(self, rng):
        pixels = np.random.default_rng(3).random((64, 64, 3)).astype(np.float32)
        patch = make_patch(pixels)
        for _ in range(20):
            out = random_crop(patch, 32, rng)
            # exhaustive offset search must find the crop somewhere
            found = any(
                np.array_equal(pixels[i:i + 32, j:j + 32], out.pixels)
                for i in range(33) for j in range(33)
            )
            assert found


class TestSampleUnpaired:
    def test_distinct_sources_always(self, rng):
        moire = [make_patch(np.zeros((8, 8, 3)), source_id=f"m{i}") for i in range(3)]
        free = [make_patch(np.zeros((8, 8, 3)), source_id=s, role="moire_free")
                for s in ("m0", "f1")]
        for _ in range(10_000):
            p_m, p_f = sample_unpaired(moire, free, rng)
            assert p_m.source_id != p_f.source_id

    def test_single_shared_source_errors(self, rng):
        moire = [make_patch(np.zeros((8, 8, 3)), source_id="x")]
        free = [make_patch(np.zeros((8, 8, 3)), source_id="x", role="moire_free")]
        with pytest.raises(DataError):
            sample_unpaired(moire, free, rng)

    def test_empty_inputs_error(self, rng):
        patch = [make_patch(np.zeros((8, 8, 3)))]
        with pytest.raises(DataError):
            sample_unpaired([], patch, rng)
        with pytest.raises(DataError):
            sample_unpaired(patch, [], rng)


class TestPatchStore:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(5)
        patches = [
            make_patch((rng.random((32, 32, 3)) * 255).round() / 255.0,
                       source_id=f"img{i}", grid_index=i % 4,
                       role="moire" if i % 2 else "moire_free")
            for i in range(6)
        ]
        manifest = write_patch_store(patches, tmp_path / "store")
        assert manifest.is_file()
        loaded = read_patch_store(tmp_path / "store")
        assert len(loaded) == 6
        by_key = {(p.source_id, p.grid_index, p.role): p for p in loaded}
        for p in patches:
            got = by_key[(p.source_id, p.grid_index, p.role)]
            np.testing.assert_allclose(got.pixels, p.pixels, atol=1 / 510)

    def test_role_filter(self, tmp_path):
        patches = [
            make_patch(np.zeros((8, 8, 3)), source_id="a", grid_index=0),
            make_patch(np.zeros((8, 8, 3)), source_id="b", grid_index=0,
                       role="moire_free"),
        ]
        write_patch_store(patches, tmp_path / "store")
        assert len(read_patch_store(tmp_path / "store", role="moire")) == 1

    def test_manifest_deterministic(self, tmp_path):
        patches = [make_patch(np.full((8, 8, 3), 0.5), source_id="a", grid_index=i)
                   for i in range(3)]
        m1 = write_patch_store(patches, tmp_path / "s1")
        m2 = write_patch_store(patches, tmp_path / "s2")
        assert m1.read_bytes() == m2.read_bytes()

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError):
            read_patch_store(tmp_path)

    def test_patch_filename_stable(self):
        p = make_patch(np.zeros((4, 4, 3)), source_id="img7", grid_index=3)
        assert patch_filename(p) == "moire/img7_003.png"
