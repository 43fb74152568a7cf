"""Dataset assembly, manifests, presets, image codecs and augmentation."""

import numpy as np
import pytest
from PIL import Image as PILImage

from effcxr.data import (
    AugRecipe,
    AugSpec,
    COVIDX_TARGETS,
    DatasetConfig,
    Image,
    ImageLoader,
    LABELS,
    MANIFEST_HEADER,
    ManifestEntry,
    apply_config,
    apply_recipe,
    augment,
    build_covidx,
    class_counts,
    draw_recipe,
    hierarchical_relabel,
    load_image,
    normalize,
    read_manifest,
    resize,
    save_image,
    write_manifest,
)


def make_pool(label, source, count, prefix):
    return [
        ManifestEntry(f"{prefix}/{label}/{i:05d}.png", label, source, "train")
        for i in range(count)
    ]


def assembled_splits(seed=0):
    rsna = make_pool("Normal", "RSNA", 8200, "rsna") + make_pool(
        "Pneumonia", "RSNA", 5600, "rsna"
    )
    covid = make_pool("COVID19", "COVIDCollection", 200, "cc")
    return build_covidx(rsna, covid, seed=seed)


class TestManifestIO:
    def test_round_trip(self, tmp_path):
        entries = [
            ManifestEntry("a/x.png", "Normal", "RSNA", "train"),
            ManifestEntry("b/y.png", "COVID19", "COVIDCollection", "test", "rot=3.5;flip=1"),
        ]
        path = tmp_path / "m.csv"
        write_manifest(entries, path)
        assert read_manifest(path) == entries

    def test_header_written(self, tmp_path):
        path = tmp_path / "m.csv"
        write_manifest([], path)
        assert path.read_text().splitlines()[0] == ",".join(MANIFEST_HEADER)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("path,label,source\n")
        with pytest.raises(ValueError, match="header"):
            read_manifest(path)

    def test_wrong_field_count_rejected(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text(",".join(MANIFEST_HEADER) + "\na.png,Normal,RSNA\n")
        with pytest.raises(ValueError, match="5 fields"):
            read_manifest(path)

    def test_entry_validation(self):
        with pytest.raises(ValueError):
            ManifestEntry("a.png", "Flu", "RSNA", "train")
        with pytest.raises(ValueError):
            ManifestEntry("a.png", "Normal", "Web", "train")
        with pytest.raises(ValueError):
            ManifestEntry("a.png", "Normal", "RSNA", "validation")

    def test_class_counts(self):
        entries = [
            ManifestEntry("a.png", "Normal", "RSNA", "train"),
            ManifestEntry("b.png", "Normal", "RSNA", "train"),
            ManifestEntry("c.png", "COVID19", "COVIDCollection", "train"),
        ]
        assert class_counts(entries) == {"Normal": 2, "Pneumonia": 0, "COVID19": 1}


class TestAssembly:
    def test_published_counts(self):
        train, test = assembled_splits()
        assert class_counts(train) == {"Normal": 7966, "Pneumonia": 5421, "COVID19": 152}
        assert class_counts(test) == {"Normal": 100, "Pneumonia": 100, "COVID19": 31}
        assert len(train) == 13539
        assert len(test) == 231

    def test_partitions_assigned(self):
        train, test = assembled_splits()
        assert all(e.partition == "train" for e in train)
        assert all(e.partition == "test" for e in test)

    def test_splits_disjoint(self):
        train, test = assembled_splits()
        assert not {e.path for e in train} & {e.path for e in test}

    def test_deterministic_per_seed(self):
        assert assembled_splits(seed=4) == assembled_splits(seed=4)
        assert assembled_splits(seed=4) != assembled_splits(seed=5)

    def test_covid_rows_only_from_collection(self):
        train, test = assembled_splits()
        for e in train + test:
            if e.label == "COVID19":
                assert e.source == "COVIDCollection"

    def test_covid_in_rsna_rejected(self):
        rsna = make_pool("Normal", "RSNA", 10, "rsna")
        rsna.append(ManifestEntry("rsna/bad.png", "COVID19", "RSNA", "train"))
        with pytest.raises(ValueError, match="COVID19 row"):
            build_covidx(rsna, [], seed=0, scale=0.001)

    def test_shortfall_names_class_and_counts(self):
        rsna = make_pool("Normal", "RSNA", 8200, "rsna") + make_pool(
            "Pneumonia", "RSNA", 5600, "rsna"
        )
        covid = make_pool("COVID19", "COVIDCollection", 150, "cc")  # needs 183
        with pytest.raises(ValueError, match="COVID19") as err:
            build_covidx(rsna, covid)
        assert "183" in str(err.value) and "150" in str(err.value)

    def test_scale_shrinks_targets(self):
        rsna = make_pool("Normal", "RSNA", 100, "rsna") + make_pool(
            "Pneumonia", "RSNA", 80, "rsna"
        )
        covid = make_pool("COVID19", "COVIDCollection", 10, "cc")
        train, test = build_covidx(rsna, covid, scale=0.01)
        assert class_counts(train) == {"Normal": 80, "Pneumonia": 54, "COVID19": 2}
        # test targets round to 1 (and the floor keeps COVID19 at 1)
        assert class_counts(test) == {"Normal": 1, "Pneumonia": 1, "COVID19": 1}

    def test_scale_validated(self):
        with pytest.raises(ValueError):
            build_covidx([], [], scale=0.0)


class TestPresets:
    def test_raw_returns_everything(self):
        train, _ = assembled_splits()
        out = apply_config(train, DatasetConfig(preset="raw"))
        assert class_counts(out) == {"Normal": 7966, "Pneumonia": 5421, "COVID19": 152}

    def test_raw_plus_aug_counts(self):
        train, _ = assembled_splits()
        out = apply_config(train, DatasetConfig(preset="raw-plus-aug"))
        assert class_counts(out) == {"Normal": 4000, "Pneumonia": 4000, "COVID19": 1152}

    def test_balanced_counts(self):
        train, _ = assembled_splits()
        out = apply_config(train, DatasetConfig(preset="balanced"))
        assert class_counts(out) == {"Normal": 1000, "Pneumonia": 1000, "COVID19": 1000}

    def test_augmented_rows_replayable(self):
        train, _ = assembled_splits()
        out = apply_config(train, DatasetConfig(preset="raw-plus-aug"), seed=1)
        covid = [e for e in out if e.label == "COVID19"]
        originals = [e for e in covid if not e.aug_recipe]
        augmented = [e for e in covid if e.aug_recipe]
        assert len(originals) == 152
        assert len(augmented) == 1000
        source_paths = {e.path for e in originals}
        for e in augmented:
            assert e.path in source_paths  # references a real file
            assert not AugRecipe.from_string(e.aug_recipe).is_identity()

    def test_balanced_undersamples_large_covid_pool(self):
        train, _ = assembled_splits()
        config = DatasetConfig(preset="balanced", per_class=100)
        out = apply_config(train, config)
        covid = [e for e in out if e.label == "COVID19"]
        assert len(covid) == 100
        assert all(not e.aug_recipe for e in covid)

    def test_deterministic_per_seed(self):
        train, _ = assembled_splits()
        config = DatasetConfig(preset="balanced")
        assert apply_config(train, config, seed=3) == apply_config(train, config, seed=3)
        assert apply_config(train, config, seed=3) != apply_config(train, config, seed=4)

    def test_test_rows_rejected(self):
        _, test = assembled_splits()
        with pytest.raises(ValueError, match="train split"):
            apply_config(test, DatasetConfig())

    def test_config_validation(self):
        with pytest.raises(ValueError):
            DatasetConfig(preset="augmented")
        with pytest.raises(ValueError):
            DatasetConfig(per_class=0)


class TestRelabel:
    def test_root_merges_covid_into_pneumonia(self):
        train, _ = assembled_splits()
        out = hierarchical_relabel(train, "root")
        counts = class_counts(out)
        assert counts == {"Normal": 7966, "Pneumonia": 5573, "COVID19": 0}
        assert len(out) == len(train)

    def test_root_keeps_paths(self):
        entries = [ManifestEntry("c.png", "COVID19", "COVIDCollection", "train")]
        out = hierarchical_relabel(entries, "root")
        assert out[0].path == "c.png" and out[0].label == "Pneumonia"

    def test_leaf_drops_normal(self):
        train, _ = assembled_splits()
        out = hierarchical_relabel(train, "leaf")
        counts = class_counts(out)
        assert counts == {"Normal": 0, "Pneumonia": 5421, "COVID19": 152}

    def test_bad_level(self):
        with pytest.raises(ValueError):
            hierarchical_relabel([], "mid")


class TestImageBasics:
    def test_normalize_uint8(self):
        img = normalize(np.array([[0, 127, 255]], dtype=np.uint8))
        assert img.bit_depth == 8
        assert img.pixels.shape == (1, 3, 1)
        assert np.allclose(img.pixels[0, :, 0], [0.0, 127 / 255.0, 1.0])

    def test_normalize_uint16(self):
        img = normalize(np.array([[0, 32768, 65535]], dtype=np.uint16))
        assert img.bit_depth == 16
        assert np.allclose(img.pixels[0, :, 0], [0.0, 32768 / 65535.0, 1.0])

    def test_normalize_rejects_floats_and_zeros(self):
        with pytest.raises(ValueError, match="bit depth"):
            normalize(np.zeros((4, 4), dtype=np.float32))
        with pytest.raises(ValueError, match="all-zero"):
            normalize(np.zeros((4, 4), dtype=np.uint8))

    def test_image_shape_validation(self):
        assert Image(pixels=np.zeros((4, 4))).pixels.shape == (4, 4, 1)
        with pytest.raises(ValueError):
            Image(pixels=np.zeros((4, 4, 2)))

    def test_save_load_gray_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        raw = rng.integers(0, 256, size=(12, 10), dtype=np.uint8)
        raw[0, 0] = 255  # keep normalize happy
        path = tmp_path / "g.png"
        save_image(raw.astype(np.float32) / 255.0, path)
        loaded = load_image(path)
        assert loaded.pixels.shape == (12, 10, 1)
        assert np.array_equal(
            np.round(loaded.pixels[:, :, 0] * 255).astype(np.uint8), raw
        )

    def test_save_load_rgb_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        raw = rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8)
        raw[0, 0, 0] = 255
        path = tmp_path / "c.png"
        save_image(raw.astype(np.float32) / 255.0, path)
        loaded = load_image(path)
        assert loaded.pixels.shape == (8, 8, 3)
        assert np.array_equal(np.round(loaded.pixels * 255).astype(np.uint8), raw)

    def test_load_sixteen_bit(self, tmp_path):
        raw = (np.arange(64, dtype=np.uint16).reshape(8, 8) * 1000) + 1
        im = PILImage.frombytes("I;16", (8, 8), raw.astype("<u2").tobytes())
        path = tmp_path / "deep.png"
        im.save(path)
        loaded = load_image(path)
        assert loaded.bit_depth == 16
        assert np.allclose(loaded.pixels[:, :, 0], raw / 65535.0)


class TestResize:
    def test_identity_at_target_size(self):
        rng = np.random.default_rng(4)
        img = Image(pixels=rng.random((16, 16, 3)).astype(np.float32))
        out = resize(img, 16)
        assert np.array_equal(out.pixels, img.pixels)

    def test_constant_stays_constant(self):
        img = Image(pixels=np.full((10, 10, 3), 0.25, dtype=np.float32))
        for res in (8, 16, 32):
            assert np.allclose(resize(img, res).pixels, 0.25, atol=1e-6)

    def test_half_pixel_upscale_oracle(self):
        # rows are [0, 1] along x, so each output value equals its clipped
        # half-pixel sampling coordinate: (i + 0.5) * 2/8 - 0.5 clipped to [0, 1]
        img = Image(pixels=np.array([[0.0, 1.0], [0.0, 1.0]], dtype=np.float32))
        out = resize(img, 8)
        assert out.pixels.shape == (8, 8, 3)
        expected_row = np.clip((np.arange(8) + 0.5) * (2 / 8) - 0.5, 0.0, 1.0)
        assert np.allclose(out.pixels[:, :, 0], np.tile(expected_row, (8, 1)), atol=1e-6)

    def test_downscale_averages_neighborhood(self):
        # 16 -> 8 sampling centers land on (0.5, 2.5, ...) so each output pixel
        # is the mean of its 2x2 source neighborhood
        rng = np.random.default_rng(5)
        px = rng.random((16, 16, 1)).astype(np.float32)
        centers = (np.arange(8) + 0.5) * (16 / 8) - 0.5
        down = resize(Image(pixels=px), 8).pixels[:, :, 0]
        for i, y in enumerate(centers):
            for j, x in enumerate(centers):
                y0, x0 = int(y), int(x)
                manual = px[y0 : y0 + 2, x0 : x0 + 2, 0].mean()
                assert np.isclose(down[i, j], manual, atol=1e-6)

    def test_gray_replicated_to_three_channels(self):
        img = Image(pixels=np.random.default_rng(6).random((9, 9)).astype(np.float32))
        out = resize(img, 9)
        assert out.pixels.shape == (9, 9, 3)
        assert np.array_equal(out.pixels[:, :, 0], out.pixels[:, :, 2])

    def test_minimum_resolution(self):
        img = Image(pixels=np.ones((10, 10, 3), dtype=np.float32))
        with pytest.raises(ValueError):
            resize(img, 7)


class TestAugmentation:
    def gradient_image(self, n=16):
        g = np.linspace(0.0, 1.0, n * n, dtype=np.float32).reshape(n, n)
        return Image(pixels=np.stack([g, g * 0.5, g * 0.25], axis=2))

    def test_recipe_string_round_trip(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            recipe = draw_recipe(AugSpec(), rng)
            again = AugRecipe.from_string(recipe.to_string())
            assert again == recipe

    def test_identity_recipe(self):
        assert AugRecipe().is_identity()
        assert AugRecipe.from_string("") == AugRecipe()
        assert AugRecipe().to_string() == ""

    def test_unknown_field_rejected(self):
        with pytest.raises(ValueError, match="unknown recipe field"):
            AugRecipe.from_string("shear=2.0")

    def test_hflip_mirrors(self):
        img = self.gradient_image()
        out = apply_recipe(img, AugRecipe(hflip=True))
        assert np.allclose(out.pixels, img.pixels[:, ::-1, :])

    def test_double_flip_is_identity(self):
        img = self.gradient_image()
        once = apply_recipe(img, AugRecipe(hflip=True))
        twice = apply_recipe(once, AugRecipe(hflip=True))
        assert np.allclose(twice.pixels, img.pixels)

    def test_zero_rotation_preserves_interior(self):
        img = self.gradient_image()
        out = apply_recipe(img, AugRecipe(rotation_deg=0.0))
        assert np.allclose(out.pixels, img.pixels, atol=1e-6)

    def test_rotation_fixes_center(self):
        img = self.gradient_image(17)  # odd size puts a pixel at the center
        for deg in (-15.0, -5.0, 5.0, 15.0):
            out = apply_recipe(img, AugRecipe(rotation_deg=deg))
            assert np.allclose(out.pixels[8, 8], img.pixels[8, 8], atol=1e-6)

    def test_zoom_constant_invariant(self):
        img = Image(pixels=np.full((12, 12, 3), 0.6, dtype=np.float32))
        out = apply_recipe(img, AugRecipe(zoom=1.2))
        assert np.allclose(out.pixels, 0.6, atol=1e-6)

    def test_zoom_magnifies_center(self):
        # a bright center square grows when zoomed
        px = np.zeros((16, 16, 1), dtype=np.float32)
        px[6:10, 6:10] = 1.0
        out = apply_recipe(Image(pixels=px), AugRecipe(zoom=1.2))
        assert out.pixels.sum() > px.sum()

    def test_zoom_below_one_rejected(self):
        img = self.gradient_image()
        with pytest.raises(ValueError):
            apply_recipe(img, AugRecipe(zoom=0.8))

    def test_shape_and_range_preserved(self):
        img = self.gradient_image()
        rng = np.random.default_rng(8)
        for _ in range(10):
            recipe = draw_recipe(AugSpec(probability=1.0), rng)
            out = apply_recipe(img, recipe)
            assert out.pixels.shape == img.pixels.shape
            assert out.pixels.min() >= 0.0 and out.pixels.max() <= 1.0

    def test_draw_probability_extremes(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            assert draw_recipe(AugSpec(probability=0.0), rng).is_identity()
        for _ in range(10):
            recipe = draw_recipe(AugSpec(probability=1.0), rng)
            assert recipe.rotation_deg is not None and abs(recipe.rotation_deg) <= 15.0
            assert recipe.zoom is not None and 1.0 <= recipe.zoom <= 1.2
            assert recipe.hflip

    def test_augment_deterministic(self):
        img = self.gradient_image()
        a = augment(img, AugSpec(), seed=21)
        b = augment(img, AugSpec(), seed=21)
        c = augment(img, AugSpec(), seed=22)
        assert np.array_equal(a.pixels, b.pixels)
        assert not np.array_equal(a.pixels, c.pixels)

    def test_spec_ranges_validated(self):
        with pytest.raises(ValueError):
            AugSpec(max_rotation_deg=20.0)
        with pytest.raises(ValueError):
            AugSpec(zoom_fraction=0.5)
        with pytest.raises(ValueError):
            AugSpec(probability=1.5)


class TestImageLoader:
    def write_png(self, tmp_path, name, rng, size=12):
        raw = rng.integers(0, 256, size=(size, size), dtype=np.uint8)
        raw[0, 0] = 255
        save_image(raw.astype(np.float32) / 255.0, tmp_path / name)
        return raw

    def test_prepare_resolves_root(self, tmp_path):
        rng = np.random.default_rng(10)
        raw = self.write_png(tmp_path, "img.png", rng)
        loader = ImageLoader(root=tmp_path)
        entry = ManifestEntry("img.png", "Normal", "RSNA", "train")
        out = loader.prepare(entry, 12)
        assert out.shape == (12, 12, 3)
        assert out.dtype == np.float32
        assert np.allclose(out[:, :, 0], raw / 255.0, atol=1e-6)

    def test_cache_serves_first_read(self, tmp_path):
        rng = np.random.default_rng(11)
        self.write_png(tmp_path, "img.png", rng)
        loader = ImageLoader(root=tmp_path)
        entry = ManifestEntry("img.png", "Normal", "RSNA", "train")
        first = loader.prepare(entry, 8)
        self.write_png(tmp_path, "img.png", np.random.default_rng(99))
        assert np.array_equal(loader.prepare(entry, 8), first)
        fresh = ImageLoader(root=tmp_path, cache=False)
        assert not np.array_equal(fresh.prepare(entry, 8), first)

    def test_recipe_replayed(self, tmp_path):
        rng = np.random.default_rng(12)
        raw = self.write_png(tmp_path, "img.png", rng)
        loader = ImageLoader(root=tmp_path)
        entry = ManifestEntry("img.png", "COVID19", "COVIDCollection", "train", "flip=1")
        out = loader.prepare(entry, 12)
        assert np.allclose(out[:, :, 0], (raw / 255.0)[:, ::-1], atol=1e-6)

    def test_batch_stacks(self, tmp_path):
        rng = np.random.default_rng(13)
        self.write_png(tmp_path, "a.png", rng)
        self.write_png(tmp_path, "b.png", rng)
        loader = ImageLoader(root=tmp_path)
        entries = [
            ManifestEntry("a.png", "Normal", "RSNA", "train"),
            ManifestEntry("b.png", "Pneumonia", "RSNA", "train"),
        ]
        batch = loader.batch(entries, 8)
        assert batch.shape == (2, 8, 8, 3)
        assert batch.dtype == np.float32
