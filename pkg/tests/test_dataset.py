from __future__ import annotations

import io

import numpy as np
import pytest
from PIL import Image

from ctrlaug.dataset import (
    ClassId,
    DatasetError,
    LabelMask,
    SegSample,
    classes_of,
    decode_mask,
    encode_mask,
    load_index,
    read_manifest,
    write_sample,
)
from ctrlaug.voc import VOC_CLASSES, voc_schema

from tests.conftest import TOY_SCHEMA, random_image, rect_mask, toy3_samples, write_voc_tree


def indexed_png(mask: np.ndarray) -> bytes:
    return encode_mask(LabelMask(mask), TOY_SCHEMA)


class TestDecodeMask:
    def test_all_zero_is_background(self):
        mask = decode_mask(indexed_png(np.zeros((4, 4), dtype=np.uint8)), TOY_SCHEMA)
        assert mask.pixels.shape == (4, 4)
        assert (mask.pixels == 0).all()
        assert classes_of(mask) == ()

    def test_voc_palette_index_15_is_person(self):
        mask = rect_mask(4, 4, [(15, 0, 2, 0, 2)])
        decoded = decode_mask(encode_mask(LabelMask(mask), voc_schema()), voc_schema())
        assert classes_of(decoded) == (15,)
        assert VOC_CLASSES[15] == "person"

    def test_void_pixels_excluded_from_classes(self):
        mask = rect_mask(4, 4, [(255, 0, 4, 0, 2), (1, 0, 4, 2, 4)])
        decoded = decode_mask(indexed_png(mask), TOY_SCHEMA)
        assert classes_of(decoded) == (1,)

    def test_non_indexed_png_rejected(self):
        buf = io.BytesIO()
        Image.new("RGB", (4, 4)).save(buf, format="PNG")
        with pytest.raises(DatasetError, match="indexed"):
            decode_mask(buf.getvalue(), TOY_SCHEMA)

    def test_out_of_schema_index_rejected(self):
        with pytest.raises(DatasetError, match="out-of-schema"):
            decode_mask(indexed_png(rect_mask(4, 4, [(9, 0, 1, 0, 1)])), TOY_SCHEMA)


class TestClassesOf:
    def test_background_and_void_only(self):
        assert classes_of(LabelMask(rect_mask(4, 4, [(255, 0, 2, 0, 4)]))) == ()

    def test_definition(self):
        mask = rect_mask(6, 6, [(3, 0, 2, 0, 2), (1, 4, 6, 4, 6)])
        assert classes_of(LabelMask(mask)) == (1, 3)

    def test_matches_brute_force_scan(self):
        rng = np.random.default_rng(3)
        for _ in range(40):
            pixels = rng.choice(
                np.array([0, 1, 2, 3, 255], dtype=np.uint8), size=(8, 8)
            )
            expected = tuple(
                sorted(set(int(v) for v in pixels.ravel()) - {0, 255})
            )
            assert classes_of(LabelMask(pixels)) == expected


class TestLoadIndex:
    def test_three_listed_ids_in_file_order(self, toy3_root):
        index = load_index(toy3_root, "train", TOY_SCHEMA)
        assert [s.sample_id for s in index.samples] == ["I1", "I2", "I3"]
        assert all(s.origin == "real" for s in index.samples)

    def test_missing_mask_names_sample(self, toy3_root):
        (toy3_root / "SegmentationClass" / "I2.png").unlink()
        with pytest.raises(DatasetError, match="I2"):
            load_index(toy3_root, "train", TOY_SCHEMA)

    def test_missing_split_file(self, toy3_root):
        with pytest.raises(DatasetError, match="missing split"):
            load_index(toy3_root, "val", TOY_SCHEMA)

    def test_deterministic_reload(self, toy3_root):
        a = load_index(toy3_root, "train", TOY_SCHEMA)
        b = load_index(toy3_root, "train", TOY_SCHEMA)
        assert [s.sample_id for s in a.samples] == [s.sample_id for s in b.samples]
        for sa, sb in zip(a.samples, b.samples):
            assert np.array_equal(sa.mask.pixels, sb.mask.pixels)
            assert np.array_equal(sa.image, sb.image)
        assert a.fingerprint() == b.fingerprint()


class TestWriteSample:
    def test_round_trips_pixels(self, tmp_path):
        rng = np.random.default_rng(5)
        root = write_voc_tree(tmp_path / "t", "train", toy3_samples(), TOY_SCHEMA)
        index = load_index(root, "train", TOY_SCHEMA)
        sample = SegSample(
            sample_id="I9",
            image=random_image(rng, 20, 24),
            mask=LabelMask(rect_mask(20, 24, [(3, 0, 5, 0, 5)])),
        )
        write_sample(index, sample)
        reloaded = load_index(root, "train", TOY_SCHEMA)
        assert [s.sample_id for s in reloaded.samples] == ["I1", "I2", "I3", "I9"]
        got = reloaded.get("I9")
        assert np.array_equal(got.mask.pixels, sample.mask.pixels)
        assert np.array_equal(got.image, sample.image)

    def test_duplicate_id_rejected(self, toy3_root):
        index = load_index(toy3_root, "train", TOY_SCHEMA)
        sample = index.get("I1")
        with pytest.raises(DatasetError, match="duplicate"):
            write_sample(index, sample)

    def test_synthetic_manifest_records_seed(self, toy3_root):
        index = load_index(toy3_root, "train", TOY_SCHEMA)
        seed = index.get("I1")
        out = SegSample(
            sample_id="I1_g1",
            image=seed.image,
            mask=seed.mask,
            origin="synthetic",
            seed_id="I1",
        )
        write_sample(index, out, manifest_extra={"target_class": 1})
        records = read_manifest(toy3_root)
        assert records == [{"output_id": "I1_g1", "seed_id": "I1", "target_class": 1}]


class TestMaskRoundTrip:
    def test_random_masks_survive_encode_decode(self):
        rng = np.random.default_rng(17)
        values = np.array([0, 1, 2, 3, 255], dtype=np.uint8)
        for _ in range(30):
            pixels = rng.choice(values, size=(rng.integers(2, 16), rng.integers(2, 16)))
            mask = LabelMask(pixels)
            decoded = decode_mask(encode_mask(mask, TOY_SCHEMA), TOY_SCHEMA)
            assert np.array_equal(decoded.pixels, mask.pixels)


def test_class_id_range_validated():
    with pytest.raises(DatasetError):
        ClassId(255, "void")
    with pytest.raises(DatasetError):
        ClassId(-1, "neg")
