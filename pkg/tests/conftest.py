from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from ctrlaug.dataset import ClassId, LabelMask, encode_mask

TOY_SCHEMA = [ClassId(1, "cat"), ClassId(2, "dog"), ClassId(3, "bird")]


def rect_mask(h: int, w: int, rects) -> np.ndarray:
    """Background canvas with painted (value, y0, y1, x0, x1) rectangles."""
    mask = np.zeros((h, w), dtype=np.uint8)
    for value, y0, y1, x0, x1 in rects:
        mask[y0:y1, x0:x1] = value
    return mask


def random_image(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    return rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)


def write_voc_tree(root: Path, split: str, samples: dict, schema) -> Path:
    """samples: sample_id -> (rgb image, mask array); written in key order."""
    (root / "JPEGImages").mkdir(parents=True, exist_ok=True)
    (root / "SegmentationClass").mkdir(parents=True, exist_ok=True)
    split_dir = root / "ImageSets" / "Segmentation"
    split_dir.mkdir(parents=True, exist_ok=True)
    for sid, (image, mask) in samples.items():
        Image.fromarray(image, mode="RGB").save(root / "JPEGImages" / f"{sid}.png")
        (root / "SegmentationClass" / f"{sid}.png").write_bytes(
            encode_mask(LabelMask(mask), schema)
        )
    (split_dir / f"{split}.txt").write_text("".join(f"{sid}\n" for sid in samples))
    return root


def toy3_samples(rng: np.random.Generator | None = None) -> dict:
    """The 3-image fixture: I1 {cat}, I2 {cat, dog}, I3 {dog, bird}."""
    rng = rng or np.random.default_rng(7)
    return {
        "I1": (random_image(rng, 20, 24), rect_mask(20, 24, [(1, 2, 8, 2, 10)])),
        "I2": (
            random_image(rng, 20, 24),
            rect_mask(20, 24, [(1, 0, 6, 0, 6), (2, 10, 16, 10, 20)]),
        ),
        "I3": (
            random_image(rng, 20, 24),
            rect_mask(20, 24, [(2, 1, 7, 3, 9), (3, 12, 18, 12, 22)]),
        ),
    }


@pytest.fixture
def toy3_root(tmp_path) -> Path:
    return write_voc_tree(tmp_path / "voc", "train", toy3_samples(), TOY_SCHEMA)


def toy10_samples() -> dict:
    """Imbalanced 10-image set: cat in 8 images, dog in 3, bird in 1."""
    rng = np.random.default_rng(11)
    samples = {}
    for i in range(8):
        rects = [(1, 2, 10, 2, 12)]
        if i < 3:
            rects.append((2, 12, 18, 4, 14))
        samples[f"S{i:02d}"] = (random_image(rng, 20, 24), rect_mask(20, 24, rects))
    samples["S08"] = (
        random_image(rng, 20, 24),
        rect_mask(20, 24, [(3, 5, 15, 5, 15)]),
    )
    samples["S09"] = (random_image(rng, 20, 24), rect_mask(20, 24, [(1, 0, 4, 0, 4)]))
    return samples


@pytest.fixture
def toy10_root(tmp_path) -> Path:
    return write_voc_tree(tmp_path / "voc10", "train", toy10_samples(), TOY_SCHEMA)
