"""VOC-style segmentation dataset I/O and per-image class sets.

Layout handled here::

    <root>/JPEGImages/<id>.jpg|png
    <root>/SegmentationClass/<id>.png        (8-bit indexed palette)
    <root>/ImageSets/Segmentation/<split>.txt
    <root>/manifest.jsonl                    (synthetic roots only)

Masks are palette-indexed PNGs; class identity is the palette index, never the
RGB color. Pixel value 255 is void and is excluded from every class statistic.
"""

from __future__ import annotations

import io
import json
import os
import tempfile
from dataclasses import dataclass, field
from hashlib import sha256
from pathlib import Path

import numpy as np
from PIL import Image

from .voc import VOID_ID, voc_palette

BACKGROUND_ID = 0


class DatasetError(Exception):
    """Raised for malformed trees, masks, or index violations."""


@dataclass(frozen=True)
class ClassId:
    """A foreground (or background) label: palette index plus text name."""

    id: int
    name: str

    def __post_init__(self):
        if not 0 <= self.id <= 254:
            raise DatasetError(f"class id {self.id} outside [0, 254] (255 is void)")


@dataclass
class LabelMask:
    """Per-pixel class ids as an (H, W) uint8 grid; 255 marks void pixels."""

    pixels: np.ndarray

    def __post_init__(self):
        if self.pixels.ndim != 2:
            raise DatasetError("mask must be 2-D")
        self.pixels = np.ascontiguousarray(self.pixels, dtype=np.uint8)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass
class SegSample:
    """One image/mask pair. Synthetic samples remember their seed sample."""

    sample_id: str
    image: np.ndarray  # (H, W, 3) uint8 RGB
    mask: LabelMask
    origin: str = "real"  # "real" | "synthetic"
    caption: str | None = None
    seed_id: str | None = None

    def __post_init__(self):
        if self.origin not in ("real", "synthetic"):
            raise DatasetError(f"bad origin {self.origin!r}")
        if self.origin == "synthetic" and not self.seed_id:
            raise DatasetError(f"synthetic sample {self.sample_id} missing seed_id")
        if self.image.shape[:2] != self.mask.pixels.shape:
            raise DatasetError(
                f"sample {self.sample_id}: image {self.image.shape[:2]} does not "
                f"match mask {self.mask.pixels.shape}"
            )


@dataclass
class DatasetIndex:
    """Ordered sample collection rooted at a VOC-style tree."""

    schema: list[ClassId]
    samples: list[SegSample]
    root: Path
    split: str
    _by_id: dict[str, SegSample] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.root = Path(self.root)
        self._by_id = {}
        for s in self.samples:
            if s.sample_id in self._by_id:
                raise DatasetError(f"duplicate sample_id {s.sample_id}")
            self._by_id[s.sample_id] = s

    def __len__(self) -> int:
        return len(self.samples)

    def __contains__(self, sample_id: str) -> bool:
        return sample_id in self._by_id

    def get(self, sample_id: str) -> SegSample:
        try:
            return self._by_id[sample_id]
        except KeyError:
            raise DatasetError(f"unknown sample_id {sample_id}") from None

    def schema_ids(self) -> set[int]:
        return {c.id for c in self.schema}

    def class_sets(self) -> list[tuple[str, tuple[int, ...]]]:
        """Ordered (sample_id, foreground class ids) listing."""
        return [(s.sample_id, classes_of(s.mask)) for s in self.samples]

    def fingerprint(self) -> str:
        return fingerprint_class_sets(self.class_sets())


def fingerprint_class_sets(items: list[tuple[str, tuple[int, ...]]]) -> str:
    """Stable digest of an ordered (sample_id, class set) listing."""
    h = sha256()
    for sample_id, classes in items:
        h.update(f"{sample_id}:{','.join(str(c) for c in classes)}\n".encode())
    return h.hexdigest()[:16]


def _split_file(root: Path, split: str) -> Path:
    return Path(root) / "ImageSets" / "Segmentation" / f"{split}.txt"


def _image_path(root: Path, sample_id: str) -> Path:
    for ext in (".jpg", ".png"):
        p = Path(root) / "JPEGImages" / f"{sample_id}{ext}"
        if p.exists():
            return p
    raise DatasetError(f"no image for sample {sample_id} under {root}/JPEGImages")


def _mask_path(root: Path, sample_id: str) -> Path:
    return Path(root) / "SegmentationClass" / f"{sample_id}.png"


def decode_mask(png: bytes, schema: list[ClassId]) -> LabelMask:
    """Decode an 8-bit indexed-palette PNG into a LabelMask.

    Pixel values are palette indices taken verbatim. Any value outside
    schema ∪ {0, 255} is rejected.
    """
    img = Image.open(io.BytesIO(png))
    if img.mode != "P":
        raise DatasetError(f"mask PNG must be indexed-palette, got mode {img.mode!r}")
    pixels = np.asarray(img, dtype=np.uint8)
    allowed = {BACKGROUND_ID, VOID_ID} | {c.id for c in schema}
    present = set(np.unique(pixels).tolist())
    bad = present - allowed
    if bad:
        raise DatasetError(f"mask contains out-of-schema indices {sorted(bad)}")
    return LabelMask(pixels)


def encode_mask(mask: LabelMask, schema: list[ClassId]) -> bytes:
    """Encode a mask as an indexed PNG carrying the standard VOC palette."""
    img = Image.fromarray(mask.pixels, mode="P")
    img.putpalette(voc_palette())
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def classes_of(mask: LabelMask) -> tuple[int, ...]:
    """Distinct foreground ids present, ascending; background and void excluded."""
    values = np.unique(mask.pixels)
    return tuple(int(v) for v in values if v != BACKGROUND_ID and v != VOID_ID)


def _decode_image(path: Path, sample_id: str) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except Exception as exc:
        raise DatasetError(f"cannot decode image for sample {sample_id}: {exc}") from exc


def load_index(root: Path | str, split: str, schema: list[ClassId]) -> DatasetIndex:
    """Load one index per split line, in file order, with masks decoded."""
    root = Path(root)
    split_path = _split_file(root, split)
    if not split_path.exists():
        raise DatasetError(f"missing split file {split_path}")
    sample_ids = [line.strip() for line in split_path.read_text().splitlines() if line.strip()]

    samples = []
    for sid in sample_ids:
        image = _decode_image(_image_path(root, sid), sid)
        mask_path = _mask_path(root, sid)
        if not mask_path.exists():
            raise DatasetError(f"no mask for sample {sid} at {mask_path}")
        try:
            mask = decode_mask(mask_path.read_bytes(), schema)
        except DatasetError as exc:
            raise DatasetError(f"sample {sid}: {exc}") from exc
        if image.shape[:2] != mask.pixels.shape:
            raise DatasetError(
                f"sample {sid}: image {image.shape[:2]} does not match mask "
                f"{mask.pixels.shape}"
            )
        samples.append(SegSample(sample_id=sid, image=image, mask=mask))
    return DatasetIndex(schema=schema, samples=samples, root=root, split=split)


def create_index(root: Path | str, split: str, schema: list[ClassId]) -> DatasetIndex:
    """Create an empty VOC-style tree (used for synthetic output roots)."""
    root = Path(root)
    (root / "JPEGImages").mkdir(parents=True, exist_ok=True)
    (root / "SegmentationClass").mkdir(parents=True, exist_ok=True)
    _split_file(root, split).parent.mkdir(parents=True, exist_ok=True)
    if not _split_file(root, split).exists():
        write_bytes_atomic(_split_file(root, split), b"")
    return DatasetIndex(schema=schema, samples=[], root=root, split=split)


def write_bytes_atomic(path: Path, data: bytes) -> None:
    """Write via temp-file-then-rename so readers never see partial content."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_sample(
    index: DatasetIndex,
    sample: SegSample,
    manifest_extra: dict | None = None,
) -> DatasetIndex:
    """Persist a sample into the index tree and append it to the split file.

    Synthetic samples also get a manifest.jsonl line recording at least the
    output and seed ids; ``manifest_extra`` supplies the generation context
    (target class, prompt, backend, request seed).
    """
    if sample.sample_id in index:
        raise DatasetError(f"duplicate sample_id {sample.sample_id}")

    img = Image.fromarray(sample.image, mode="RGB")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    write_bytes_atomic(index.root / "JPEGImages" / f"{sample.sample_id}.png", buf.getvalue())
    write_bytes_atomic(
        index.root / "SegmentationClass" / f"{sample.sample_id}.png",
        encode_mask(sample.mask, index.schema),
    )

    split_path = _split_file(index.root, index.split)
    listed = split_path.read_text() if split_path.exists() else ""
    if listed and not listed.endswith("\n"):
        listed += "\n"
    write_bytes_atomic(split_path, (listed + sample.sample_id + "\n").encode())

    if sample.origin == "synthetic":
        record = {"output_id": sample.sample_id, "seed_id": sample.seed_id}
        record.update(manifest_extra or {})
        with open(index.root / "manifest.jsonl", "a") as fh:
            fh.write(json.dumps(record) + "\n")

    index.samples.append(sample)
    index._by_id[sample.sample_id] = sample
    return index


def read_manifest(root: Path | str) -> list[dict]:
    path = Path(root) / "manifest.jsonl"
    if not path.exists():
        return []
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
