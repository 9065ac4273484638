"""PASCAL VOC label schema: class names, ids, and the indexed-PNG palette."""

from __future__ import annotations

# Devkit class order; palette index == position in this list (background = 0).
VOC_CLASSES = (
    "background",
    "aeroplane",
    "bicycle",
    "bird",
    "boat",
    "bottle",
    "bus",
    "car",
    "cat",
    "chair",
    "cow",
    "diningtable",
    "dog",
    "horse",
    "motorbike",
    "person",
    "pottedplant",
    "sheep",
    "sofa",
    "train",
    "tvmonitor",
)

VOID_ID = 255

# Natural-word renderings for prompt text; everything else uses the devkit
# spelling verbatim.
DISPLAY_NAMES = {
    "diningtable": "dining table",
    "pottedplant": "potted plant",
    "tvmonitor": "tv monitor",
}


def voc_palette() -> list[int]:
    """Standard VOC colormap as a flat 768-entry RGB palette.

    Uses the devkit's bit-reversal construction, so index 255 comes out as
    the (224, 224, 192) void color.
    """
    palette = [0] * (256 * 3)
    for i in range(256):
        r = g = b = 0
        cid = i
        for shift in range(8):
            r |= ((cid >> 0) & 1) << (7 - shift)
            g |= ((cid >> 1) & 1) << (7 - shift)
            b |= ((cid >> 2) & 1) << (7 - shift)
            cid >>= 3
        palette[i * 3 : i * 3 + 3] = [r, g, b]
    return palette


def voc_schema():
    """The 20 foreground classes as a ClassId list (background excluded)."""
    from .dataset import ClassId

    return [ClassId(i, name) for i, name in enumerate(VOC_CLASSES) if i > 0]
