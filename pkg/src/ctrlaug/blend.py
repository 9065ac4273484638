"""Weighted blending of image and mask priors, and control-image PNG export.

The blend is per-pixel ``clamp(w1 * v_img + w2 * v_mask, 0, 1)``. The best
published weights sum past 1, so saturation is expected: clamping (rather
than renormalizing) lets label boundaries hit full intensity.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .priors import PriorError, PriorImage, prior_from_png


@dataclass(frozen=True)
class BlendWeights:
    w1: float = 0.7  # image-prior weight
    w2: float = 0.9  # mask-prior weight

    def __post_init__(self):
        for value in (self.w1, self.w2):
            if not math.isfinite(value) or value < 0.0:
                raise PriorError(f"blend weights must be finite and >= 0, got {value}")


def blend_priors(v_img: PriorImage, v_mask: PriorImage, w: BlendWeights) -> PriorImage:
    if v_img.values.shape != v_mask.values.shape:
        raise PriorError(
            f"prior shapes differ: {v_img.values.shape} vs {v_mask.values.shape}"
        )
    blended = np.clip(w.w1 * v_img.values + w.w2 * v_mask.values, 0.0, 1.0)
    return PriorImage(blended)


def export_control_image(prior: PriorImage, polarity: str = "white_on_black") -> bytes:
    """8-bit grayscale PNG of the prior, inverted first for black_on_white."""
    values = prior.values
    if polarity == "black_on_white":
        values = 1.0 - values
    elif polarity != "white_on_black":
        raise PriorError(f"unknown polarity {polarity!r}")
    gray = np.rint(255.0 * values).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(gray, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def import_control_image(png: bytes, polarity: str = "white_on_black") -> PriorImage:
    """Inverse of export_control_image up to 8-bit quantization."""
    return prior_from_png(png, polarity)
