"""Text prompt construction and caption resolution.

Three prompt forms are supported: a bare class list ("dog, person"), a
"A photo of ..." variant, and the caption+classes form produced by joining a
generated caption with the class list using "; ". Class names render through
a display-name map so multiword classes read naturally ("dining table").
"""

from __future__ import annotations

import base64
import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import httpx
import numpy as np
from PIL import Image

from .dataset import ClassId, SegSample
from .voc import DISPLAY_NAMES

log = logging.getLogger(__name__)

SEPARATOR = "; "


class PromptError(Exception):
    pass


@dataclass(frozen=True)
class PromptBundle:
    """The prompt variants built once per sample.

    ``appended`` is the prompt handed to the generation backend: caption
    joined with the bare class list when a caption exists, otherwise the
    "A photo of ..." fallback.
    """

    caption: str | None
    class_prompt: str
    appended: str


def _render_names(
    classes: Sequence[ClassId], display: Mapping[str, str] | None
) -> list[str]:
    if not classes:
        raise PromptError("class list is empty")
    display = DISPLAY_NAMES if display is None else display
    return [display.get(c.name, c.name) for c in classes]


def simple_class_prompt(
    classes: Sequence[ClassId],
    template: str = "photo_of",
    display: Mapping[str, str] | None = None,
) -> str:
    """Class-list prompt in the given class order.

    template "bare" gives "c1, c2, ..."; "photo_of" prefixes "A photo of ".
    """
    names = ", ".join(_render_names(classes, display))
    if template == "bare":
        return names
    if template == "photo_of":
        return f"A photo of {names}"
    raise PromptError(f"unknown template {template!r}")


def trim_caption(caption: str) -> str:
    """Strip whitespace and trailing periods so joining never yields 'x.; y'."""
    return caption.strip().rstrip(".").rstrip()


def append_class_prompt(
    caption: str,
    classes: Sequence[ClassId],
    display: Mapping[str, str] | None = None,
) -> str:
    """Join a caption with the bare class list: ``<caption>; c1, c2, ...``."""
    trimmed = trim_caption(caption)
    if not trimmed:
        raise PromptError("caption is empty after trimming")
    return trimmed + SEPARATOR + simple_class_prompt(classes, "bare", display)


def build_bundle(
    classes: Sequence[ClassId],
    caption: str | None,
    display: Mapping[str, str] | None = None,
) -> PromptBundle:
    """Build the per-sample bundle; falls back to the photo_of prompt."""
    class_prompt = simple_class_prompt(classes, "bare", display)
    if caption is not None and trim_caption(caption):
        caption = trim_caption(caption)
        return PromptBundle(caption, class_prompt, caption + SEPARATOR + class_prompt)
    return PromptBundle(None, class_prompt, simple_class_prompt(classes, "photo_of", display))


class CaptionSource(Protocol):
    def describe(self, sample: SegSample) -> str | None: ...


class SidecarCaptions:
    """Captions stored next to the dataset as ``<dir>/<sample_id>.txt``."""

    def __init__(self, directory: Path | str):
        self.directory = Path(directory)

    def describe(self, sample: SegSample) -> str | None:
        path = self.directory / f"{sample.sample_id}.txt"
        if not path.exists():
            return None
        text = path.read_text().strip()
        return text or None


def image_to_png_b64(image: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(image, mode="RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


class HttpCaptionSource:
    """Client for the caption service: POST {base}/caption."""

    def __init__(self, base_url: str, client: httpx.Client | None = None, timeout: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self.client = client or httpx.Client()
        self.timeout = timeout

    def describe(self, sample: SegSample) -> str | None:
        payload = {"image_png_b64": image_to_png_b64(sample.image)}
        try:
            resp = self.client.post(
                f"{self.base_url}/caption", json=payload, timeout=self.timeout
            )
        except Exception as exc:
            log.warning("caption service failed for %s: %s", sample.sample_id, exc)
            return None
        if resp.status_code != 200:
            log.warning(
                "caption service returned %s for %s", resp.status_code, sample.sample_id
            )
            return None
        try:
            caption = resp.json().get("caption", "")
        except Exception as exc:
            log.warning("caption service sent malformed body for %s: %s", sample.sample_id, exc)
            return None
        return caption.strip() or None


def resolve_caption(sample: SegSample, sources: Sequence[CaptionSource]) -> str | None:
    """First non-empty answer in source order; failures count as no answer."""
    for source in sources:
        caption = source.describe(sample)
        if caption:
            return caption
    return None
