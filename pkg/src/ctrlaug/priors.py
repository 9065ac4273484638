"""Structural guide images: built-in Canny edges, mask-boundary rendering,
and the external detector client for learned line-art/HED/sketch services.

The Canny chain here is normative so an independently written reference can
match it bit-exactly:

- luminance 0.299 R + 0.587 G + 0.114 B on float64;
- Gaussian blur: kernel exp(-(dx^2+dy^2)/(2 sigma^2)) normalized by its sum,
  cross-correlated over edge-replicated padding, terms accumulated in kernel
  row-major order;
- Sobel Kx=[[-1,0,1],[-2,0,2],[-1,0,1]], Ky=[[-1,-2,-1],[0,0,0],[1,2,1]],
  cross-correlation, edge-replicated padding, row-major accumulation;
- magnitude hypot(gx, gy); direction degrees(arctan2(gy, gx)) mod 180,
  quantized to 4 sectors;
- non-maximum suppression keeps a pixel iff mag > 0, mag >= the neighbor at
  (y+dy, x+dx) with (dy, dx) the sector step of positive orientation, and
  mag > the opposite neighbor (so tied pairs keep the lower-coordinate
  pixel); out-of-image neighbors count as magnitude 0;
- thresholds are fractions of the pre-suppression maximum magnitude, strong
  at >= high, weak at >= low, hysteresis over 8-connected components of the
  weak set keeping components that contain a strong pixel;
- a maximum magnitude at or below 64 eps times the blurred image's largest
  absolute value (floored at 1) is accumulation noise, not gradient: the
  result is all-zero. Without this, constant images whose luminance is not
  exactly representable grow phantom edges out of float rounding residue.
"""

from __future__ import annotations

import base64
import io
from dataclasses import dataclass
from typing import Protocol

import httpx
import numpy as np
from scipy import ndimage
from PIL import Image

from .dataset import LabelMask
from .voc import VOID_ID


class PriorError(Exception):
    pass


@dataclass
class PriorImage:
    """Single-channel guide image; edge/line pixels near 1.0 on 0.0 background."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise PriorError("prior must be 2-D")
        if self.values.size and (self.values.min() < 0.0 or self.values.max() > 1.0):
            raise PriorError("prior values must lie in [0, 1]")

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class CannyParams:
    gaussian_sigma: float = 1.4
    kernel_size: int = 5
    low_threshold: float = 0.1
    high_threshold: float = 0.2

    def __post_init__(self):
        if self.kernel_size < 3 or self.kernel_size % 2 == 0:
            raise PriorError("kernel_size must be an odd integer >= 3")
        if not 0.0 < self.low_threshold < self.high_threshold < 1.0:
            raise PriorError("need 0 < low_threshold < high_threshold < 1")


def _luminance(image: np.ndarray) -> np.ndarray:
    rgb = image.astype(np.float64)
    return 0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = size // 2
    ys, xs = np.mgrid[-half : half + 1, -half : half + 1]
    kernel = np.exp(-(xs * xs + ys * ys) / (2.0 * sigma * sigma))
    return kernel / kernel.sum()


def _correlate(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # Row-major accumulation over kernel taps; the reference oracle mirrors
    # this order so float rounding is identical.
    half = kernel.shape[0] // 2
    padded = np.pad(image, half, mode="edge")
    h, w = image.shape
    out = np.zeros((h, w), dtype=np.float64)
    for dy in range(kernel.shape[0]):
        for dx in range(kernel.shape[1]):
            out += kernel[dy, dx] * padded[dy : dy + h, dx : dx + w]
    return out


SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = np.array([[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]])

# (dy, dx) of the positive-orientation neighbor per sector; the opposite
# neighbor is (-dy, -dx).
_SECTOR_STEPS = ((0, 1), (1, 1), (1, 0), (1, -1))


def _sectors(angle_deg: np.ndarray) -> np.ndarray:
    sector = np.zeros(angle_deg.shape, dtype=np.int8)
    sector[(angle_deg >= 22.5) & (angle_deg < 67.5)] = 1
    sector[(angle_deg >= 67.5) & (angle_deg < 112.5)] = 2
    sector[(angle_deg >= 112.5) & (angle_deg < 157.5)] = 3
    return sector


def _shifted(mag: np.ndarray, dy: int, dx: int) -> np.ndarray:
    padded = np.pad(mag, 1, mode="constant", constant_values=0.0)
    h, w = mag.shape
    return padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]


def canny_edges(image: np.ndarray, params: CannyParams | None = None) -> PriorImage:
    """Binary edge map of an RGB image; see module docstring for the chain."""
    params = params or CannyParams()
    if image.ndim != 3 or image.shape[2] != 3:
        raise PriorError("expected an (H, W, 3) RGB image")
    h, w = image.shape[:2]
    if h < params.kernel_size or w < params.kernel_size:
        raise PriorError(f"image {w}x{h} smaller than kernel {params.kernel_size}")

    blurred = _correlate(
        _luminance(image), _gaussian_kernel(params.kernel_size, params.gaussian_sigma)
    )
    gx = _correlate(blurred, SOBEL_X)
    gy = _correlate(blurred, SOBEL_Y)
    mag = np.hypot(gx, gy)
    max_mag = mag.max()
    noise_floor = 64.0 * np.finfo(np.float64).eps * max(1.0, np.abs(blurred).max())
    if max_mag <= noise_floor:
        return PriorImage(np.zeros((h, w)))

    angle = np.degrees(np.arctan2(gy, gx)) % 180.0
    sector = _sectors(angle)
    kept = np.zeros((h, w), dtype=bool)
    for s, (dy, dx) in enumerate(_SECTOR_STEPS):
        pos = _shifted(mag, dy, dx)
        neg = _shifted(mag, -dy, -dx)
        kept |= (sector == s) & (mag > 0.0) & (mag >= pos) & (mag > neg)

    high = params.high_threshold * max_mag
    low = params.low_threshold * max_mag
    strong = kept & (mag >= high)
    weak = kept & (mag >= low)
    labels, _ = ndimage.label(weak, structure=np.ones((3, 3), dtype=int))
    keep_labels = np.unique(labels[strong])
    edges = weak & np.isin(labels, keep_labels[keep_labels > 0])
    return PriorImage(edges.astype(np.float64))


def mask_boundaries(mask: LabelMask, dilation_radius: int = 0) -> PriorImage:
    """Class-boundary rendering of a label mask.

    A pixel is marked iff its class id differs from at least one 4-neighbor;
    void pixels are never marked and never cause a neighbor to be marked.
    """
    p = mask.pixels
    valid = p != VOID_ID
    boundary = np.zeros(p.shape, dtype=bool)

    differ = (p[1:, :] != p[:-1, :]) & valid[1:, :] & valid[:-1, :]
    boundary[1:, :] |= differ
    boundary[:-1, :] |= differ
    differ = (p[:, 1:] != p[:, :-1]) & valid[:, 1:] & valid[:, :-1]
    boundary[:, 1:] |= differ
    boundary[:, :-1] |= differ

    if dilation_radius > 0:
        boundary = ndimage.binary_dilation(
            boundary, structure=np.ones((3, 3), dtype=bool), iterations=dilation_radius
        )
    return PriorImage(boundary.astype(np.float64))


def prior_from_png(png: bytes, polarity: str = "white_on_black") -> PriorImage:
    """Decode a single-channel raster to [0, 1], lines-bright convention."""
    gray = np.asarray(Image.open(io.BytesIO(png)).convert("L"), dtype=np.float64) / 255.0
    if polarity == "black_on_white":
        gray = 1.0 - gray
    elif polarity != "white_on_black":
        raise PriorError(f"unknown polarity {polarity!r}")
    return PriorImage(gray)


class DetectorClient(Protocol):
    def detect(self, image: np.ndarray) -> PriorImage: ...


class HttpDetector:
    """Client for the prior service: POST {base}/prior."""

    def __init__(
        self,
        base_url: str,
        kind: str = "lineart",
        client: httpx.Client | None = None,
        timeout: float = 120.0,
    ):
        self.base_url = base_url.rstrip("/")
        self.kind = kind
        self.client = client or httpx.Client()
        self.timeout = timeout

    def detect(self, image: np.ndarray) -> PriorImage:
        buf = io.BytesIO()
        Image.fromarray(image, mode="RGB").save(buf, format="PNG")
        payload = {
            "image_png_b64": base64.b64encode(buf.getvalue()).decode("ascii"),
            "kind": self.kind,
        }
        try:
            resp = self.client.post(f"{self.base_url}/prior", json=payload, timeout=self.timeout)
        except Exception as exc:
            raise PriorError(f"prior service unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise PriorError(f"prior service returned {resp.status_code}: {resp.text[:200]}")
        try:
            body = resp.json()
            raster = base64.b64decode(body["prior_png_b64"])
        except Exception as exc:
            raise PriorError(f"prior service sent malformed body: {exc}") from exc
        return prior_from_png(raster, body.get("polarity", "white_on_black"))


def external_prior(image: np.ndarray, detector: DetectorClient) -> PriorImage:
    """Fetch a detector prior and enforce the dimension contract."""
    prior = detector.detect(image)
    if prior.values.shape != image.shape[:2]:
        raise PriorError(
            f"detector returned {prior.values.shape}, input is {image.shape[:2]}"
        )
    return prior
