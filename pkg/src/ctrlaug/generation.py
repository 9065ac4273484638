"""Generation backends and plan execution.

Backends satisfy a one-method contract: ``generate(request) -> result``. The
HTTP backend speaks the wire contract

    POST {base}/generate
    {"prompt", "control_png_b64", "control_kind", "width", "height",
     "steps", "seed"}  ->  {"image_png_b64"}

with bounded retries. The mock backend is a pure function of (prompt,
control image, seed) so whole runs are reproducible offline.

Plan execution computes entries concurrently but commits them strictly in
plan order, so manifest.jsonl is always a plan-order prefix and doubles as
the resume checkpoint.
"""

from __future__ import annotations

import base64
import io
import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from hashlib import blake2b
from pathlib import Path
from typing import Callable, Protocol, Sequence

import httpx
import numpy as np
from PIL import Image

from .blend import BlendWeights, blend_priors, export_control_image
from .dataset import (
    DatasetIndex,
    SegSample,
    classes_of,
    create_index,
    load_index,
    read_manifest,
    write_bytes_atomic,
    write_sample,
)
from .planner import GenerationPlan, PlanError
from .priors import PriorImage, canny_edges, mask_boundaries
from .prompts import CaptionSource, build_bundle, resolve_caption

log = logging.getLogger(__name__)

DEFAULT_STEPS = 30


class GenerationError(Exception):
    pass


class BackendError(GenerationError):
    """The backend rejected or botched one request; the entry is skippable."""


class BackendUnreachable(GenerationError):
    """Transport-level failure after retries; the run should abort."""


def stable_hash64(text: str) -> int:
    """Process-independent 64-bit hash (blake2b-8, big-endian)."""
    return int.from_bytes(blake2b(text.encode("utf-8"), digest_size=8).digest(), "big")


def _png_size(png: bytes) -> tuple[int, int]:
    with Image.open(io.BytesIO(png)) as img:
        return img.size  # (width, height)


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    control_png: bytes
    width: int
    height: int
    steps: int = DEFAULT_STEPS
    seed: int = 0
    control_kind: str = "lineart"

    def __post_init__(self):
        if self.steps < 1:
            raise GenerationError("steps must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise GenerationError("seed must fit in uint64")
        if _png_size(self.control_png) != (self.width, self.height):
            raise GenerationError(
                f"control image {_png_size(self.control_png)} does not match "
                f"request size {(self.width, self.height)}"
            )


@dataclass(frozen=True)
class GenerationResult:
    image_png: bytes
    backend_id: str
    latency_ms: int


class Backend(Protocol):
    backend_id: str

    def generate(self, request: GenerationRequest) -> GenerationResult: ...


def _hash_pattern(key: int, height: int, width: int) -> np.ndarray:
    """Anti-diagonal byte stripes cut from a 64-bit key."""
    yy, xx = np.indices((height, width), dtype=np.uint64)
    shifts = np.uint64(8) * ((xx + yy) % np.uint64(8))
    return ((np.uint64(key) >> shifts) & np.uint64(0xFF)).astype(np.uint8)


class MockBackend:
    """Deterministic test double: R = control image, G keyed by prompt hash,
    B keyed by request seed."""

    backend_id = "mock"

    def generate(self, request: GenerationRequest) -> GenerationResult:
        control = np.asarray(
            Image.open(io.BytesIO(request.control_png)).convert("L"), dtype=np.uint8
        )
        rgb = np.stack(
            [
                control,
                _hash_pattern(stable_hash64(request.prompt), request.height, request.width),
                _hash_pattern(request.seed, request.height, request.width),
            ],
            axis=-1,
        )
        buf = io.BytesIO()
        Image.fromarray(rgb, mode="RGB").save(buf, format="PNG")
        return GenerationResult(buf.getvalue(), self.backend_id, 0)


class HttpBackend:
    """Client for a controllable-generation service.

    Transport failures and 5xx responses are retried with exponential
    backoff (1 s, 2 s, 4 s by default); other statuses fail immediately.
    """

    def __init__(
        self,
        base_url: str,
        client: httpx.Client | None = None,
        timeout: float = 120.0,
        retries: int = 3,
        backoff: float = 1.0,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        self.backend_id = f"http:{self.base_url}"
        self.client = client or httpx.Client()
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self._sleep = sleep

    def generate(self, request: GenerationRequest) -> GenerationResult:
        payload = {
            "prompt": request.prompt,
            "control_png_b64": base64.b64encode(request.control_png).decode("ascii"),
            "control_kind": request.control_kind,
            "width": request.width,
            "height": request.height,
            "steps": request.steps,
            "seed": request.seed,
        }
        start = time.monotonic()
        last_error = ""
        for attempt in range(self.retries):
            try:
                resp = self.client.post(
                    f"{self.base_url}/generate", json=payload, timeout=self.timeout
                )
            except httpx.TransportError as exc:
                last_error = str(exc)
                if attempt + 1 == self.retries:
                    raise BackendUnreachable(
                        f"{self.base_url} unreachable after {self.retries} attempts: {exc}"
                    ) from exc
                self._sleep(self.backoff * 2**attempt)
                continue
            if resp.status_code == 200:
                try:
                    png = base64.b64decode(resp.json()["image_png_b64"])
                except Exception as exc:
                    raise BackendError(f"malformed backend response: {exc}") from exc
                if _png_size(png) != (request.width, request.height):
                    raise BackendError(
                        f"backend returned {_png_size(png)} for a "
                        f"{(request.width, request.height)} request"
                    )
                latency = int((time.monotonic() - start) * 1000)
                return GenerationResult(png, self.backend_id, latency)
            last_error = f"HTTP {resp.status_code}: {resp.text[:200]}"
            if resp.status_code < 500:
                raise BackendError(last_error)
            if attempt + 1 < self.retries:
                self._sleep(self.backoff * 2**attempt)
        raise BackendError(f"giving up after {self.retries} attempts; last: {last_error}")


@dataclass
class ExecutionResult:
    gen_index: DatasetIndex
    failures: list[dict] = field(default_factory=list)


def _reconcile_output_root(out_root: Path, split: str) -> set[str]:
    """Trim the split file to manifest-confirmed ids; return the done set.

    Files are written before the split line and the split line before the
    manifest line, so after a crash the split file may list ids the manifest
    does not confirm; those are re-generated.
    """
    done = {rec["output_id"] for rec in read_manifest(out_root)}
    split_path = out_root / "ImageSets" / "Segmentation" / f"{split}.txt"
    if split_path.exists():
        listed = [line.strip() for line in split_path.read_text().splitlines() if line.strip()]
        confirmed = [sid for sid in listed if sid in done]
        if confirmed != listed:
            write_bytes_atomic(split_path, "".join(s + "\n" for s in confirmed).encode())
    return done


def execute_plan(
    plan: GenerationPlan,
    index: DatasetIndex,
    backend: Backend,
    weights: BlendWeights,
    out_root: Path | str,
    prompt_sources: Sequence[CaptionSource] = (),
    split: str | None = None,
    parallelism: int = 2,
    prior_source: Callable[[np.ndarray], PriorImage] | None = None,
    dilation_radius: int = 0,
    steps: int = DEFAULT_STEPS,
    control_kind: str = "lineart",
    control_polarity: str = "white_on_black",
    filter_hook: Callable[[GenerationResult], bool] | None = None,
) -> ExecutionResult:
    """Run every plan entry and write the synthetic dataset under out_root.

    Each synthetic sample reuses its seed's mask verbatim. Entries the
    backend rejects are recorded in failures.jsonl and skipped; a transport
    abort leaves manifest.jsonl as a resumable plan-order checkpoint.
    """
    if plan.fingerprint != index.fingerprint():
        raise PlanError(
            f"plan fingerprint {plan.fingerprint} does not match index "
            f"{index.fingerprint()}"
        )
    if parallelism < 1:
        raise GenerationError("parallelism must be >= 1")
    out_root = Path(out_root)
    split = split or index.split
    prior_source = prior_source or canny_edges
    schema_by_id = {c.id: c for c in index.schema}

    done = _reconcile_output_root(out_root, split)
    plan_ids = {e.output_id for e in plan.entries}
    foreign = done - plan_ids
    if foreign:
        raise GenerationError(
            f"{out_root} already contains outputs not in this plan: {sorted(foreign)[:3]}"
        )
    split_path = out_root / "ImageSets" / "Segmentation" / f"{split}.txt"
    if split_path.exists() and split_path.read_text().strip():
        gen_index = load_index(out_root, split, index.schema)
    else:
        gen_index = create_index(out_root, split, index.schema)
    manifest_path = out_root / "manifest.jsonl"
    if not manifest_path.exists():
        write_bytes_atomic(manifest_path, b"")

    failures_path = out_root / "failures.jsonl"
    recorded_failures = set()
    if failures_path.exists():
        recorded_failures = {
            json.loads(line)["output_id"]
            for line in failures_path.read_text().splitlines()
            if line.strip()
        }

    memo: dict[str, tuple[str, bytes, int, int]] = {}
    memo_lock = threading.Lock()

    def seed_context(seed_id: str) -> tuple[str, bytes, int, int]:
        with memo_lock:
            if seed_id in memo:
                return memo[seed_id]
        seed = index.get(seed_id)
        caption = resolve_caption(seed, prompt_sources) if prompt_sources else None
        classes = [schema_by_id[c] for c in classes_of(seed.mask)]
        bundle = build_bundle(classes, caption)
        blended = blend_priors(
            prior_source(seed.image),
            mask_boundaries(seed.mask, dilation_radius),
            weights,
        )
        control_png = export_control_image(blended, control_polarity)
        h, w = seed.image.shape[:2]
        context = (bundle.appended, control_png, w, h)
        with memo_lock:
            memo[seed_id] = context
        return context

    def run_entry(entry):
        prompt, control_png, w, h = seed_context(entry.seed_id)
        request = GenerationRequest(
            prompt=prompt,
            control_png=control_png,
            width=w,
            height=h,
            steps=steps,
            seed=stable_hash64(entry.output_id),
            control_kind=control_kind,
        )
        try:
            result = backend.generate(request)
            if filter_hook is not None and not filter_hook(result):
                raise BackendError("rejected by filter hook")
        except BackendError as exc:
            return entry, None, request, str(exc)
        return entry, result, request, None

    pending = [e for e in plan.entries if e.output_id not in done]
    result = ExecutionResult(gen_index=gen_index)
    executor = ThreadPoolExecutor(max_workers=parallelism)
    try:
        for entry, gen, request, error in executor.map(run_entry, pending):
            if error is not None:
                record = {
                    "output_id": entry.output_id,
                    "seed_id": entry.seed_id,
                    "target_class": entry.target_class,
                    "error": error,
                }
                result.failures.append(record)
                log.warning("entry %s failed: %s", entry.output_id, error)
                if entry.output_id not in recorded_failures:
                    with open(failures_path, "a") as fh:
                        fh.write(json.dumps(record) + "\n")
                    recorded_failures.add(entry.output_id)
                continue
            seed = index.get(entry.seed_id)
            image = np.asarray(
                Image.open(io.BytesIO(gen.image_png)).convert("RGB"), dtype=np.uint8
            )
            sample = SegSample(
                sample_id=entry.output_id,
                image=image,
                mask=seed.mask,
                origin="synthetic",
                seed_id=entry.seed_id,
            )
            write_sample(
                gen_index,
                sample,
                manifest_extra={
                    "target_class": entry.target_class,
                    "prompt": request.prompt,
                    "backend": gen.backend_id,
                    "seed": request.seed,
                },
            )
    except BaseException:
        executor.shutdown(wait=False, cancel_futures=True)
        raise
    executor.shutdown(wait=True)
    return result
