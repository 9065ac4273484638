"""FastAPI service wrapping the core operations.

Two roles: it exposes the pipeline's pure operations (prompt building,
prior blending, planning, balance statistics) to remote clients, and it
hosts reference implementations of the three backend wire contracts —
/generate (deterministic mock), /caption (deterministic stub), /prior
(built-in edge detector) — so client code can be exercised against a live
server and backend implementers have an executable contract.

Errors follow the wire convention: non-200 with a JSON {"error": ...} body.
"""

from __future__ import annotations

import base64
import io

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from PIL import Image

from ..blend import BlendWeights, blend_priors, export_control_image
from ..dataset import ClassId
from ..generation import GenerationRequest, MockBackend, stable_hash64
from ..metrics import MetricsError, entropy, imbalance_ratio
from ..planner import auto_n_balance_from_class_sets, plan_from_class_sets
from ..priors import CannyParams, canny_edges, prior_from_png
from ..prompts import build_bundle
from ..voc import VOC_CLASSES
from . import schemas

PRIOR_KINDS = ("lineart", "hed", "sketch")


def _decode_rgb(png_b64: str) -> np.ndarray:
    raw = base64.b64decode(png_b64)
    return np.asarray(Image.open(io.BytesIO(raw)).convert("RGB"), dtype=np.uint8)


def create_app() -> FastAPI:
    app = FastAPI(title="ctrlaug", version="0.1.0")
    backend = MockBackend()
    name_to_class = {name: ClassId(i, name) for i, name in enumerate(VOC_CLASSES) if i > 0}

    @app.exception_handler(Exception)
    async def on_error(request: Request, exc: Exception):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.exception_handler(RequestValidationError)
    async def on_validation_error(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=422, content={"error": str(exc)})

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/generate", response_model=schemas.GenerateResponse)
    def generate(req: schemas.GenerateRequest):
        result = backend.generate(
            GenerationRequest(
                prompt=req.prompt,
                control_png=base64.b64decode(req.control_png_b64),
                width=req.width,
                height=req.height,
                steps=req.steps,
                seed=req.seed,
                control_kind=req.control_kind,
            )
        )
        return schemas.GenerateResponse(
            image_png_b64=base64.b64encode(result.image_png).decode("ascii")
        )

    @app.post("/caption", response_model=schemas.CaptionResponse)
    def caption(req: schemas.CaptionRequest):
        # Deterministic stand-in for a captioning model.
        digest = stable_hash64(req.image_png_b64)
        return schemas.CaptionResponse(caption=f"a scene {digest:016x}")

    @app.post("/prior", response_model=schemas.PriorResponse)
    def prior(req: schemas.PriorRequest):
        if req.kind not in PRIOR_KINDS:
            raise ValueError(f"unknown prior kind {req.kind!r}")
        edges = canny_edges(_decode_rgb(req.image_png_b64), CannyParams())
        return schemas.PriorResponse(
            prior_png_b64=base64.b64encode(export_control_image(edges)).decode("ascii"),
            polarity="white_on_black",
        )

    @app.post("/prompt", response_model=schemas.PromptResponse)
    def prompt(req: schemas.PromptRequest):
        unknown = [n for n in req.classes if n not in name_to_class]
        if unknown:
            raise ValueError(f"unknown class names: {unknown}")
        bundle = build_bundle([name_to_class[n] for n in req.classes], req.caption)
        return schemas.PromptResponse(
            caption=bundle.caption,
            class_prompt=bundle.class_prompt,
            appended=bundle.appended,
        )

    @app.post("/blend", response_model=schemas.BlendResponse)
    def blend(req: schemas.BlendRequest):
        blended = blend_priors(
            prior_from_png(base64.b64decode(req.image_prior_png_b64)),
            prior_from_png(base64.b64decode(req.mask_prior_png_b64)),
            BlendWeights(req.w1, req.w2),
        )
        png = export_control_image(blended, req.polarity)
        return schemas.BlendResponse(blended_png_b64=base64.b64encode(png).decode("ascii"))

    @app.post("/plan", response_model=schemas.PlanResponse)
    def plan(req: schemas.PlanRequest):
        items = [(s.sample_id, tuple(sorted(set(s.classes)))) for s in req.samples]
        schema_ids = req.schema_ids or sorted({c for _, cs in items for c in cs})
        if req.n_balance is not None and req.auto_ratio is not None:
            raise ValueError("set n_balance or auto_ratio, not both")
        n = req.n_balance
        if n is None:
            n = auto_n_balance_from_class_sets(
                items, 1.0 if req.auto_ratio is None else req.auto_ratio
            )
        result = plan_from_class_sets(items, schema_ids, n)
        return schemas.PlanResponse(
            n_balance=result.n_balance,
            fingerprint=result.fingerprint,
            entries=[
                schemas.PlanEntryModel(
                    output_id=e.output_id,
                    seed_id=e.seed_id,
                    target_class=e.target_class,
                    pass_index=e.pass_index,
                )
                for e in result.entries
            ],
        )

    @app.post("/balance/stats", response_model=schemas.BalanceStatsResponse)
    def balance_stats(req: schemas.BalanceStatsRequest):
        counts = {i: n for i, (_, n) in enumerate(sorted(req.counts.items()))}
        try:
            return schemas.BalanceStatsResponse(
                total=sum(counts.values()),
                entropy=entropy(counts),
                imbalance_ratio=imbalance_ratio(counts),
            )
        except MetricsError as exc:
            raise ValueError(str(exc)) from exc

    return app


app = create_app()
