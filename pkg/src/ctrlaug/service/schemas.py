"""Request/response models for the augmentation service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class GenerateRequest(BaseModel):
    prompt: str
    control_png_b64: str
    control_kind: str = "lineart"
    width: int = Field(gt=0)
    height: int = Field(gt=0)
    steps: int = Field(default=30, ge=1)
    seed: int = Field(default=0, ge=0, lt=2**64)


class GenerateResponse(BaseModel):
    image_png_b64: str


class CaptionRequest(BaseModel):
    image_png_b64: str


class CaptionResponse(BaseModel):
    caption: str


class PriorRequest(BaseModel):
    image_png_b64: str
    kind: str = "lineart"


class PriorResponse(BaseModel):
    prior_png_b64: str
    polarity: str = "white_on_black"


class PromptRequest(BaseModel):
    classes: list[str]
    caption: str | None = None


class PromptResponse(BaseModel):
    caption: str | None
    class_prompt: str
    appended: str


class BlendRequest(BaseModel):
    image_prior_png_b64: str
    mask_prior_png_b64: str
    w1: float = 0.7
    w2: float = 0.9
    polarity: str = "white_on_black"


class BlendResponse(BaseModel):
    blended_png_b64: str


class PlanSample(BaseModel):
    sample_id: str
    classes: list[int]


class PlanRequest(BaseModel):
    samples: list[PlanSample]
    schema_ids: list[int] | None = None
    n_balance: int | None = Field(default=None, ge=1)
    auto_ratio: float | None = Field(default=None, ge=0)


class PlanEntryModel(BaseModel):
    output_id: str
    seed_id: str
    target_class: int
    pass_index: int


class PlanResponse(BaseModel):
    n_balance: int
    fingerprint: str
    entries: list[PlanEntryModel]


class BalanceStatsRequest(BaseModel):
    counts: dict[str, int]


class BalanceStatsResponse(BaseModel):
    total: int
    entropy: float
    imbalance_ratio: float
