"""Pydantic request/response models for the editing service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class SubSpecModel(BaseModel):
    text: str
    keyword: str
    alpha: float = Field(1.0, ge=0)


class EditRequestModel(BaseModel):
    """One edit job with the image inlined as base64 PNG/JPEG bytes."""

    image_b64: str
    instruction: str = ""
    subs: list[SubSpecModel] = []
    seed: int = 0
    backend: str = "toy"
    steps: int = Field(100, ge=1)
    noise_start: float = Field(0.8, gt=0, le=1)
    disentangle_frac: float = Field(0.75, gt=0, le=1)
    image_guidance: float = Field(1.5, ge=0)
    text_guidance: float = Field(7.5, ge=0)
    gamma: int = Field(3, ge=0)
    tau: float | None = Field(None, gt=0, le=1)
    include_masks: bool = True


class MaskModel(BaseModel):
    sub_index: int
    keyword: str
    png_b64: str


class StepModel(BaseModel):
    index: int
    phase: str
    timestep: float
    t_norm: float
    xi: float
    sigma: float


class EditResponseModel(BaseModel):
    image_b64: str
    width: int
    height: int
    masks: list[MaskModel] = []
    union_mask_b64: str | None = None
    steps: list[StepModel]
    duration_s: float
    seed: int
    backend: str


class EvalPairModel(BaseModel):
    source_image_b64: str
    edited_image_b64: str
    source_text: str
    edited_text: str


class EvalRequestModel(BaseModel):
    provider: str = "toy"
    pairs: list[EvalPairModel]


class EvalRowModel(BaseModel):
    index: int
    image_similarity: float
    directional_similarity: float


class EvalResponseModel(BaseModel):
    provider: str
    rows: list[EvalRowModel]


class HealthModel(BaseModel):
    status: str
    version: str
    backends: list[str]
