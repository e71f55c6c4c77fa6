"""FastAPI service wrapping the editing pipeline.

Backends are constructed once per process and reused across requests, so
a loaded model serves many clients.  Images travel as base64 PNG bytes;
attention debug dumps are a local-CLI feature and are not exposed here.
"""

from __future__ import annotations

import base64
import binascii

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import __version__
from ..backends import DenoiserBackend, backend_names, make_backend
from ..errors import BackendUnavailable, FoiError, ProviderUnavailable
from ..imgio import decode_rgb, encode_png
from ..masks import ExtractionParams
from ..metrics import evaluate_pair, get_provider
from ..pipeline import EditRequest, edit
from ..sampling import GuidanceParams
from .models import (
    EditRequestModel,
    EditResponseModel,
    EvalRequestModel,
    EvalResponseModel,
    EvalRowModel,
    HealthModel,
    MaskModel,
    StepModel,
)


def _decode_image(b64: str):
    try:
        data = base64.b64decode(b64, validate=True)
        return decode_rgb(data)
    except (binascii.Error, ValueError, OSError) as exc:
        raise HTTPException(status_code=422, detail=f"bad image payload: {exc}") from exc


def _mask_png_b64(values) -> str:
    return base64.b64encode(
        encode_png((np.asarray(values) * 255).astype("uint8"))
    ).decode("ascii")


def create_app() -> FastAPI:
    app = FastAPI(title="foi", version=__version__)
    cache: dict[str, DenoiserBackend] = {}

    def backend_for(name: str) -> DenoiserBackend:
        if name not in cache:
            try:
                cache[name] = make_backend(name)
            except BackendUnavailable as exc:
                raise HTTPException(status_code=503, detail=str(exc)) from exc
        return cache[name]

    @app.get("/v1/health", response_model=HealthModel)
    def health() -> HealthModel:
        return HealthModel(status="ok", version=__version__, backends=backend_names())

    @app.post("/v1/edit", response_model=EditResponseModel)
    def edit_endpoint(body: EditRequestModel) -> EditResponseModel:
        backend = backend_for(body.backend)
        image = _decode_image(body.image_b64)
        request = EditRequest(
            instruction=body.instruction,
            subs=tuple((s.text, s.keyword, s.alpha) for s in body.subs),
            image=image,
            backend=body.backend,
            seed=body.seed,
            steps=body.steps,
            noise_start=body.noise_start,
            disentangle_frac=body.disentangle_frac,
            guidance=GuidanceParams(body.image_guidance, body.text_guidance),
            extraction=ExtractionParams(gamma=body.gamma, tau=body.tau),
        )
        try:
            result = edit(request, backend=backend)
        except FoiError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc

        masks = []
        union_b64 = None
        if body.include_masks:
            masks = [
                MaskModel(
                    sub_index=m.sub_index,
                    keyword=m.keyword,
                    png_b64=_mask_png_b64(m.values),
                )
                for m in result.keyword_masks
            ]
            if result.union_mask is not None:
                union_b64 = _mask_png_b64(result.union_mask.values)
        return EditResponseModel(
            image_b64=base64.b64encode(encode_png(result.output_image)).decode("ascii"),
            width=result.output_image.shape[1],
            height=result.output_image.shape[0],
            masks=masks,
            union_mask_b64=union_b64,
            steps=[
                StepModel(
                    index=s.index,
                    phase=s.phase,
                    timestep=s.timestep,
                    t_norm=s.t_norm,
                    xi=s.xi,
                    sigma=s.sigma,
                )
                for s in result.steps
            ],
            duration_s=result.duration_s,
            seed=result.seed,
            backend=result.backend,
        )

    @app.post("/v1/eval", response_model=EvalResponseModel)
    def eval_endpoint(body: EvalRequestModel) -> EvalResponseModel:
        try:
            provider = get_provider(body.provider)
        except ProviderUnavailable as exc:
            raise HTTPException(status_code=503, detail=str(exc)) from exc
        rows = []
        for i, pair in enumerate(body.pairs):
            try:
                scores = evaluate_pair(
                    provider,
                    _decode_image(pair.source_image_b64),
                    _decode_image(pair.edited_image_b64),
                    pair.source_text,
                    pair.edited_text,
                )
            except FoiError as exc:
                raise HTTPException(
                    status_code=422, detail=f"pair {i}: {exc}"
                ) from exc
            rows.append(EvalRowModel(index=i, **scores))
        return EvalResponseModel(provider=body.provider, rows=rows)

    return app


app = create_app()
