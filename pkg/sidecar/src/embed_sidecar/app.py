"""HTTP service: POST /embed per the screening pipeline's wire contract,
GET /health advertising the served geometry and feature tap point."""

from __future__ import annotations

import base64
import binascii
import io
import logging

from fastapi import FastAPI, HTTPException
from PIL import Image, UnidentifiedImageError
from pydantic import BaseModel

from .backbone import Backbone

log = logging.getLogger(__name__)


class EmbedRequest(BaseModel):
    image: str  # base64-encoded lossless image (PNG)
    provider: str = ""


def create_app(backbone: Backbone) -> FastAPI:
    app = FastAPI(title="embed-sidecar")

    @app.get("/health")
    def health():
        info = backbone.info
        return {
            "model": info.model,
            "p": info.patch_grid,
            "d": info.dim,
            "input_side": info.input_side,
            "tap_point": info.tap_point,
            "weights": info.weights,
        }

    @app.post("/embed")
    def embed(request: EmbedRequest):
        try:
            raw = base64.b64decode(request.image, validate=True)
        except (binascii.Error, ValueError):
            raise HTTPException(status_code=400, detail="image is not valid base64")
        try:
            image = Image.open(io.BytesIO(raw))
            image.load()
        except (UnidentifiedImageError, OSError):
            raise HTTPException(status_code=400, detail="payload is not a decodable image")
        try:
            features = backbone.embed_image(image)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        info = backbone.info
        return {
            "p": info.patch_grid,
            "d": info.dim,
            "data": features.ravel().tolist(),
        }

    return app
