"""HTTP inference API: one frozen model and label table, loaded once,
served statelessly.

The wire format for segmentation results is a base64 label-index map (one
byte per pixel, row-major) plus a legend in request order; clients color it
themselves. Inference latency travels in the X-Inference-Ms response header
so that identical requests produce byte-identical bodies.
"""

from __future__ import annotations

import base64
import hashlib
import time

import numpy as np
from fastapi import FastAPI, HTTPException, Response
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from .embeddings import LabelSet, load_table
from .model import load_checkpoint, predict
from .render import decode_image, fit_to_model, label_color, map_to_size
from .tensor import NumericError

MAX_SIDE = 1024
MAX_LABELS = 256


class SegmentOptions(BaseModel):
    temperature: float | None = Field(default=None, gt=0)
    return_scores: bool = False


class SegmentRequest(BaseModel):
    image: str
    labels: list[str]
    options: SegmentOptions = SegmentOptions()


def _hex_color(name: str) -> str:
    r, g, b = label_color(name)
    return f"#{r:02x}{g:02x}{b:02x}"


def _file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def create_app(checkpoint_path, table_path) -> FastAPI:
    """Build the service around one checkpoint and one embedding table."""
    model = load_checkpoint(checkpoint_path)
    table = load_table(table_path)
    checkpoint_digest = _file_digest(checkpoint_path)
    table_digest = table.digest()

    app = FastAPI(title="langseg", docs_url=None, redoc_url=None)
    # the web client is served from its own origin (a static file server or
    # file://), so the API must answer cross-origin requests and expose the
    # timing header to scripts
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
        expose_headers=["X-Inference-Ms"],
    )

    @app.get("/health")
    def health():
        return {
            "status": "ok",
            "checkpoint_digest": checkpoint_digest,
            "table_digest": table_digest,
        }

    @app.get("/vocabulary")
    def vocabulary():
        return {"labels": sorted(table.labels())}

    @app.post("/segment")
    def segment(request: SegmentRequest, response: Response):
        if not 1 <= len(request.labels) <= MAX_LABELS:
            raise HTTPException(
                status_code=400,
                detail=f"label count must be in [1, {MAX_LABELS}]",
            )
        try:
            labels = LabelSet.parse(request.labels)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        unknown = [name for name in labels if name not in table]
        if unknown:
            raise HTTPException(
                status_code=400,
                detail=f"unknown labels: {', '.join(unknown)}",
            )
        try:
            raw = base64.b64decode(request.image, validate=True)
            image = decode_image(raw)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        height, width = image.shape[:2]
        if height > MAX_SIDE or width > MAX_SIDE:
            raise HTTPException(
                status_code=413,
                detail=f"image {width}x{height} exceeds {MAX_SIDE}x{MAX_SIDE}",
            )

        started = time.perf_counter()
        try:
            fitted = fit_to_model(image, model.encoder.height, model.encoder.width)
            out = predict(model, fitted, labels, table)
        except (NumericError, FloatingPointError) as exc:
            raise HTTPException(status_code=500,
                                detail=f"numeric failure: {exc}") from exc
        elapsed_ms = (time.perf_counter() - started) * 1000.0

        label_map = map_to_size(out.label_map, height, width).astype(np.uint8)
        body = {
            "label_map": base64.b64encode(label_map.tobytes()).decode("ascii"),
            "width": width,
            "height": height,
            "legend": [{"label": name, "color": _hex_color(name)}
                       for name in labels],
        }
        if request.options.return_scores:
            scores = out.scores
            if request.options.temperature is not None:
                scores = scores / request.options.temperature
            body["scores"] = [
                {
                    "label": name,
                    "min": float(scores[:, :, i].min()),
                    "max": float(scores[:, :, i].max()),
                    "mean": float(scores[:, :, i].mean()),
                }
                for i, name in enumerate(labels)
            ]
        response.headers["X-Inference-Ms"] = f"{elapsed_ms:.3f}"
        return body

    return app
