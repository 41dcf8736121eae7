"""HTTP prediction service backing the annotation UI.

Read-only + stateless: the checkpoint's parameters never change while
serving, so concurrent prediction requests are safe and every response
is a deterministic function of the request body.
"""

from __future__ import annotations

import base64
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from . import tensor as T
from .errors import PromptBoundsError, VolumeFormatError
from .losses import LESION
from .model import MIQModel
from .queries import PointPrompt
from .rle import encode_mask
from .synthdata import read_vol

FRONTEND_DIST = Path(__file__).resolve().parents[2] / "frontend" / "dist"


class PredictRequest(BaseModel):
    volume_id: str
    point: tuple[float, float, float]


def _b64_u8(plane: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(plane, dtype=np.uint8).tobytes()).decode()


def _as_u8(plane: np.ndarray) -> np.ndarray:
    return np.clip(np.round(plane * 255.0), 0, 255).astype(np.uint8)


class VolumeIndex:
    def __init__(self, data_dir):
        self.data_dir = Path(data_dir)
        self.paths = {p.stem: p for p in sorted(self.data_dir.glob("*.vol"))}

    def load(self, volume_id: str):
        path = self.paths.get(volume_id)
        if path is None:
            raise HTTPException(status_code=404, detail=f"unknown volume id {volume_id!r}")
        try:
            return read_vol(path)
        except VolumeFormatError as err:
            raise HTTPException(status_code=500, detail=str(err)) from err


def create_app(model: MIQModel, data_dir) -> FastAPI:
    app = FastAPI(title="miq3d prediction service")
    store = VolumeIndex(data_dir)

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request: Request, exc: RequestValidationError):
        detail = [
            {"loc": [str(part) for part in err.get("loc", ())], "msg": err.get("msg", ""), "type": err.get("type", "")}
            for err in exc.errors()
        ]
        return JSONResponse(status_code=400, content={"detail": detail})

    @app.get("/api/health")
    def health():
        return {"status": "ok"}

    @app.get("/api/volumes")
    def volumes():
        out = []
        for vid in store.paths:
            sample = store.load(vid)
            out.append(
                {"id": vid, "shape": list(sample.shape), "n_instances": len(sample.instance_masks)}
            )
        return out

    @app.get("/api/volumes/{volume_id}/slice")
    def volume_slice(volume_id: str, axis: int = 0, index: int = 0):
        sample = store.load(volume_id)
        if axis not in (0, 1, 2):
            raise HTTPException(status_code=400, detail=f"axis must be 0, 1, or 2, got {axis}")
        extent = sample.shape[axis]
        if not (0 <= index < extent):
            raise HTTPException(
                status_code=400, detail=f"index {index} out of range for axis {axis} (extent {extent})"
            )
        plane = np.take(sample.volume[0], index, axis=axis)
        return {"shape": list(plane.shape), "data": _b64_u8(_as_u8(plane))}

    @app.post("/api/predict")
    def predict(body: PredictRequest):
        sample = store.load(body.volume_id)
        prompt = PointPrompt(*body.point)
        try:
            with T.no_grad():
                pred, enc = model.forward(sample.volume, prompt)
        except PromptBoundsError as err:
            raise HTTPException(status_code=422, detail=str(err)) from err

        scores = pred.class_probs.data[:, LESION]
        keep = np.flatnonzero(scores > 0.5)
        instances = []
        if keep.size:
            probs = pred.masks.data[keep]
            claimed = probs > 0.5
            owner = np.argmax(probs, axis=0)
            for slot, query in enumerate(keep):
                mask = claimed[slot] & (owner == slot)
                if mask.any():
                    instances.append({"score": float(scores[query]), "rle": encode_mask(mask)})

        depth = int(round(prompt.d))
        gate_plane = _as_u8(enc.gate.g_full.data[0][depth])
        return {
            "instances": instances,
            "gate_slice": {"axis": 0, "index": depth, "shape": list(gate_plane.shape), "data": _b64_u8(gate_plane)},
        }

    if FRONTEND_DIST.is_dir():
        app.mount("/", StaticFiles(directory=FRONTEND_DIST, html=True), name="ui")
    return app
