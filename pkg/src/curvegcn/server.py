"""Local HTTP service for the annotation frontend: create a session from
an image crop, get the automatic contour, apply drag corrections with
local re-prediction, and read live IoU when ground truth is supplied.

The model is shared read-only across handlers; each session is guarded by
its own lock during a correction.  Sessions expire after 30 idle minutes
with an LRU cap of 64.
"""

from __future__ import annotations

import base64
import hashlib
import io
import threading
import time
import uuid
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel
from PIL import Image

from . import data, geometry, interactive, raster
from . import model as mdl

SESSION_TTL_SECONDS = 30 * 60
SESSION_CAP = 64
IOU_RENDER_SAMPLES = 256


class CreateSessionBody(BaseModel):
    image: str                      # base64 PNG
    gt_polygon: list | None = None  # [[x_px, y_px], ...]


class CorrectBody(BaseModel):
    node: int
    new_pos: tuple[float, float]


@dataclass
class Session:
    id: str
    crop: np.ndarray
    height: int
    width: int
    fmap: np.ndarray
    curve: geometry.ControlCurve
    clicks: int = 0
    gt_mask: np.ndarray | None = None
    last_used: float = field(default_factory=time.monotonic)
    lock: threading.Lock = field(default_factory=threading.Lock)


class SessionStore:
    def __init__(self, cap=SESSION_CAP, ttl=SESSION_TTL_SECONDS):
        self._items: dict[str, Session] = {}
        self._lock = threading.Lock()
        self.cap = cap
        self.ttl = ttl

    def _evict(self):
        now = time.monotonic()
        dead = [k for k, s in self._items.items() if now - s.last_used > self.ttl]
        for k in dead:
            del self._items[k]
        while len(self._items) > self.cap:
            oldest = min(self._items.values(), key=lambda s: s.last_used)
            del self._items[oldest.id]

    def put(self, session: Session):
        with self._lock:
            self._items[session.id] = session
            self._evict()

    def get(self, sid: str) -> Session:
        with self._lock:
            self._evict()
            session = self._items.get(sid)
            if session is None:
                raise HTTPException(status_code=404, detail="unknown session")
            session.last_used = time.monotonic()
            return session

    def delete(self, sid: str):
        with self._lock:
            if sid not in self._items:
                raise HTTPException(status_code=404, detail="unknown session")
            del self._items[sid]


def _decode_image(payload: str) -> np.ndarray:
    if "," in payload and payload.lstrip().startswith("data:"):
        payload = payload.split(",", 1)[1]
    try:
        raw = base64.b64decode(payload, validate=True)
        with Image.open(io.BytesIO(raw)) as im:
            rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except Exception:
        raise HTTPException(status_code=422, detail="image is not decodable PNG")
    return rgb.transpose(2, 0, 1)


def create_app(base: mdl.GcnModel | None = None,
               imodel: interactive.InteractiveModel | None = None,
               checkpoint_hash: str = "") -> FastAPI:
    app = FastAPI(title="contour annotation service")
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])
    store = SessionStore()
    app.state.sessions = store

    def require_model() -> mdl.GcnModel:
        if base is None:
            raise HTTPException(status_code=503, detail="model not loaded")
        return base

    def session_iou(session: Session) -> float | None:
        if session.gt_mask is None:
            return None
        mask = interactive.curve_mask(session.curve, session.height,
                                      session.width, IOU_RENDER_SAMPLES)
        return raster.iou(mask, session.gt_mask)

    def session_payload(session: Session) -> dict:
        payload = {"session_id": session.id,
                   "curve": session.curve.points.tolist(),
                   "clicks": session.clicks}
        iou = session_iou(session)
        if iou is not None:
            payload["iou"] = iou
        return payload

    def run_automatic(session: Session):
        model = require_model()
        pred = mdl.iterative_inference(model, session.crop)
        session.curve = pred.final
        session.fmap = pred.features.fmap
        session.clicks = 0

    @app.post("/session")
    def create_session(body: CreateSessionBody):
        model = require_model()
        image = _decode_image(body.image)
        h, w = image.shape[1], image.shape[2]
        crop = data.resize_bilinear(image, model.config.crop_size,
                                    model.config.crop_size)
        gt_mask = None
        if body.gt_polygon is not None:
            poly = np.asarray(body.gt_polygon, dtype=np.float64)
            if poly.ndim != 2 or poly.shape[1] != 2 or len(poly) < 3:
                raise HTTPException(status_code=422,
                                    detail="gt_polygon must be [[x,y],...] with 3+ points")
            gt_mask = raster.scanline_rasterize(poly, h, w)
        session = Session(id=uuid.uuid4().hex, crop=crop, height=h, width=w,
                          fmap=None, curve=None, gt_mask=gt_mask)
        run_automatic(session)
        store.put(session)
        return session_payload(session)

    @app.post("/session/{sid}/correct")
    def correct(sid: str, body: CorrectBody):
        model = require_model()
        session = store.get(sid)
        n = model.config.n_points
        if not 0 <= body.node < n:
            raise HTTPException(status_code=422,
                                detail=f"node index must be in [0,{n})")
        with session.lock:
            old = session.curve.points[body.node].copy()
            new = np.clip(np.asarray(body.new_pos, dtype=np.float64), 0.0, 1.0)
            corr = interactive.Correction(node=body.node, old_pos=old, new_pos=new)
            if imodel is not None:
                session.curve = interactive.masked_predict(imodel, session.fmap,
                                                           session.curve, corr)
            else:
                pts = session.curve.points.copy()
                pts[body.node] = new
                session.curve = geometry.ControlCurve(pts, session.curve.kind)
            session.clicks += 1
        return session_payload(session)

    @app.post("/session/{sid}/reset")
    def reset(sid: str):
        session = store.get(sid)
        with session.lock:
            run_automatic(session)
        return session_payload(session)

    @app.get("/session/{sid}")
    def get_session(sid: str):
        return session_payload(store.get(sid))

    @app.delete("/session/{sid}")
    def delete_session(sid: str):
        store.delete(sid)
        return {"deleted": sid}

    @app.get("/model/info")
    def model_info():
        model = require_model()
        return {"n_points": model.config.n_points,
                "curve_kind": model.config.curve_kind,
                "iterations": model.config.iterations,
                "interactive": imodel is not None,
                "checkpoint_hash": checkpoint_hash}

    return app


def app_from_checkpoint(path) -> FastAPI:
    base, imodel = interactive.load_bundle(path)
    digest = hashlib.sha256(open(path, "rb").read()).hexdigest()
    return create_app(base, imodel, checkpoint_hash=digest)
