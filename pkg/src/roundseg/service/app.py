"""Session-oriented HTTP API for interactive multi-round segmentation.

Endpoints:
    POST  /sessions                     create from generator seed or image
    POST  /sessions/{id}/rounds         run one round
    GET   /sessions/{id}                full transcript
    PATCH /sessions/{id}/config         adjust beta / toggle the gate
    GET   /sessions/{id}/rounds/{k}/mask.png
    GET   /healthz

Sessions persist to disk as one directory per session (image, per-round mask
PNGs, transcript JSONL) and are replayed on restart. One round may be in
flight per session; concurrent posts get 409.
"""

from __future__ import annotations

import base64
import io
import json
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.staticfiles import StaticFiles
from PIL import Image
from pydantic import BaseModel

from ..core.types import BinaryMask, ImageGrid
from ..core.serial import load_mask_png, save_image_png, save_mask_png
from ..datagen import GenConfig, generate_scene
from ..errors import PlacementFailure, SchemaViolation
from ..inference.session import JcmConfig, RoundResult, SessionState, run_round, start_session
from ..model.checkpoint import load_model
from ..model.jcm import load_jcm
from ..model.network import SegModel

DEFAULT_BETA = 0.6


class CreateSession(BaseModel):
    seed: Optional[int] = None
    image_base64: Optional[str] = None


class PostRound(BaseModel):
    query_text: str
    ref_round: int = 0


class PatchConfig(BaseModel):
    beta: Optional[float] = None
    jcm: Optional[bool] = None


@dataclass
class SessionResource:
    session_id: str
    created_at: float
    state: SessionState
    beta: float
    jcm_enabled: bool
    seed: Optional[int]
    lock: threading.Lock = field(default_factory=threading.Lock)


def _png_b64(arr_u8: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(arr_u8, mode="L").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _image_b64(image: ImageGrid) -> str:
    return _png_b64(np.round(image.pixels * 255.0).astype(np.uint8))


def _mask_b64(mask: BinaryMask) -> str:
    return _png_b64(mask.bits.astype(np.uint8) * 255)


def _rle_counts(mask: BinaryMask) -> list[int]:
    """Row-major run lengths, starting with a background run."""
    flat = mask.bits.flatten()
    if flat.size == 0:
        return []
    change = np.nonzero(np.diff(flat))[0] + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    return [int(r) for r in runs]


def _round_payload(res: RoundResult) -> dict:
    return {
        "round_index": res.round_index,
        "query_text": res.query_text,
        "ref_round": res.ref_round,
        "answer_text": res.answer_text,
        "mask_base64": _mask_b64(res.mask),
        "mask_rle": _rle_counts(res.mask),
        "mask_area": res.mask.area(),
        "q": res.q,
        "corrected": res.corrected,
        "seg_emitted": res.seg_emitted,
        "ref_empty": res.ref_empty,
    }


class ServiceCore:
    """Model + session registry + persistence, shared by HTTP handlers."""

    def __init__(
        self,
        model: Optional[SegModel] = None,
        judge=None,
        corrector=None,
        sessions_dir: Optional[Path] = None,
    ):
        self.model = model
        self.judge = judge
        self.corrector = corrector
        self.sessions: dict[str, SessionResource] = {}
        self.sessions_dir = Path(sessions_dir) if sessions_dir else None
        if self.sessions_dir:
            self.sessions_dir.mkdir(parents=True, exist_ok=True)
            self._restore()

    # ----- persistence -----

    def _sdir(self, sid: str) -> Optional[Path]:
        return self.sessions_dir / sid if self.sessions_dir else None

    def _persist_new(self, res: SessionResource):
        d = self._sdir(res.session_id)
        if not d:
            return
        (d / "masks").mkdir(parents=True, exist_ok=True)
        save_image_png(res.state.image, d / "image.png")
        meta = {
            "session_id": res.session_id,
            "created_at": res.created_at,
            "beta": res.beta,
            "jcm": res.jcm_enabled,
            "seed": res.seed,
        }
        (d / "meta.json").write_text(json.dumps(meta, sort_keys=True), encoding="utf-8")
        (d / "transcript.jsonl").write_text("", encoding="utf-8")

    def _persist_round(self, res: SessionResource, result: RoundResult):
        d = self._sdir(res.session_id)
        if not d:
            return
        save_mask_png(result.mask, d / "masks" / f"round_{result.round_index:02d}.png")
        rec = {
            "round_index": result.round_index,
            "query_text": result.query_text,
            "ref_round": result.ref_round,
            "answer_text": result.answer_text,
            "history_answer": res.state.history[result.round_index - 1][2],
            "q": result.q,
            "corrected": result.corrected,
            "seg_emitted": result.seg_emitted,
            "ref_empty": result.ref_empty,
        }
        with open(d / "transcript.jsonl", "a", encoding="utf-8") as fh:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def _persist_config(self, res: SessionResource):
        d = self._sdir(res.session_id)
        if not d:
            return
        meta = json.loads((d / "meta.json").read_text())
        meta["beta"], meta["jcm"] = res.beta, res.jcm_enabled
        (d / "meta.json").write_text(json.dumps(meta, sort_keys=True), encoding="utf-8")

    def _restore(self):
        if self.model is None:
            return
        for d in sorted(self.sessions_dir.iterdir()):
            meta_path = d / "meta.json"
            if not meta_path.is_file():
                continue
            meta = json.loads(meta_path.read_text())
            from ..core.serial import load_image_png

            state = start_session(load_image_png(d / "image.png"), self.model)
            with open(d / "transcript.jsonl", encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    rec = json.loads(line)
                    mask = load_mask_png(d / "masks" / f"round_{rec['round_index']:02d}.png")
                    result = RoundResult(
                        round_index=rec["round_index"],
                        query_text=rec["query_text"],
                        answer_text=rec["answer_text"],
                        mask=mask,
                        q=rec["q"],
                        corrected=rec["corrected"],
                        seg_emitted=rec["seg_emitted"],
                        ref_empty=rec["ref_empty"],
                        ref_round=rec["ref_round"],
                    )
                    state.rounds.append(result)
                    state.history.append(
                        (rec["round_index"], rec["query_text"], rec["history_answer"])
                    )
            self.sessions[meta["session_id"]] = SessionResource(
                session_id=meta["session_id"],
                created_at=meta["created_at"],
                state=state,
                beta=meta["beta"],
                jcm_enabled=meta["jcm"],
                seed=meta["seed"],
            )

    # ----- operations -----

    def jcm_config(self, res: SessionResource) -> JcmConfig:
        if res.jcm_enabled and self.judge is not None:
            return JcmConfig(enabled=True, beta=res.beta, judge=self.judge, corrector=self.corrector)
        return JcmConfig(enabled=False, beta=res.beta)

    def create(self, body: CreateSession) -> tuple[SessionResource, Optional[dict]]:
        if self.model is None:
            raise HTTPException(503, "model not loaded")
        scene_info = None
        if body.seed is not None:
            cfg = GenConfig(seed=int(body.seed), image_size=128)
            seed = int(body.seed)
            while True:
                try:
                    scene = generate_scene(seed, cfg)
                    break
                except PlacementFailure:
                    seed += 1
            image = scene.image
            scene_info = {
                "requested_seed": int(body.seed),
                "used_seed": seed,
                "entities": [
                    {
                        "entity_id": e.entity_id,
                        "category": e.category,
                        "mask_base64": _mask_b64(e.mask),
                    }
                    for e in scene.entities
                ],
            }
        elif body.image_base64:
            try:
                raw = base64.b64decode(body.image_base64)
                pil = Image.open(io.BytesIO(raw)).convert("L")
                arr = np.asarray(pil, dtype=np.uint8).astype(np.float32) / np.float32(255.0)
                image = ImageGrid(arr)
                self.model.config.image_token_hw(image.height, image.width)
            except (SchemaViolation, Exception) as e:  # noqa: BLE001 - surfaced as 400
                raise HTTPException(400, f"undecodable or unsupported image: {e}") from e
        else:
            raise HTTPException(400, "provide a generator seed or an image")
        res = SessionResource(
            session_id=uuid.uuid4().hex,
            created_at=time.time(),
            state=start_session(image, self.model),
            beta=DEFAULT_BETA,
            jcm_enabled=self.judge is not None,
            seed=body.seed,
        )
        self.sessions[res.session_id] = res
        self._persist_new(res)
        return res, scene_info

    def get(self, sid: str) -> SessionResource:
        res = self.sessions.get(sid)
        if res is None:
            raise HTTPException(404, "unknown session")
        return res

    def post_round(self, sid: str, body: PostRound) -> dict:
        res = self.get(sid)
        n_done = len(res.state.rounds)
        if not (0 <= body.ref_round <= n_done):
            raise HTTPException(422, f"ref_round must be 0..{n_done}")
        if not res.lock.acquire(blocking=False):
            raise HTTPException(409, "a round is already in flight for this session")
        try:
            result = run_round(
                res.state, body.query_text, body.ref_round, self.model, self.jcm_config(res)
            )
            self._persist_round(res, result)
            return _round_payload(result)
        finally:
            res.lock.release()


def create_app(
    model: Optional[SegModel] = None,
    judge=None,
    corrector=None,
    checkpoint: Optional[str] = None,
    jcm_checkpoint: Optional[str] = None,
    sessions_dir: Optional[str] = None,
    static_dir: Optional[str] = None,
) -> FastAPI:
    if model is None and checkpoint:
        model = load_model(checkpoint)
    if judge is None and jcm_checkpoint:
        judge, corrector, _ = load_jcm(jcm_checkpoint)
    core = ServiceCore(model, judge, corrector, Path(sessions_dir) if sessions_dir else None)
    app = FastAPI(title="roundseg session service")
    app.state.core = core
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    @app.get("/healthz")
    def healthz():
        return {
            "status": "ok",
            "model_loaded": core.model is not None,
            "jcm_loaded": core.judge is not None,
            "sessions": len(core.sessions),
        }

    @app.post("/sessions")
    def create_session(body: CreateSession):
        res, scene_info = core.create(body)
        return {
            "session_id": res.session_id,
            "width": res.state.image.width,
            "height": res.state.image.height,
            "image_base64": _image_b64(res.state.image),
            "scene": scene_info,
            "config": {"beta": res.beta, "jcm": res.jcm_enabled},
        }

    @app.post("/sessions/{sid}/rounds")
    def post_round(sid: str, body: PostRound):
        return core.post_round(sid, body)

    @app.get("/sessions/{sid}")
    def get_history(sid: str):
        res = core.get(sid)
        rounds = [_round_payload(r) for r in res.state.rounds]
        return {
            "session_id": res.session_id,
            "width": res.state.image.width,
            "height": res.state.image.height,
            "image_base64": _image_b64(res.state.image),
            "config": {"beta": res.beta, "jcm": res.jcm_enabled},
            "rounds": rounds,
        }

    @app.patch("/sessions/{sid}/config")
    def patch_config(sid: str, body: PatchConfig):
        res = core.get(sid)
        if body.beta is not None:
            if not (0.0 <= body.beta <= 1.0):
                raise HTTPException(422, "beta must lie in [0, 1]")
            res.beta = float(body.beta)
        if body.jcm is not None:
            if body.jcm and core.judge is None:
                raise HTTPException(422, "no judgment/correction weights loaded")
            res.jcm_enabled = bool(body.jcm)
        core._persist_config(res)
        return {"beta": res.beta, "jcm": res.jcm_enabled}

    @app.get("/sessions/{sid}/rounds/{k}/mask.png")
    def get_mask(sid: str, k: int):
        res = core.get(sid)
        if not (1 <= k <= len(res.state.rounds)):
            raise HTTPException(404, "no such round")
        mask = res.state.rounds[k - 1].mask
        buf = io.BytesIO()
        Image.fromarray(mask.bits.astype(np.uint8) * 255, mode="L").save(buf, format="PNG")
        return Response(content=buf.getvalue(), media_type="image/png")

    if static_dir and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app
