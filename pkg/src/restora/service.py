"""HTTP session service for the interactive restoration dialogue.

Each session holds one uploaded degraded image plus an append-only message
log. `restore` asks the description provider for the degradation text and runs
the full context route; `refine` encodes the user's own text directly (context
enhancement bypassed) and always re-restores from the ORIGINAL upload, never
from a previous output. Message handling is serialized per session; model
parameters are shared read-only across sessions.
"""

from __future__ import annotations

import base64
import json
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Literal, Optional

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from pydantic import BaseModel

from .degrade import DegradationSpec
from .images import from_png_bytes, png_bytes
from .textio import (
    DEFAULT_PROMPT,
    OracleProvider,
    RemoteMLLMProvider,
    TransportError,
    provider_describe,
)
from .train import load_checkpoint

INSTRUCTIONS = ("describe", "restore", "refine", "none")


@dataclass
class ServiceConfig:
    checkpoint: str = ""
    port: int = 8000
    provider: str = "oracle"  # oracle | remote
    remote_describe_endpoint: str = ""
    fallback: str = "none"  # none | oracle
    history_concat: bool = False
    corruption_p: float = 0.0  # oracle describe stays accurate by default

    @classmethod
    def load(cls, path) -> "ServiceConfig":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


##########################################################################
## Wire models

class MessageRequest(BaseModel):
    text: str = ""
    instruction: Literal["describe", "restore", "refine", "none"]


class MessageResponse(BaseModel):
    reply_text: str
    image_b64: Optional[str] = None


class MessageRecord(BaseModel):
    role: Literal["user", "assistant"]
    text: str
    instruction: Literal["describe", "restore", "refine", "none"]
    timestamp: float


class SessionPayload(BaseModel):
    id: str
    has_image: bool
    lq_b64: Optional[str] = None
    restored_b64: Optional[str] = None
    log: List[MessageRecord]
    checkpoint_id: str


##########################################################################
## Session store

@dataclass
class Session:
    id: str
    lq: Optional[np.ndarray] = None
    spec: Optional[DegradationSpec] = None
    restored: Optional[np.ndarray] = None
    last_description: str = ""
    log: list = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)

    def append(self, role: str, text: str, instruction: str) -> None:
        self.log.append(MessageRecord(
            role=role, text=text, instruction=instruction, timestamp=time.time()))


class SessionStore:
    def __init__(self):
        self._sessions = {}
        self._lock = threading.Lock()

    def create(self) -> Session:
        session = Session(id=uuid.uuid4().hex[:12])
        with self._lock:
            self._sessions[session.id] = session
        return session

    def get(self, session_id: str) -> Session:
        with self._lock:
            session = self._sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"unknown session: {session_id}")
        return session


##########################################################################
## Application

def _build_provider(cfg: ServiceConfig):
    if cfg.provider == "oracle":
        return OracleProvider(mode="gt", p=cfg.corruption_p)
    if cfg.provider == "remote":
        if not cfg.remote_describe_endpoint:
            raise ValueError("remote provider needs remote_describe_endpoint")
        return RemoteMLLMProvider(cfg.remote_describe_endpoint)
    raise ValueError(f"unknown provider kind: {cfg.provider!r}")


def create_app(checkpoint=None, config: ServiceConfig = None, provider=None) -> FastAPI:
    """Build the service around a loaded checkpoint (object or path)."""
    cfg = config or ServiceConfig()
    if checkpoint is None:
        if not cfg.checkpoint:
            raise ValueError("a checkpoint (object or path) is required")
        checkpoint = cfg.checkpoint
    ckpt = checkpoint if not isinstance(checkpoint, (str, Path)) else load_checkpoint(checkpoint)
    model = ckpt.build_model()
    model.eval()
    provider = provider if provider is not None else _build_provider(cfg)
    store = SessionStore()

    app = FastAPI(title="restora session service")
    app.state.store = store
    app.state.model = model
    app.state.checkpoint = ckpt
    app.state.config = cfg

    def describe_text(session: Session) -> str:
        try:
            desc = provider_describe(provider, session.lq, DEFAULT_PROMPT,
                                     spec=session.spec,
                                     seed=session.spec.seed if session.spec else 0)
        except TransportError as exc:
            note = ("; oracle fallback is configured, retry with provider=oracle"
                    if cfg.fallback == "oracle" else "")
            raise HTTPException(status_code=502,
                                detail=f"description provider failure: {exc}{note}")
        except ValueError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return desc.text

    def run_restore(session: Session, text: str, use_cem: bool) -> np.ndarray:
        out = model.restore_array(session.lq, text, use_cem=use_cem)
        session.restored = out
        return out

    @app.post("/sessions", status_code=201)
    def create_session():
        return {"id": store.create().id}

    @app.post("/sessions/{session_id}/image", status_code=204)
    async def upload_image(session_id: str, request: Request, spec: str = None):
        session = store.get(session_id)
        body = await request.body()
        try:
            img = from_png_bytes(body)
        except Exception as exc:
            raise HTTPException(status_code=422, detail=f"not a decodable PNG: {exc}")
        parsed = None
        if spec is not None:
            try:
                parsed = DegradationSpec.from_dict(json.loads(spec))
            except (ValueError, KeyError, json.JSONDecodeError) as exc:
                raise HTTPException(status_code=422, detail=f"bad degradation record: {exc}")
        with session.lock:
            session.lq = img
            session.spec = parsed
            session.restored = None

    @app.post("/sessions/{session_id}/messages", response_model=MessageResponse,
              response_model_exclude_none=True)
    def post_message(session_id: str, message: MessageRequest):
        session = store.get(session_id)
        with session.lock:
            if message.instruction in ("describe", "restore", "refine") and session.lq is None:
                raise HTTPException(status_code=409,
                                    detail=f"{message.instruction} needs an uploaded image")
            if message.instruction == "refine" and not message.text.strip():
                raise HTTPException(status_code=422, detail="refine needs a non-empty text")

            session.append("user", message.text, message.instruction)
            image_b64 = None
            if message.instruction == "describe":
                reply = describe_text(session)
            elif message.instruction == "restore":
                text = describe_text(session)
                session.last_description = text
                out = run_restore(session, text, use_cem=True)
                image_b64 = base64.b64encode(png_bytes(out)).decode("ascii")
                reply = text
            elif message.instruction == "refine":
                text = message.text
                if cfg.history_concat:
                    prior = [r.text for r in session.log
                             if r.role == "user" and r.text.strip() and r is not session.log[-1]]
                    text = " ".join(prior + [message.text])
                session.last_description = text
                out = run_restore(session, text, use_cem=False)
                image_b64 = base64.b64encode(png_bytes(out)).decode("ascii")
                reply = f"Restored with your description: {message.text}"
            else:
                reply = "Noted. Send describe, restore, or refine to work on the image."
            session.append("assistant", reply, message.instruction)
            return MessageResponse(reply_text=reply, image_b64=image_b64)

    @app.get("/sessions/{session_id}", response_model=SessionPayload,
             response_model_exclude_none=True)
    def get_session(session_id: str):
        session = store.get(session_id)
        with session.lock:
            return SessionPayload(
                id=session.id,
                has_image=session.lq is not None,
                lq_b64=(base64.b64encode(png_bytes(session.lq)).decode("ascii")
                        if session.lq is not None else None),
                restored_b64=(base64.b64encode(png_bytes(session.restored)).decode("ascii")
                              if session.restored is not None else None),
                log=list(session.log),
                checkpoint_id=ckpt.checkpoint_id,
            )

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "checkpoint_id": ckpt.checkpoint_id}

    return app
