"""HTTP inference service backing the mixing console.

Upload a mixture once; the encoder/separator run a single time and the
masked-latent cache lives in the session. Every later gain change is a
cheap re-render: a decoder re-run on the cached latents for latent-control
checkpoints, a scale-and-sum of the cached estimates otherwise. A debug
counter endpoint exposes encoder/decoder run counts so the encode-once
contract is testable from the outside.

Audio crosses the wire as WAV bytes (float32), which keeps responses
bit-exact and directly playable. Sessions are in-memory with TTL eviction;
nothing persists.
"""

from __future__ import annotations

import io
import json
import threading
import time
import uuid
import zipfile
from dataclasses import dataclass, field, asdict

from fastapi import FastAPI, Request, Response, UploadFile
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .audio import GainVector, Waveform
from .datagen import WavFormatError, decode_wav, encode_wav
from .model import (
    Checkpoint,
    SeparationOutput,
    checkpoint_digest,
    decode_remix_from_cache,
    forward_separate,
    load_checkpoint,
    remix_from_estimates,
)

__all__ = ["create_app", "GAIN_LIMIT_DB", "DEFAULT_MAX_UPLOAD_S", "DEFAULT_SESSION_TTL_S"]

# Gains are clamped to the evaluated envelope.
GAIN_LIMIT_DB = 24.0
DEFAULT_MAX_UPLOAD_S = 60.0
DEFAULT_SESSION_TTL_S = 1800.0


@dataclass
class Session:
    session_id: str
    mixture: Waveform
    separated: SeparationOutput
    created_at: float
    last_used: float
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)


class ServiceState:
    def __init__(
        self,
        checkpoint: Checkpoint | None,
        checkpoint_hash: str | None,
        max_upload_s: float,
        session_ttl_s: float,
    ):
        self.checkpoint = checkpoint
        self.checkpoint_hash = checkpoint_hash
        self.max_upload_s = max_upload_s
        self.session_ttl_s = session_ttl_s
        self.sessions: dict[str, Session] = {}
        self.sessions_lock = threading.Lock()
        self.encoder_runs = 0
        self.decoder_runs = 0
        self.counter_lock = threading.Lock()

    def labels(self) -> list[str]:
        meta = self.checkpoint.metadata if self.checkpoint else {}
        labels = meta.get("labels")
        k = self.checkpoint.params.config.k
        if labels and len(labels) == k:
            return list(labels)
        return [f"source_{i + 1}" for i in range(k)]

    def bump(self, encoder: int = 0, decoder: int = 0) -> None:
        with self.counter_lock:
            self.encoder_runs += encoder
            self.decoder_runs += decoder

    def evict_expired(self) -> None:
        now = time.monotonic()
        with self.sessions_lock:
            dead = [
                sid
                for sid, s in self.sessions.items()
                if now - s.last_used > self.session_ttl_s
            ]
            for sid in dead:
                del self.sessions[sid]

    def get_session(self, session_id: str) -> Session | None:
        with self.sessions_lock:
            session = self.sessions.get(session_id)
            if session is None:
                return None
            if time.monotonic() - session.last_used > self.session_ttl_s:
                del self.sessions[session_id]
                return None
            session.last_used = time.monotonic()
            return session

    def put_session(self, session: Session) -> None:
        self.evict_expired()
        with self.sessions_lock:
            self.sessions[session.session_id] = session


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": message})


def create_app(
    checkpoint_path=None,
    max_upload_s: float = DEFAULT_MAX_UPLOAD_S,
    session_ttl_s: float = DEFAULT_SESSION_TTL_S,
) -> FastAPI:
    """Build the service; with no checkpoint the model endpoints answer 503."""
    checkpoint = None
    digest = None
    if checkpoint_path is not None:
        checkpoint = load_checkpoint(checkpoint_path)
        digest = checkpoint_digest(checkpoint_path)
    state = ServiceState(checkpoint, digest, max_upload_s, session_ttl_s)

    app = FastAPI(title="remixer inference service")
    app.state.service = state
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
        expose_headers=["X-Applied-Gains-Db", "X-Clamped"],
    )

    @app.get("/v1/model")
    def model_info():
        if state.checkpoint is None:
            return _error(503, "no checkpoint loaded")
        return {
            "variant": state.checkpoint.variant,
            "config": asdict(state.checkpoint.params.config),
            "checkpoint_hash": state.checkpoint_hash,
            "labels": state.labels(),
        }

    @app.get("/v1/debug/counters")
    def counters():
        with state.counter_lock:
            return {
                "encoder_runs": state.encoder_runs,
                "decoder_runs": state.decoder_runs,
                "sessions": len(state.sessions),
            }

    @app.post("/v1/sessions")
    def create_session(file: UploadFile):
        if state.checkpoint is None:
            return _error(503, "no checkpoint loaded")
        raw = file.file.read()
        try:
            mixture = decode_wav(raw)
        except WavFormatError as e:
            msg = str(e)
            if "channels" in msg or "codec" in msg:
                return _error(415, msg)
            return _error(400, msg)
        cfg = state.checkpoint.params.config
        if mixture.sample_rate != cfg.sample_rate:
            return _error(
                415,
                f"sample rate {mixture.sample_rate} not supported; "
                f"model expects {cfg.sample_rate}",
            )
        if mixture.duration_s > state.max_upload_s:
            return _error(
                413,
                f"upload of {mixture.duration_s:.1f}s exceeds limit of {state.max_upload_s}s",
            )
        if len(mixture) < cfg.kernel_len:
            return _error(400, "audio too short for the model")
        separated = forward_separate(state.checkpoint.params, mixture)
        state.bump(encoder=1, decoder=cfg.k)
        now = time.monotonic()
        session = Session(
            session_id=uuid.uuid4().hex,
            mixture=mixture,
            separated=separated,
            created_at=now,
            last_used=now,
        )
        state.put_session(session)
        return {
            "session_id": session.session_id,
            "duration_s": mixture.duration_s,
            "sample_rate": mixture.sample_rate,
            "k": cfg.k,
            "labels": state.labels(),
        }

    @app.post("/v1/sessions/{session_id}/remix")
    async def remix(session_id: str, request: Request):
        session = state.get_session(session_id)
        if session is None:
            return _error(404, f"unknown session {session_id!r}")
        try:
            body = json.loads(await request.body())
        except json.JSONDecodeError:
            return _error(422, "body must be JSON: {\"gains_db\": [...]}")
        gains_db = body.get("gains_db")
        k = state.checkpoint.params.config.k
        if not isinstance(gains_db, list) or len(gains_db) != k:
            return _error(422, f"gains_db must be a list of {k} dB values")
        try:
            requested = [float(v) for v in gains_db]
        except (TypeError, ValueError):
            return _error(422, "gains_db values must be numbers")
        applied = [min(max(v, -GAIN_LIMIT_DB), GAIN_LIMIT_DB) for v in requested]
        clamped = applied != requested
        gains = GainVector(db=tuple(applied))
        with session.lock:
            if state.checkpoint.variant == "model2":
                rendered = decode_remix_from_cache(
                    state.checkpoint.params, session.separated, gains
                )
                state.bump(decoder=k)
            else:
                rendered = remix_from_estimates(session.separated, gains)
        return Response(
            content=encode_wav(rendered),
            media_type="audio/wav",
            headers={
                "X-Applied-Gains-Db": json.dumps(applied),
                "X-Clamped": "1" if clamped else "0",
            },
        )

    @app.get("/v1/sessions/{session_id}/stems")
    def stems(session_id: str):
        session = state.get_session(session_id)
        if session is None:
            return _error(404, f"unknown session {session_id!r}")
        labels = state.labels()
        buf = io.BytesIO()
        with session.lock, zipfile.ZipFile(buf, "w", zipfile.ZIP_STORED) as zf:
            for label, est in zip(labels, session.separated.estimates):
                info = zipfile.ZipInfo(f"{label}.wav", date_time=(1980, 1, 1, 0, 0, 0))
                zf.writestr(info, encode_wav(est))
        return Response(content=buf.getvalue(), media_type="application/zip")

    return app
