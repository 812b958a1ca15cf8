"""HTTP API exposing live diagnostic sessions for operators and the web UI.

Sessions live in an in-memory map (optionally mirrored to disk and restored on
restart). Turns on one session are serialized: a concurrent turn on the same
session gets a 409 instead of interleaving. All shared artifacts are immutable
and read-concurrent.
"""

import secrets
import threading
from pathlib import Path

from pydantic import BaseModel, Field

from .artifacts import ArtifactBundle
from .dialogue import VARIANT_MASKS, DialogueEngine, PolicyParams
from .util import dump_json


class CreateSessionBody(BaseModel):
    variant: str = Field(default="dqa")


class TurnBody(BaseModel):
    text: str

API_FORMAT_VERSION = 1

STATE_SNAPSHOT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["format_version", "hypothesis", "symptoms", "kb_refs", "candidates", "turn"],
    "properties": {
        "format_version": {"type": "integer"},
        "hypothesis": {"type": "string"},
        "symptoms": {"type": "array", "items": {"type": "string"}},
        "kb_refs": {
            "type": "array",
            "items": {
                "type": "array",
                "prefixItems": [{"type": "string"}, {"type": "number"}],
            },
        },
        "candidates": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["cluster_id", "weight", "label_text"],
                "properties": {
                    "cluster_id": {"type": "string"},
                    "weight": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                    "label_text": {"type": "string"},
                    "exemplar_ids": {"type": "array", "items": {"type": "string"}},
                    "canonical_resolution": {"type": "string"},
                    "resolution_steps": {"type": "array", "items": {"type": "string"}},
                },
            },
        },
        "turn": {"type": "integer", "minimum": 0},
        "attempted_steps": {"type": "array", "items": {"type": "string"}},
    },
}

TURN_RESPONSE_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["session_id", "turn", "action_type", "reply", "state", "terminated"],
    "properties": {
        "session_id": {"type": "string"},
        "turn": {"type": "integer", "minimum": 1},
        "action_type": {"enum": ["clarify", "investigate", "resolve"]},
        "reply": {"type": "string"},
        "proposed_steps": {"type": "array", "items": {"type": "string"}},
        "state": STATE_SNAPSHOT_SCHEMA,
        "kb_titles": {"type": "object", "additionalProperties": {"type": "string"}},
        "terminated": {"type": "boolean"},
    },
}


class _Session:
    def __init__(self, session_id: str, engine: DialogueEngine):
        self.session_id = session_id
        self.engine = engine
        self.lock = threading.Lock()
        self.turn_count = 0
        self._last_state: dict | None = None

    def kb_titles(self, state: dict | None) -> dict[str, str]:
        if not state:
            return {}
        kb = self.engine.bundle.kb
        return {
            aid: kb[aid].title
            for aid, _score in state.get("kb_refs", [])
            if aid in kb
        }

    def summary(self) -> dict:
        return {
            "session_id": self.session_id,
            "variant": self.engine.variant,
            "turns": self.turn_count,
            "terminated": self.engine.terminated,
        }

    def snapshot(self) -> dict:
        state = self.engine.state if self.engine.keeps_state else None
        history = [
            {
                "role": u.role,
                "text": u.text,
                "turn": u.turn,
                "action_type": u.action_type,
            }
            for u in self.engine.history.utterances
        ]
        state_dict = state.to_dict() if state is not None else self._last_state
        return {
            "format_version": API_FORMAT_VERSION,
            "session_id": self.session_id,
            "variant": self.engine.variant,
            "terminated": self.engine.terminated,
            "turns": self.turn_count,
            "state": state_dict,
            "kb_titles": self.kb_titles(state_dict),
            "history": history,
        }


def create_app(
    bundle: ArtifactBundle | None,
    params: PolicyParams | None = None,
    persist_dir: str | Path | None = None,
    allow_cors: bool = False,
    generation_backend=None,
):
    from fastapi import FastAPI, HTTPException

    app = FastAPI(title="dqa diagnostic sessions", version="0.1.0")
    sessions: dict[str, _Session] = {}
    params = params or PolicyParams()
    persist_path = Path(persist_dir) if persist_dir else None
    if persist_path:
        persist_path.mkdir(parents=True, exist_ok=True)

    if allow_cors:
        from fastapi.middleware.cors import CORSMiddleware

        app.add_middleware(
            CORSMiddleware,
            allow_origins=["*"],
            allow_methods=["*"],
            allow_headers=["*"],
        )

    def _persist(session: _Session) -> None:
        if not persist_path:
            return
        record = {
            "snapshot": session.snapshot(),
            "engine": session.engine.export_session(),
            "turns": session.turn_count,
        }
        (persist_path / f"{session.session_id}.json").write_text(
            dump_json(record) + "\n", encoding="utf-8"
        )

    if persist_path and bundle is not None:
        import json as _json

        for f in sorted(persist_path.glob("*.json")):
            try:
                record = _json.loads(f.read_text(encoding="utf-8"))
                engine = DialogueEngine.restore_session(
                    bundle, record["engine"], params=params,
                    generation_backend=generation_backend,
                )
                session = _Session(f.stem, engine)
                session.turn_count = int(record.get("turns", 0))
                session._last_state = record.get("snapshot", {}).get("state")
                sessions[f.stem] = session
            except Exception:
                continue  # unreadable session files are skipped, not fatal

    def _get(session_id: str) -> _Session:
        session = sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail="unknown session")
        return session

    @app.get("/health")
    def health():
        return {
            "status": "ok" if bundle is not None else "degraded",
            "format_version": API_FORMAT_VERSION,
            "artifacts_loaded": bundle is not None,
        }

    @app.post("/sessions", status_code=201)
    def create_session(body: CreateSessionBody):
        if bundle is None:
            raise HTTPException(status_code=503, detail="artifacts not loaded")
        if body.variant not in VARIANT_MASKS:
            raise HTTPException(status_code=422, detail=f"unknown variant {body.variant!r}")
        session_id = secrets.token_hex(16)  # 128 bits, unguessable
        engine = DialogueEngine(
            bundle, variant=body.variant, params=params,
            generation_backend=generation_backend,
        )
        sessions[session_id] = _Session(session_id, engine)
        _persist(sessions[session_id])
        return {"session_id": session_id, "variant": body.variant}

    @app.post("/sessions/{session_id}/turns")
    def post_turn(session_id: str, body: TurnBody):
        session = _get(session_id)
        if not body.text or not body.text.strip():
            raise HTTPException(status_code=422, detail="empty turn text")
        if session.engine.terminated:
            raise HTTPException(status_code=409, detail="session terminated")
        if not session.lock.acquire(blocking=False):
            raise HTTPException(status_code=409, detail="turn already in flight")
        try:
            action, state = session.engine.step(body.text)
            session.turn_count += 1
            session._last_state = state.to_dict()
            state_dict = state.to_dict()
            payload = {
                "session_id": session_id,
                "turn": session.turn_count,
                "action_type": action.action_type,
                "reply": action.text,
                "proposed_steps": list(action.proposed_steps),
                "state": state_dict,
                "kb_titles": session.kb_titles(state_dict),
                "terminated": session.engine.terminated,
            }
            _persist(session)
            return payload
        finally:
            session.lock.release()

    @app.get("/sessions/{session_id}")
    def get_state(session_id: str):
        return _get(session_id).snapshot()

    @app.get("/sessions")
    def list_sessions():
        return {
            "sessions": [sessions[sid].summary() for sid in sorted(sessions)],
        }

    app.state.sessions = sessions
    return app
