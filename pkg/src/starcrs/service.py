"""HTTP chat service over a trained checkpoint.

Sessions hold append-only turn histories; the model is read-only, so
distinct sessions serve concurrently while each session's requests are
serialized by a per-session lock."""

from __future__ import annotations

import logging
import threading
import uuid

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from .corpus import RECOMMENDER, SEEKER, Utterance, detect_entity_mentions
from .conv import generate_response
from .evaluate import decoding_from
from .rec import build_rec_prompt, entity_tables, recommend_topk
from .conv import build_conv_prompt

log = logging.getLogger(__name__)


class UtteranceIn(BaseModel):
    text: str


class ChatSession:
    def __init__(self, session_id: str):
        self.id = session_id
        self.turns = []
        self.history = []
        self.lock = threading.Lock()


class ChatService:
    """All live state plus the read-only model."""

    def __init__(self, model):
        self.model = model
        self.sessions = {}
        self._registry_lock = threading.Lock()
        # entity tables are parameter-only, so freeze them once
        self.tables = entity_tables(model)

    def create_session(self) -> ChatSession:
        session = ChatSession(uuid.uuid4().hex[:12])
        with self._registry_lock:
            self.sessions[session.id] = session
        return session

    def get_session(self, session_id: str) -> ChatSession:
        with self._registry_lock:
            session = self.sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404,
                                detail=f"no session {session_id}")
        return session

    def step(self, session: ChatSession, text: str) -> dict:
        model = self.model
        mentions = detect_entity_mentions(text, model.descriptions)
        session.turns.append(Utterance(SEEKER, text, mentions))
        turns = list(session.turns)
        key = f"live:{session.id}"
        segments, ent_ids, gates = build_rec_prompt(model, key, turns,
                                                    self.tables)
        recs = recommend_topk(model, key, turns, model.cfg.top_k, self.tables)
        response = generate_response(model, key, turns,
                                     decoding_from(model.cfg))
        _, _, conv_diag = build_conv_prompt(model, key, turns)
        session.turns.append(Utterance(RECOMMENDER, response, []))
        record = {
            "user_text": text,
            "response_text": response,
            "recommendations": [
                {"item_id": item, "name": model.descriptions[item].name,
                 "score": score}
                for item, score in recs
            ],
            "diagnostics": {
                "gate_txt_mean": gates["gate_txt_mean"],
                "gate_vis_mean": gates["gate_vis_mean"],
                "retrieved_ids": conv_diag["retrieved_ids"],
                "prompt_token_counts": {
                    "rec": gates["prompt_token_counts"],
                    "conv": conv_diag["prompt_token_counts"],
                },
            },
        }
        session.history.append(record)
        return record


def create_app(model) -> FastAPI:
    app = FastAPI(title="starcrs chat service")
    svc = ChatService(model)
    app.state.service = svc

    @app.post("/session", status_code=201)
    def start_session():
        session = svc.create_session()
        return {"session_id": session.id}

    @app.post("/session/{session_id}/utterance")
    def post_utterance(session_id: str, body: UtteranceIn):
        if not body.text.strip():
            raise HTTPException(status_code=422, detail="empty utterance")
        session = svc.get_session(session_id)
        with session.lock:
            return svc.step(session, body.text)

    @app.get("/session/{session_id}")
    def get_session(session_id: str):
        session = svc.get_session(session_id)
        with session.lock:
            return {
                "session_id": session.id,
                "turns": [{"speaker": t.speaker, "text": t.text}
                          for t in session.turns],
                "history": list(session.history),
            }

    return app


def load_service_model(checkpoint: str):
    from .checkpoint import load_checkpoint
    from .train import load_model, resolve_corpus

    cfg = load_checkpoint(checkpoint).config
    convs, graph, descs = resolve_corpus(cfg)
    model, _ = load_model(checkpoint, convs, graph, descs)
    return model


def serve(checkpoint: str, host: str = "127.0.0.1", port: int = 8977) -> None:
    import uvicorn

    model = load_service_model(checkpoint)
    app = create_app(model)
    log.info("serving checkpoint %s on %s:%d", checkpoint, host, port)
    uvicorn.run(app, host=host, port=port)
