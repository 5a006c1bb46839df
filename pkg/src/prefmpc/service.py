"""HTTP bridge between the AL loop's blocking human oracle and the labeling
UI: serves pending queries, receives labels, reports progress."""

from __future__ import annotations

import threading
from pathlib import Path
from typing import Literal

from fastapi import FastAPI, HTTPException
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .errors import LabelConflictError, UnknownQueryError
from .oracle import LabelSession

DEFAULT_PORT = 8700


class LabelBody(BaseModel):
    preference: Literal[0, 1]


class LabelAck(BaseModel):
    status: str
    id: str


class StatusPayload(BaseModel):
    session: str
    pending: int
    answered: int
    iteration: int


def create_app(session: LabelSession, ui_dir=None) -> FastAPI:
    """Build the labeling service around one session.

    Routes: GET /api/query/next, POST /api/query/{id}/label, GET /api/status.
    When ``ui_dir`` exists its contents are served as static assets at /.
    """
    app = FastAPI(title="prefmpc labeling service")
    app.state.session = session

    @app.get("/api/query/next")
    def get_next(session_id: str | None = None):
        if session_id is not None and session_id != session.session_id:
            raise HTTPException(status_code=404,
                                detail=f"unknown session {session_id!r}")
        query = session.next_pending()
        if query is None:
            return {"empty": True}
        return query.to_json_obj()

    @app.post("/api/query/{query_id}/label", response_model=LabelAck)
    def post_label(query_id: str, body: LabelBody):
        try:
            session.post_label(query_id, body.preference)
        except LabelConflictError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except UnknownQueryError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return LabelAck(status="ok", id=query_id)

    @app.get("/api/status", response_model=StatusPayload)
    def get_status():
        counts = session.counts()
        return StatusPayload(session=session.session_id, iteration=session.iteration,
                             **counts)

    if ui_dir is not None:
        ui_path = Path(ui_dir)
        if ui_path.is_dir():
            app.mount("/", StaticFiles(directory=str(ui_path), html=True), name="ui")
    return app


def default_ui_dir() -> Path | None:
    """Locate the built frontend relative to the repository root, if present."""
    here = Path(__file__).resolve()
    for parent in here.parents:
        candidate = parent / "frontend"
        if (candidate / "index.html").is_file():
            return candidate
    return None


class ServiceThread:
    """Runs uvicorn in a daemon thread so the AL loop can own the main thread."""

    def __init__(self, app: FastAPI, host: str = "127.0.0.1", port: int = DEFAULT_PORT):
        import uvicorn

        self._config = uvicorn.Config(app, host=host, port=port, log_level="warning")
        self._server = uvicorn.Server(self._config)
        self._thread = threading.Thread(target=self._server.run, daemon=True)
        self.host = host
        self.port = port

    def start(self, wait_ready: float = 10.0) -> None:
        import time

        self._thread.start()
        deadline = time.time() + wait_ready
        while not self._server.started:
            if time.time() > deadline:
                raise RuntimeError("labeling service failed to start")
            if not self._thread.is_alive():
                raise RuntimeError("labeling service thread died during startup")
            time.sleep(0.02)

    def stop(self) -> None:
        self._server.should_exit = True
        self._thread.join(timeout=10.0)
