# causalmesh/main.py
"""Debug HTTP surface of a running server process."""

import uuid

from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.middleware.cors import CORSMiddleware

from causalmesh import __version__
from causalmesh.schemas.trace import ServerSnapshot
from causalmesh.websocket.manager import ConnectionManager, manager as default_manager


def create_app(process, manager: ConnectionManager = None) -> FastAPI:
    """App bound to one ServerProcess (anything with index, n, trace and snapshot())."""
    manager = manager or getattr(process, "manager", None) or default_manager
    app = FastAPI(title=f"causalmesh S{process.index}", version=__version__)

    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_credentials=True,
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.get("/health")
    def health():
        return {
            "status": "ok",
            "server": process.index,
            "n": process.n,
            "events": len(process.trace),
            "subscribers": len(manager.connections),
        }

    @app.get("/snapshot", response_model=ServerSnapshot)
    def snapshot():
        return ServerSnapshot.model_validate(process.snapshot().model_dump())

    @app.websocket("/ws/trace")
    async def trace_events(websocket: WebSocket):
        subscriber_id = uuid.uuid4().hex
        await manager.connect(subscriber_id, websocket)
        await manager.send_log(subscriber_id, "info", f"subscribed to S{process.index}")
        try:
            while True:
                await websocket.receive_text()
        except WebSocketDisconnect:
            manager.disconnect(subscriber_id)

    return app
