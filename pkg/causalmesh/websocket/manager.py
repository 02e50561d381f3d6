# causalmesh/websocket/manager.py
import json
import logging
from datetime import datetime
from typing import Dict

from fastapi import WebSocket

from causalmesh.schemas.trace import TraceEvent

logger = logging.getLogger(__name__)


class ConnectionManager:
    """Debug subscribers of one server process, keyed by subscriber id."""

    def __init__(self):
        self.connections: Dict[str, WebSocket] = {}

    async def connect(self, subscriber_id: str, websocket: WebSocket):
        await websocket.accept()
        self.connections[subscriber_id] = websocket

    async def _send_json(self, subscriber_id: str, message: dict) -> bool:
        websocket = self.connections.get(subscriber_id)
        if websocket is None:
            return False
        try:
            await websocket.send_text(json.dumps(message, sort_keys=True))
            return True
        except Exception as e:
            logger.warning("failed to send %s to %s: %s", message.get("type"), subscriber_id, e)
            self.disconnect(subscriber_id)
            return False

    async def send_event(self, subscriber_id: str, event: TraceEvent) -> bool:
        """Send one trace event"""
        return await self._send_json(
            subscriber_id,
            {
                "type": "trace",
                "timestamp": datetime.now().isoformat(),
                "event": event.model_dump(mode="json", exclude_none=True),
            },
        )

    async def send_log(self, subscriber_id: str, level: str, message: str) -> bool:
        return await self._send_json(
            subscriber_id,
            {
                "type": "log",
                "timestamp": datetime.now().isoformat(),
                "level": level,  # "info", "warning", "error"
                "message": message,
            },
        )

    async def broadcast(self, event: TraceEvent) -> int:
        """Send a trace event to every subscriber; returns how many received it."""
        sent = 0
        for subscriber_id in list(self.connections):
            if await self.send_event(subscriber_id, event):
                sent += 1
        return sent

    def disconnect(self, subscriber_id: str):
        if subscriber_id in self.connections:
            del self.connections[subscriber_id]


manager = ConnectionManager()
