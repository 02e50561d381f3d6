from causalmesh.websocket.manager import ConnectionManager, manager

__all__ = ["ConnectionManager", "manager"]
