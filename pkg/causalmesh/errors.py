"""Exception hierarchy shared by the protocol, the simulator and the CLI."""

from typing import Optional


class CausalMeshError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(CausalMeshError, ValueError):
    """Bad configuration: clock width mismatch, index out of range, invalid workload or fault settings."""


class KeyMismatchError(CausalMeshError, ValueError):
    """Two versions of different keys were asked to be resolved."""


class ProtocolInvariantError(CausalMeshError, RuntimeError):
    """A state the protocol promises cannot be reached."""


class UnsatisfiableDependencyError(ProtocolInvariantError):
    """A dependency is neither in the C-cache nor in the I-cache of a server."""

    def __init__(self, key: str, vc: tuple, server: Optional[int] = None):
        self.key = key
        self.vc = tuple(vc)
        self.server = server
        where = f" at S{server}" if server is not None else ""
        super().__init__(f"unsatisfiable dependency {key}@{list(self.vc)}{where}")


class NotFoundError(CausalMeshError, KeyError):
    """Key absent from the cluster and from the backing store."""

    def __str__(self) -> str:
        return f"key not found: {self.args[0] if self.args else '?'}"


class TransactionAborted(CausalMeshError):
    """Read transaction or TCC read could not be served from one causal cut."""

    def __init__(self, reason: str, key: Optional[str] = None):
        self.reason = reason
        self.key = key
        super().__init__(reason if key is None else f"{reason} (key={key})")


class FrameDecodeError(CausalMeshError, ValueError):
    """A wire frame could not be decoded."""


class TraceFormatError(CausalMeshError, ValueError):
    """A trace or snapshot file is malformed."""


class SessionDecodeError(CausalMeshError, ValueError):
    """A migrated session blob could not be decoded."""
