# causalmesh/config.py
import logging
import os

from dotenv import load_dotenv

load_dotenv()

LOG_ENV = "CAUSALMESH_LOG"
DEFAULT_LOG_LEVEL = "WARNING"

# Peer connection retry settings for the TCP runner
CONNECT_RETRIES = int(os.getenv("CAUSALMESH_CONNECT_RETRIES", "20"))
CONNECT_BACKOFF = float(os.getenv("CAUSALMESH_CONNECT_BACKOFF", "0.05"))
MAX_BACKOFF = 2.0

# Protocol / harness defaults
DEFAULT_RING_CAPACITY = 1
DEFAULT_TCC_RETRY_LIMIT = 10
DEFAULT_TXN_RETRY_LIMIT = 10
DEFAULT_STEP_BUDGET = 5_000_000

_configured = False


def log_level() -> int:
    """Resolve the level named by CAUSALMESH_LOG, falling back to WARNING."""
    name = (os.getenv(LOG_ENV) or DEFAULT_LOG_LEVEL).strip().upper()
    level = logging.getLevelName(name)
    return level if isinstance(level, int) else logging.WARNING


def setup_logging(level: int | None = None) -> None:
    """Configure the root handler once. Safe to call repeatedly."""
    global _configured
    if _configured:
        if level is not None:
            logging.getLogger().setLevel(level)
        return
    logging.basicConfig(
        level=level if level is not None else log_level(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    _configured = True
