import logging
import os
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

OUT_DIR = Path(os.getenv("DOCCODER_OUT_DIR", "."))
THREADS = max(1, int(os.getenv("DOCCODER_THREADS", "1")))
LOG_LEVEL = os.getenv("DOCCODER_LOG_LEVEL", "INFO").upper()

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level: str | None = None) -> None:
    root = logging.getLogger()
    root.handlers.clear()
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(handler)
    root.setLevel(level or LOG_LEVEL)


def progress_disabled() -> bool:
    """tqdm bars are shown only when INFO records would be."""
    return logging.getLogger().getEffectiveLevel() > logging.INFO


def resolve_out(path: str | Path) -> Path:
    """Bare names land under DOCCODER_OUT_DIR; anything with a directory part is kept."""
    path = Path(path)
    if path.is_absolute() or path.parent != Path("."):
        return path
    return OUT_DIR / path
