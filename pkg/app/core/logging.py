import logging
from pathlib import Path
from typing import Optional

from app.core.config import Settings, settings as default_settings

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def setup_logging(current: Optional[Settings] = None) -> None:
    """Configure the root logger from Settings (level and optional log file)"""
    current = current or default_settings
    handlers = [logging.StreamHandler()]

    if current.LOG_FILE:
        log_path = Path(current.LOG_FILE)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_path, encoding="utf-8"))

    logging.basicConfig(
        level=getattr(logging, current.LOG_LEVEL.upper(), logging.INFO),
        format=LOG_FORMAT,
        handlers=handlers,
        force=True,
    )
