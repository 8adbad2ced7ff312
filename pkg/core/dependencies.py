import logging
from pathlib import Path
from typing import List

from fastapi import HTTPException

from core.config import settings

logger = logging.getLogger(__name__)


def setup_logging() -> None:
    """Setup application logging"""
    handlers: List[logging.Handler] = [logging.StreamHandler()]
    if settings.log_file:
        handlers.append(logging.FileHandler(settings.log_file))
    logging.basicConfig(
        level=getattr(logging, settings.log_level.upper(), logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=handlers
    )


def get_artifacts_dir() -> Path:
    """Run directory the API reads from; 404 until a search has written into it"""
    path = Path(settings.artifacts_dir)
    if not path.is_dir():
        raise HTTPException(status_code=404, detail=f"No search artifacts at {path}")
    return path
