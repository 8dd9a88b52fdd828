import os
import logging
from typing import Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field

# Initialize logger for this module
logger = logging.getLogger(__name__)

load_dotenv()

_settings_instance: Optional["Settings"] = None


class Settings(BaseModel):
    """Process-wide settings read from the environment."""
    output_dir: str = Field(default_factory=lambda: os.getenv("METALR_OUTPUT_DIR", "runs"))
    workers: int = Field(default_factory=lambda: int(os.getenv("METALR_WORKERS", "1")), ge=1)


def get_settings() -> Settings:
    """
    Returns a singleton Settings instance, initializing if necessary.
    """
    global _settings_instance
    if _settings_instance is None:
        _settings_instance = Settings()
        logger.debug(f"Settings loaded: {_settings_instance.model_dump()}")
    return _settings_instance
