import logging
import sys
import os
from typing import Optional
from pydantic import BaseModel

# Import colorlog for colored terminal output
try:
    import colorlog
    has_colorlog = True
except ImportError:
    has_colorlog = False


class LogConfig(BaseModel):
    """Logging configuration"""
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")
    LOG_FORMAT: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    USE_COLORS: bool = os.getenv("USE_COLORS", "true").lower() in ("true", "1", "yes")
    LOG_FILE: str = os.getenv("LOG_FILE", "")  # Empty means log to console only


def configure_logging(level: Optional[str] = None):
    """Configure logging for the CLI and the experiment service"""
    config = LogConfig()
    if level:
        config.LOG_LEVEL = level.upper()

    root_logger = logging.getLogger()
    root_logger.setLevel(config.LOG_LEVEL)

    # Remove existing handlers to avoid duplicate logs
    for handler in list(root_logger.handlers):
        root_logger.removeHandler(handler)

    formatter = logging.Formatter(config.LOG_FORMAT)
    if has_colorlog and config.USE_COLORS:
        color_formatter = colorlog.ColoredFormatter(
            "%(log_color)s" + config.LOG_FORMAT,
            log_colors={
                'DEBUG': 'cyan',
                'INFO': 'green',
                'WARNING': 'yellow',
                'ERROR': 'red',
                'CRITICAL': 'red,bg_white',
            },
            style='%'
        )
        console_handler = logging.StreamHandler(sys.stdout)
        console_handler.setFormatter(color_formatter)
    else:
        console_handler = logging.StreamHandler(sys.stdout)
        console_handler.setFormatter(formatter)

    root_logger.addHandler(console_handler)

    if config.LOG_FILE:
        file_handler = logging.FileHandler(config.LOG_FILE)
        file_handler.setFormatter(formatter)
        root_logger.addHandler(file_handler)

    # Silence noisy loggers
    for logger_name in ["uvicorn.access", "httpx", "asyncio"]:
        logging.getLogger(logger_name).setLevel(logging.WARNING)

    logging.getLogger(__name__).debug(f"Logging configured with level: {config.LOG_LEVEL}")
    if config.LOG_FILE:
        logging.getLogger(__name__).info(f"Logging to file: {config.LOG_FILE}")

    return root_logger
