"""
Logging Configuration
"""

import copy
import logging
import logging.config
from pathlib import Path
from typing import Optional, Union

LOGGING_CONFIG = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "default": {
            "format": "%(message)s",
            "datefmt": "[%X]"
        },
        "detailed": {
            "format": "%(asctime)s - %(name)s - %(levelname)s - %(funcName)s:%(lineno)d - %(message)s"
        }
    },
    "handlers": {
        "console": {
            "class": "rich.logging.RichHandler",
            "level": "INFO",
            "formatter": "default",
            "rich_tracebacks": True,
            "show_path": False
        },
        "file": {
            "class": "logging.handlers.RotatingFileHandler",
            "level": "DEBUG",
            "formatter": "detailed",
            "filename": "logs/lr2.log",
            "maxBytes": 10485760,
            "backupCount": 5
        }
    },
    "loggers": {
        "": {
            "level": "DEBUG",
            "handlers": ["console", "file"]
        }
    }
}


def setup_logging(log_dir: Optional[Union[str, Path]] = None, level: str = "INFO"):
    """Setup logging configuration

    The file handler is only installed when a log directory is given, so
    library use and tests never touch the filesystem.
    """
    config = copy.deepcopy(LOGGING_CONFIG)
    config["handlers"]["console"]["level"] = level.upper()

    if log_dir is None:
        del config["handlers"]["file"]
        config["loggers"][""]["handlers"] = ["console"]
        config["loggers"][""]["level"] = level.upper()
    else:
        log_path = Path(log_dir)
        log_path.mkdir(parents=True, exist_ok=True)
        config["handlers"]["file"]["filename"] = str(log_path / "lr2.log")

    logging.config.dictConfig(config)
