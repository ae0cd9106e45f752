import logging
import logging.handlers
import os
from typing import Optional


FILE_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
CONSOLE_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'


def setup_logger(name: str = 'src', log_dir: Optional[str] = 'logs',
                 level: str = 'INFO') -> logging.Logger:
    """
    Configure a logger with a rotating log file and a console handler.

    Calling it again for the same name replaces the handlers instead of
    stacking duplicates.

    Args:
        name (str): Logger name, usually the package root so every module logger inherits it
        log_dir (Optional[str]): Directory for the rotating log file, None to log to console only
        level (str): Console log level

    Returns:
        logging.Logger: The configured logger
    """
    logger = logging.getLogger(name)
    logger.setLevel(logging.DEBUG)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    if log_dir:
        os.makedirs(log_dir, exist_ok=True)
        log_file = os.path.join(log_dir, f'{name}.log')
        file_handler = logging.handlers.RotatingFileHandler(
            log_file,
            maxBytes=10485760,  # 10MB
            backupCount=5
        )
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(logging.Formatter(FILE_FORMAT))
        logger.addHandler(file_handler)

    # stderr, stdout carries the JSON envelopes
    console_handler = logging.StreamHandler()
    console_handler.setLevel(getattr(logging, level.upper(), logging.INFO))
    console_handler.setFormatter(logging.Formatter(CONSOLE_FORMAT))
    logger.addHandler(console_handler)
    logger.propagate = False

    return logger
