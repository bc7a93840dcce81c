import logging
import os
import sys
from datetime import datetime

import structlog

LOG_DIR_ENV = "MULTIFIT_LOG_DIR"
LOG_LEVEL_ENV = "MULTIFIT_LOG_LEVEL"


class CustomLogger:
    """JSON-lines logging to stderr and to one timestamped file per process.

    Context bound with ``structlog.contextvars.bind_contextvars`` (the cli binds
    the subcommand and seed) is merged into every record.
    """

    def __init__(self, log_dir: str | None = None, level: str | None = None):
        log_dir = log_dir or os.getenv(LOG_DIR_ENV, "logs")
        self.logs_dir = os.path.join(os.getcwd(), log_dir)
        os.makedirs(self.logs_dir, exist_ok=True)
        self.level = logging.getLevelName((level or os.getenv(LOG_LEVEL_ENV, "INFO")).upper())
        if not isinstance(self.level, int):
            self.level = logging.INFO

        # pid keeps concurrent runs started in the same second apart
        log_file = f"{datetime.now().strftime('%m_%d_%Y_%H_%M_%S')}_{os.getpid()}.log"
        self.log_file_path = os.path.join(self.logs_dir, log_file)

    def get_logger(self, name=__file__):
        logger_name = os.path.basename(name)

        std_logger = logging.getLogger(logger_name)
        std_logger.setLevel(self.level)
        std_logger.propagate = False
        if not std_logger.handlers:
            for handler in (logging.StreamHandler(sys.stderr), logging.FileHandler(self.log_file_path)):
                handler.setLevel(self.level)
                handler.setFormatter(logging.Formatter("%(message)s"))
                std_logger.addHandler(handler)

        structlog.configure(
            processors=[
                structlog.contextvars.merge_contextvars,
                structlog.processors.TimeStamper(fmt="iso", utc=True, key="timestamp"),
                structlog.processors.add_log_level,
                structlog.processors.EventRenamer(to="event"),
                structlog.processors.JSONRenderer(),
            ],
            logger_factory=structlog.stdlib.LoggerFactory(),
            cache_logger_on_first_use=True,
        )

        return structlog.get_logger(logger_name)
