from structlog.contextvars import bind_contextvars, clear_contextvars

from .custom_logger import CustomLogger

# shared by every module as ``log``
GLOBAL_LOGGER = CustomLogger().get_logger("multifit")

__all__ = ["CustomLogger", "GLOBAL_LOGGER", "bind_contextvars", "clear_contextvars"]
