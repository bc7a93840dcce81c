import sys
import traceback
from typing import Optional, cast


class MultiFitException(Exception):
    # process exit code used by the cli for this failure class
    exit_code = 1

    def __init__(self, error_message, error_details: Optional[object] = None):
        norm_msg = str(error_message)

        # Resolve exc_info (supports: sys module, Exception object, or current context)
        exc_type = exc_value = exc_tb = None
        if error_details is None:
            exc_type, exc_value, exc_tb = sys.exc_info()
        else:
            if hasattr(error_details, "exc_info"):  # e.g., sys
                exc_info_obj = cast(sys, error_details)
                exc_type, exc_value, exc_tb = exc_info_obj.exc_info()
            elif isinstance(error_details, BaseException):
                exc_type, exc_value, exc_tb = type(error_details), error_details, error_details.__traceback__
            else:
                exc_type, exc_value, exc_tb = sys.exc_info()

        # Walk to the last frame to report the most relevant location
        last_tb = exc_tb
        while last_tb and last_tb.tb_next:
            last_tb = last_tb.tb_next

        if last_tb:
            self.file_name = last_tb.tb_frame.f_code.co_filename
            self.lineno = last_tb.tb_lineno
        else:
            # Raised directly, not while handling: report the raising frame
            frame = sys._getframe(1)
            while frame.f_back and frame.f_code.co_name == "__init__":
                frame = frame.f_back
            self.file_name = frame.f_code.co_filename
            self.lineno = frame.f_lineno
        self.error_message = norm_msg

        if exc_type and exc_tb:
            self.traceback_str = ''.join(traceback.format_exception(exc_type, exc_value, exc_tb))
        else:
            self.traceback_str = ""

        super().__init__(self.__str__())

    def __str__(self):
        base = f"Error in [{self.file_name}] at line [{self.lineno}] | Message: {self.error_message}"
        if self.traceback_str:
            return f"{base}\nTraceback:\n{self.traceback_str}"
        return base

    def __repr__(self):
        return f"{type(self).__name__}(file={self.file_name!r}, line={self.lineno}, message={self.error_message!r})"


class ConfigError(MultiFitException):
    """Invalid hyperparameters or configuration keys/values."""
    exit_code = 1


class ContractError(MultiFitException):
    """A documented precondition of an operation was violated by the caller."""
    exit_code = 1


class DimensionError(ContractError):
    pass


class DataError(MultiFitException):
    """Input data is missing, too short, or inconsistent with the task."""
    exit_code = 2


class IngestionError(DataError):
    def __init__(self, error_message, line: int | None = None, error_details: Optional[object] = None):
        self.line = line
        if line is not None:
            error_message = f"line {line}: {error_message}"
        super().__init__(error_message, error_details)


class TransferError(DataError):
    def __init__(self, error_message, fields: list[str] | None = None, error_details: Optional[object] = None):
        self.fields = list(fields or [])
        if self.fields:
            error_message = f"{error_message} (differing fields: {', '.join(self.fields)})"
        super().__init__(error_message, error_details)


class CheckpointError(DataError):
    pass


class BadMagicError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


class NumericError(MultiFitException):
    """A forward op produced NaN/Inf; the training step is aborted."""
    exit_code = 3
