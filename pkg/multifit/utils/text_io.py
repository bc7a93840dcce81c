"""UTF-8 file access shared by the readers and writers. OS and decoding
failures surface as domain errors naming the file (and line when known)."""
from pathlib import Path

from multifit.exception import DataError, IngestionError, MultiFitException
from multifit.logger import GLOBAL_LOGGER as log


def read_utf8(path: str | Path, error: type[MultiFitException] = DataError) -> str:
    """Whole file as text. Undecodable bytes name their line; data files raise
    ``IngestionError``, other callers get ``error`` with the line in the message."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        log.error("File not readable", path=str(path), error=str(e))
        raise error(f"cannot read {path}: {e.strerror or e}", error_details=e) from e
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as e:
        line = raw.count(b"\n", 0, e.start) + 1
        log.error("Invalid UTF-8", path=str(path), line=line, offset=e.start)
        message = f"{path} is not valid UTF-8 (byte offset {e.start})"
        if issubclass(error, DataError):
            raise IngestionError(message, line=line, error_details=e) from e
        raise error(f"line {line}: {message}", error_details=e) from e


def write_utf8(path: str | Path, text: str) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        log.error("File not writable", path=str(path), error=str(e))
        raise DataError(f"cannot write {path}: {e.strerror or e}", error_details=e) from e
    return path
