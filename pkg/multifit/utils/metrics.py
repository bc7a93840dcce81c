import json
import math
import time
from typing import IO, Any

from multifit.exception import ContractError

REQUIRED_FIELDS = ("stage", "step", "split")
FIELD_ORDER = ("stage", "epoch", "step", "split", "loss", "perplexity", "accuracy", "lr", "momentum", "wallclock_ms")


def emit_metrics(stream: IO[str] | None, record: dict[str, Any]) -> str:
    """Append ``record`` as one JSON line to ``stream`` and return the line.

    Records with a perplexity must satisfy perplexity == exp(loss).
    """
    missing = [k for k in REQUIRED_FIELDS if k not in record]
    if missing:
        raise ContractError(f"metrics record lacks {missing}")
    if record.get("perplexity") is not None and record.get("loss") is not None:
        expected = math.exp(record["loss"])
        if not math.isclose(record["perplexity"], expected, rel_tol=1e-9):
            raise ContractError(f"perplexity {record['perplexity']} inconsistent with loss {record['loss']}")
    ordered = {k: record[k] for k in FIELD_ORDER if k in record}
    ordered.update({k: v for k, v in record.items() if k not in ordered})
    line = json.dumps(ordered, ensure_ascii=False)
    if stream is not None:
        stream.write(line + "\n")
    return line


class MetricsLog:
    """Metrics of one run: every record gets a monotone ``wallclock_ms``.

    The stream (if any) is flushed once per epoch by ``flush``.
    """

    def __init__(self, stream: IO[str] | None = None, config: dict[str, str] | None = None):
        self.stream = stream
        self.records: list[dict[str, Any]] = []
        self._start = time.perf_counter()
        self._last_ms = 0.0
        if stream is not None and config:
            # effective config echoed as the first line of the stream
            emit_metrics(stream, {"stage": "config", "step": 0, "split": "none", "config": config})

    def emit(self, **record: Any) -> dict[str, Any]:
        elapsed = (time.perf_counter() - self._start) * 1000.0
        self._last_ms = max(self._last_ms, elapsed)
        record["wallclock_ms"] = round(self._last_ms, 3)
        emit_metrics(self.stream, record)
        self.records.append(record)
        return record

    def flush(self) -> None:
        if self.stream is not None:
            self.stream.flush()
