import logging
from pathlib import Path

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(message)s"


class RunLogHandler(logging.Handler):
    """Logging handler that keeps formatted entries of one run in memory."""

    def __init__(self, level=logging.NOTSET):
        super().__init__(level)
        self.entries: list[str] = []

    def emit(self, record):
        log_entry = self.format(record)
        self.entries.append(log_entry)

    def dump(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(self.entries) + "\n", encoding="utf-8")
        return path


# Logging initialisieren
def setup_logger(level: int | str = logging.INFO) -> tuple[logging.Logger, RunLogHandler]:
    """Initialises the package logger and returns it together with its run-log handler."""
    logger = logging.getLogger("evobagging")
    logger.setLevel(level)

    # Handlers from an earlier call in the same process would duplicate lines
    for handler in list(logger.handlers):
        logger.removeHandler(handler)

    formatter = logging.Formatter(LOG_FORMAT)

    stream_handler = logging.StreamHandler()
    stream_handler.setFormatter(formatter)
    logger.addHandler(stream_handler)

    run_handler = RunLogHandler()
    run_handler.setFormatter(formatter)
    logger.addHandler(run_handler)

    logger.propagate = False
    return logger, run_handler
