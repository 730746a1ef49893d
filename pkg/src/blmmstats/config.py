LOG_FORMAT = "%(asctime)s [%(levelname)-7s] %(name)-35s %(message)s"


def logging_config(level: str = "INFO", stream: str = "ext://sys.stderr") -> dict:
    """
    `dictConfig` dictionary: one console handler on `stream` shared by the root logger at INFO and the `blmmstats`
    logger at `level`. Result tables go to files, so logs default to stderr.
    """
    console = {"handlers": ["console"]}
    return {
        "version": 1,
        "disable_existing_loggers": False,
        "formatters": {"standard": {"class": "logging.Formatter", "format": LOG_FORMAT}},
        "handlers": {"console": {"class": "logging.StreamHandler", "formatter": "standard", "stream": stream}},
        "loggers": {"blmmstats": {**console, "level": level.upper(), "propagate": False}},
        "root": {**console, "level": "INFO"},
    }
