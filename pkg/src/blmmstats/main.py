import argparse
import logging
import logging.config
from pathlib import Path
from typing import List, Optional, Type

from pydantic import BaseModel, ValidationError
from pyparsing import ParseException

from .cli import COMMANDS, Settings, execute
from .config import logging_config
from .prometheus import write_metrics
from .toolkit.errors import EXIT_INPUT, EXIT_OK, BlmmError
from .toolkit.parser import Parser

_logger = logging.getLogger("blmmstats")


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_model_arguments(parser: argparse.ArgumentParser, model: Type[BaseModel]) -> None:
    """One flag per field of the run configuration, values are validated by the model, not by argparse."""
    for name, info in model.model_fields.items():
        if info.annotation is bool:
            parser.add_argument(
                _flag(name),
                dest=name,
                action=argparse.BooleanOptionalAction,
                default=argparse.SUPPRESS,
                help=info.description,
            )
        else:
            parser.add_argument(
                _flag(name), dest=name, default=argparse.SUPPRESS, metavar=name.upper(), help=info.description
            )


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="Flat `key = value` file, flags override its entries.")
    common.add_argument("--log-level", default=argparse.SUPPRESS, help="Level of the `blmmstats` logger.")
    common.add_argument("--metrics-file", default=argparse.SUPPRESS, help="Write prometheus metrics here at exit.")

    parser = argparse.ArgumentParser(
        prog="blmmstats",
        description="Bayes factors of linear mixed models for SNP scans, SNP set tests and fine mapping.",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    for name, (model, _) in COMMANDS.items():
        summary = model.__doc__.strip().splitlines()[0]
        sub = commands.add_parser(name, parents=[common], help=summary, description=summary)
        _add_model_arguments(sub, model)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Command line entry point, returns the process exit code: 0 success, 2 invalid input, 3 numerical failure,
    4 failure of the numerical integration oracle.
    """
    settings = Settings()
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    config_path = args.pop("config")
    metrics_file = settings.metrics_file
    try:
        values = {}
        if config_path is not None:
            entries = Parser.parse_config(Path(config_path).read_text(encoding="utf-8"))
            values.update({k.replace("-", "_"): v for k, v in entries.items()})
        values.update(args)
        metrics_file = values.pop("metrics_file", metrics_file)
        logging.config.dictConfig(logging_config(values.pop("log_level", settings.log_level)))
        values.setdefault("threads", settings.threads)
        config = COMMANDS[command][0](**values)
        _logger.info(f"Running [{command}] with {', '.join(config.echo(command)[1:])}")
        execute(command, config)
        return EXIT_OK
    except BlmmError as e:
        _logger.error(f"Command [{command}] failed because of {e}")
        return e.exit_code
    except (ValidationError, ParseException, OSError, ValueError) as e:
        _logger.error(f"Invalid input of [{command}]: {e}")
        return EXIT_INPUT
    finally:
        if metrics_file:
            write_metrics(metrics_file)


if __name__ == "__main__":
    raise SystemExit(main())
