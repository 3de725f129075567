"""kochtype command-line entry point."""

import argparse
import logging
import sys
from typing import Dict, List, Optional

import structlog

from kochtype.config import settings
from kochtype.exceptions import (
    KochTypeException,
    SpecParseError,
    handle_general_exception,
    handle_kochtype_exception,
)
from kochtype.models import ErrorResponse, RunConfig
from kochtype.routes.commands import add_command_parsers

logger = structlog.get_logger()

OVERRIDABLE = (
    "geometric_tolerance",
    "ball_boundary_tolerance",
    "containment_slack",
    "angle_tolerance",
    "moran_tolerance",
    "product_increment_tolerance",
    "resolution_factor",
)


def configure_logging(level: Optional[str] = None) -> None:
    """Configure structured JSON logging on stderr."""
    logging.basicConfig(format="%(message)s", stream=sys.stderr, level=(level or settings.log_level).upper(), force=True)
    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.stdlib.PositionalArgumentsFormatter(),
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            structlog.processors.UnicodeDecoder(),
            structlog.processors.JSONRenderer()
        ],
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=True,
    )


def parse_overrides(pairs: Optional[List[str]]) -> Dict[str, float]:
    """Parse --tol name=value pairs against the overridable settings."""
    overrides: Dict[str, float] = {}
    for pair in pairs or []:
        name, sep, raw = pair.partition("=")
        if not sep or name not in OVERRIDABLE:
            raise SpecParseError(f"Unknown tolerance override '{pair}'", details={"allowed": list(OVERRIDABLE)})
        try:
            overrides[name] = float(raw)
        except ValueError:
            raise SpecParseError(f"Tolerance override '{pair}' is not a number", details={"override": pair})
    return overrides


def apply_overrides(overrides: Dict[str, float]) -> None:
    for name, value in overrides.items():
        setattr(settings, name, value)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kochtype", description="Koch-type fractal construction, analysis and property checks")
    parser.add_argument("--log-level", default=None, help="Logging level (default from KOCHTYPE_LOG_LEVEL)")
    parser.add_argument("--seed", type=int, default=settings.seed, help="Seed for every sampler")
    parser.add_argument("--tol", action="append", help="Tolerance override name=value")
    subparsers = parser.add_subparsers(dest="command", required=True)
    add_command_parsers(subparsers)
    return parser


def run_config(args: argparse.Namespace, overrides: Dict[str, float]) -> RunConfig:
    outputs = {k: v for k, v in (("out", getattr(args, "out", None)), ("csv", getattr(args, "csv", None)), ("json", getattr(args, "json", None))) if v}
    return RunConfig(
        command=args.command,
        schedule=getattr(args, "schedule", None),
        depth=getattr(args, "depth", None),
        outputs=outputs,
        seed=args.seed,
        tolerance_overrides=overrides
    )


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)

    try:
        overrides = parse_overrides(args.tol)
        apply_overrides(overrides)
        config = run_config(args, overrides)
        logger.info("Running command", **config.model_dump())
        code = args.handler(args)
        logger.info("Command finished", command=args.command, exit_code=code)
        return code
    except KochTypeException as exc:
        sys.stderr.write(ErrorResponse(error_code=exc.error_code, error_message=exc.error_message).model_dump_json() + "\n")
        return handle_kochtype_exception(exc, args.command)
    except Exception as exc:
        sys.stderr.write(ErrorResponse(error_code="INTERNAL_001", error_message=str(exc)).model_dump_json() + "\n")
        return handle_general_exception(exc, args.command)


if __name__ == "__main__":
    sys.exit(main())
