"""Custom exceptions and error handling for the kochtype toolkit."""

from typing import Any, Dict, Optional
import structlog

logger = structlog.get_logger()


class KochTypeException(Exception):
    """Base exception for the kochtype toolkit."""

    def __init__(
        self,
        error_code: str,
        error_message: str,
        exit_code: int = 2,
        details: Optional[Dict[str, Any]] = None
    ):
        self.error_code = error_code
        self.error_message = error_message
        self.exit_code = exit_code
        self.details = details or {}
        super().__init__(error_message)


class GeometryError(KochTypeException):
    """Invalid geometric input (non-finite coordinates, degenerate segments, empty point sets)."""

    def __init__(self, error_message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(
            error_code="GEOM_001",
            error_message=error_message,
            exit_code=2,
            details=details
        )


class ScheduleError(KochTypeException):
    """Angle schedule out of range or not monotone along descent."""

    def __init__(self, error_message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(
            error_code="SCHED_001",
            error_message=error_message,
            exit_code=2,
            details=details
        )


class SpecParseError(KochTypeException):
    """Textual schedule spec could not be parsed."""

    def __init__(self, error_message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(
            error_code="PARSE_001",
            error_message=error_message,
            exit_code=2,
            details=details
        )


class InputFileError(KochTypeException):
    """Input document missing or malformed."""

    def __init__(self, error_message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(
            error_code="FILE_001",
            error_message=error_message,
            exit_code=2,
            details=details
        )


class ConstructionError(KochTypeException):
    """Request against a built tree that the tree cannot answer."""

    def __init__(self, error_message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(
            error_code="CONS_001",
            error_message=error_message,
            exit_code=2,
            details=details
        )


class DepthLimitError(KochTypeException):
    """Requested depth exceeds the configured guard."""

    def __init__(self, error_message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(
            error_code="DEPTH_001",
            error_message=error_message,
            exit_code=3,
            details=details
        )


class MethodMismatchError(KochTypeException):
    """Analysis method does not apply to the given schedule."""

    def __init__(self, error_message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(
            error_code="METHOD_001",
            error_message=error_message,
            exit_code=4,
            details=details
        )


class ResolutionError(KochTypeException):
    """Sample resolution too coarse for the smallest requested scale."""

    def __init__(self, error_message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(
            error_code="RES_001",
            error_message=error_message,
            exit_code=5,
            details=details
        )


def handle_kochtype_exception(exc: KochTypeException, command: Optional[str] = None) -> int:
    """Log a toolkit exception and return the process exit code."""
    logger.error(
        "KochType exception occurred",
        error_code=exc.error_code,
        error_message=exc.error_message,
        exit_code=exc.exit_code,
        details=exc.details,
        command=command
    )
    return exc.exit_code


def handle_general_exception(exc: Exception, command: Optional[str] = None) -> int:
    """Log an unexpected exception and return the generic failure code."""
    logger.error(
        "Unhandled exception occurred",
        error_code="INTERNAL_001",
        exception=str(exc),
        exception_type=type(exc).__name__,
        command=command
    )
    return 1
