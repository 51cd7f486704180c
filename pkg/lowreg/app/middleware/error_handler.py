"""
Exception to exit-status handling for the command line
"""
import traceback
from datetime import datetime
from typing import Any, Dict, Optional

import structlog

from app.core.exceptions import ConfigValidationError, LowRegError

logger = structlog.get_logger()

ERROR_EXIT_STATUS = 2


def error_record(exc: LowRegError) -> Dict[str, Any]:
    """Structured error record of a toolkit exception"""
    return {
        "code": exc.code,
        "message": exc.message,
        "details": exc.details,
        "timestamp": datetime.utcnow().isoformat(),
    }


def lowreg_exception_handler(exc: LowRegError, context: Optional[Dict[str, Any]] = None) -> int:
    """
    Log a toolkit error with the experiment context and return its exit status
    """
    context = context or {}
    if isinstance(exc, ConfigValidationError):
        logger.warning("Configuration rejected", errors=exc.errors, **context)
    logger.error("Experiment failed", **error_record(exc), **context)
    return exc.exit_status


def general_exception_handler(exc: Exception, context: Optional[Dict[str, Any]] = None) -> int:
    """
    Handle uncaught exceptions
    """
    error_id = datetime.utcnow().timestamp()
    logger.error(
        "Unhandled exception",
        error_id=error_id,
        error=str(exc),
        type=exc.__class__.__name__,
        traceback=traceback.format_exc(),
        **(context or {}),
    )
    return ERROR_EXIT_STATUS


def handle_exception(exc: BaseException, context: Optional[Dict[str, Any]] = None) -> int:
    """Dispatch to the matching handler"""
    if isinstance(exc, LowRegError):
        return lowreg_exception_handler(exc, context)
    return general_exception_handler(exc, context)
