"""
Structured logging for simulations and experiments.

Every message carries `key=value` context; numeric values are rendered
compactly so long sweeps stay readable. Handlers write to stderr so the
JSON reports printed on stdout stay machine readable.
"""

import functools
import logging
import sys
import time
from numbers import Real
from pathlib import Path
from typing import Any, Callable, Dict, Optional

import numpy as np

from config.loader import config

_LEVEL_OVERRIDE: Optional[int] = None
_ROOTS = ("core", "pipeline", "cli", "tools")

CONSOLE_FORMAT = '%(asctime)s | %(name)s | %(levelname)s | %(message)s'
FILE_FORMAT = '%(asctime)s | %(name)s | %(levelname)s | %(funcName)s:%(lineno)d | %(message)s'


def set_global_level(level: int) -> None:
    """Force one level on every toolkit logger, existing and future (CLI --quiet)."""
    global _LEVEL_OVERRIDE
    _LEVEL_OVERRIDE = level
    for name in list(logging.root.manager.loggerDict):
        if name.split('.', 1)[0] in _ROOTS:
            logging.getLogger(name).setLevel(level)


def _configured_level() -> int:
    if _LEVEL_OVERRIDE is not None:
        return _LEVEL_OVERRIDE
    return getattr(logging, str(config.get('logging.level', 'INFO')).upper(), logging.INFO)


def format_value(value: Any) -> str:
    """Compact rendering of a context value: 6 significant digits for reals, shape for arrays."""
    if isinstance(value, np.ndarray):
        if value.size <= 4:
            return "[" + ", ".join(format_value(v) for v in value.ravel()) + "]"
        return f"array{value.shape}"
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, Real):
        return f"{float(value):.6g}"
    if isinstance(value, complex):
        return f"{value.real:.6g}{value.imag:+.6g}j"
    return str(value)


class ServiceLogger:
    """A named logger with key=value context and operation timing."""

    def __init__(self, service_name: str, subsystem: Optional[str] = None):
        self.service_name = service_name
        self.subsystem = subsystem
        self.logger = self._build()
        self._started: Dict[str, tuple] = {}

    def _build(self) -> logging.Logger:
        name = f"{self.subsystem}.{self.service_name}" if self.subsystem else self.service_name
        logger = logging.getLogger(name)
        logger.setLevel(_configured_level())
        logger.propagate = False
        logger.handlers.clear()

        console = logging.StreamHandler(sys.stderr)
        console.setFormatter(logging.Formatter(CONSOLE_FORMAT, datefmt='%Y-%m-%d %H:%M:%S'))
        logger.addHandler(console)

        if config.get('logging.to_file', False):
            logs_dir = Path(config.get('paths.logs', './logs'))
            try:
                logs_dir.mkdir(parents=True, exist_ok=True)
            except OSError as e:
                print(f"Warning: cannot create log directory {logs_dir}: {e}", file=sys.stderr)
            else:
                file_handler = logging.FileHandler(logs_dir / f"{self.service_name}.log")
                file_handler.setFormatter(logging.Formatter(FILE_FORMAT))
                logger.addHandler(file_handler)
        return logger

    def _emit(self, level: int, message: str, context: Dict[str, Any]):
        if not self.logger.isEnabledFor(level):
            return
        if context:
            message = message + " | " + " | ".join(f"{k}={format_value(v)}" for k, v in context.items())
        self.logger.log(level, message)

    def debug(self, message: str, **context):
        self._emit(logging.DEBUG, message, context)

    def info(self, message: str, **context):
        self._emit(logging.INFO, message, context)

    def warning(self, message: str, **context):
        self._emit(logging.WARNING, message, context)

    def error(self, message: str, **context):
        self._emit(logging.ERROR, message, context)

    def start_operation(self, operation: str) -> str:
        op_id = f"{operation}_{time.perf_counter_ns()}"
        self._started[op_id] = (operation, time.perf_counter())
        self.debug(f"Started {operation}", operation_id=op_id)
        return op_id

    def end_operation(self, op_id: str, success: bool = True, **metrics) -> Optional[float]:
        """Log the elapsed time of a started operation; returns seconds, or None if unknown."""
        if op_id not in self._started:
            self.warning(f"Operation {op_id} was never started")
            return None
        operation, started = self._started.pop(op_id)
        seconds = time.perf_counter() - started
        verb = "Completed" if success else "Failed"
        self.info(f"{verb} {operation} in {seconds:.2f}s", **metrics)
        return seconds

    def log_error_with_context(self, error: Exception, operation: Optional[str] = None, **context):
        self.error(f"Error in {operation or 'operation'}: {error}",
                   error_type=type(error).__name__, **context)


def timed_operation(operation_name: Optional[str] = None):
    """Time a function with the pipeline logger; failures are logged and re-raised."""
    def decorator(func: Callable) -> Callable:
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            logger = get_pipeline_logger(func.__module__.rsplit('.', 1)[-1])
            name = operation_name or func.__name__
            op_id = logger.start_operation(name)
            try:
                result = func(*args, **kwargs)
            except Exception as e:
                logger.end_operation(op_id, success=False, error=type(e).__name__)
                logger.log_error_with_context(e, operation=name)
                raise
            logger.end_operation(op_id)
            return result
        return wrapper
    return decorator


def get_service_logger(service_name: str, subsystem: Optional[str] = None) -> ServiceLogger:
    return ServiceLogger(service_name, subsystem)


def get_core_logger(service_name: str) -> ServiceLogger:
    """Logger for the numerical core (kernel, dynamics, spectrum, oracle)."""
    return ServiceLogger(service_name, "core")


def get_pipeline_logger(service_name: str) -> ServiceLogger:
    return ServiceLogger(service_name, "pipeline")


def get_cli_logger(service_name: str = "main_cli") -> ServiceLogger:
    return ServiceLogger(service_name, "cli")
