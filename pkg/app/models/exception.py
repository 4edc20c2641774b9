import traceback
from typing import Any

from loguru import logger

from app.models import const


class JumpgenException(Exception):
    status_code = const.EXIT_VERDICT_FAILED
    log_level = "ERROR"

    def __init__(self, message: str = "", data: Any = None, status_code: int = None):
        super().__init__(message)
        self.message = message
        self.data = data
        if status_code is not None:
            self.status_code = status_code

        tb_str = traceback.format_exc().strip()
        name = self.__class__.__name__
        if not tb_str or tb_str == "NoneType: None":
            msg = f"{name}: {self.status_code}, {message}"
        else:
            msg = f"{name}: {self.status_code}, {message}\n{tb_str}"
        logger.log(self.log_level, msg)


class ParameterError(JumpgenException, ValueError):
    log_level = "DEBUG"


class GridMismatchError(ParameterError):
    pass


class KernelResolutionError(JumpgenException):
    log_level = "WARNING"


class MgfUnreliableError(JumpgenException):
    log_level = "DEBUG"


class ConvergenceError(JumpgenException):
    pass


class NegativeValueError(JumpgenException):
    pass


class FitError(JumpgenException):
    log_level = "WARNING"


class ConfigError(JumpgenException):
    status_code = const.EXIT_USAGE
    log_level = "WARNING"
