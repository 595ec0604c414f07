# services/errors.py
from typing import Optional


class DobError(Exception):
    """Base error carrying a CLI exit code and a ``{"message": ...}`` detail."""

    exit_code = 1

    def __init__(self, message: str, exit_code: Optional[int] = None, **extra):
        super().__init__(message)
        if exit_code is not None:
            self.exit_code = exit_code
        self.detail = {"message": message, **extra}

    @property
    def message(self) -> str:
        return self.detail["message"]

    def __str__(self) -> str:
        return self.detail["message"]


class InvalidInputError(DobError):
    exit_code = 1


class DesignError(DobError):
    exit_code = 2


class ConditionFailure(DobError):
    exit_code = 3


class DivergenceError(DobError):
    exit_code = 4

    def __init__(self, time: float, norm: float):
        super().__init__(
            f"divergence at t={time:.6g} (state norm {norm:.3g})",
            time=time,
            norm=norm,
        )
        self.time = time
