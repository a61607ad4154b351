from __future__ import annotations

from typing import Any

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_NUMERIC = 2


class PhiShootError(Exception):
    def __init__(
        self,
        *,
        exit_code: int,
        code: str,
        message: str,
        details: dict[str, Any] | None = None,
    ) -> None:
        super().__init__(message)
        self.exit_code = exit_code
        self.code = code
        self.message = message
        self.details = details


class DomainError(PhiShootError):
    """An input violates a hypothesis of the problem (sign, range, structural condition)."""

    def __init__(self, *, code: str, message: str, details: dict[str, Any] | None = None) -> None:
        super().__init__(exit_code=EXIT_DOMAIN, code=code, message=message, details=details)


class ConfigError(DomainError):
    def __init__(self, *, message: str, details: dict[str, Any] | None = None) -> None:
        super().__init__(code="INVALID_CONFIG", message=message, details=details)


class NumericError(PhiShootError):
    def __init__(self, *, code: str, message: str, details: dict[str, Any] | None = None) -> None:
        super().__init__(exit_code=EXIT_NUMERIC, code=code, message=message, details=details)


class NotBracketedError(NumericError):
    def __init__(self, *, message: str, details: dict[str, Any] | None = None) -> None:
        super().__init__(code="NOT_BRACKETED", message=message, details=details)


class ShootingError(NumericError):
    """A level of the nodal ladder failed; ``partial`` holds every level completed before it."""

    def __init__(
        self,
        *,
        level: int,
        cause: PhiShootError,
        partial: Any,
    ) -> None:
        super().__init__(
            code=cause.code,
            message=f"Level {level} failed: {cause.message}",
            details={"level": level, **(cause.details or {})},
        )
        self.level = level
        self.cause = cause
        self.partial = partial
