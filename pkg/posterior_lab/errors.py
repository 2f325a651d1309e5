"""Exception types shared across the package."""

from __future__ import annotations


class PosteriorLabError(Exception):
    """Base class for errors raised by posterior_lab."""


class ConfigError(PosteriorLabError, ValueError):
    """Invalid experiment configuration; `field` is the dotted path of the offending field."""

    def __init__(self, message: str, *, field: str | None = None) -> None:
        super().__init__(message)
        self.field = field


class NumericalError(PosteriorLabError, ArithmeticError):
    """Numerical failure with module and step context."""

    def __init__(self, message: str, *, module: str, step: int | None = None) -> None:
        super().__init__(message)
        self.module = module
        self.step = step


class WhamError(NumericalError):
    """WHAM could not produce a profile (disconnected windows or no convergence)."""

    def __init__(
        self,
        message: str,
        *,
        groups: list[list[int]] | None = None,
        residual: float | None = None,
        step: int | None = None,
    ) -> None:
        super().__init__(message, module="umbrella", step=step)
        self.groups = groups
        self.residual = residual
