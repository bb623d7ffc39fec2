"""Structured errors for latentveil.

Every distinct failure state has its own class so callers (and the CLI's
one-line error output) can tell them apart without parsing messages.
"""
from __future__ import annotations

from typing import TYPE_CHECKING, Optional

if TYPE_CHECKING:
    from .inversion.search import InversionResult


class LatentVeilError(Exception):
    """Root of every error raised by this package."""


# ---- image-core -------------------------------------------------------------

class ImageFormatError(LatentVeilError, ValueError):
    """PNG has an unsupported color mode, bit depth, or an alpha channel."""


class ImageIOError(LatentVeilError, OSError):
    """Image file is missing or the target path is not writable."""

    def __init__(self, message: str, *, path: Optional[str] = None) -> None:
        super().__init__(message)
        self.path = path


class ImageShapeError(LatentVeilError, ValueError):
    """Image dimensions violate a size constraint."""


# ---- shapes & parameters ----------------------------------------------------

class ShapeError(LatentVeilError, ValueError):
    """Array shapes are inconsistent (latents, features, upstream gradients)."""


class ValidationError(LatentVeilError, ValueError):
    """A parameter is out of its documented range."""


# ---- inversion --------------------------------------------------------------

class NonFiniteError(LatentVeilError, FloatingPointError):
    """A NaN or infinity reached an optimizer step."""


class InversionAborted(LatentVeilError):
    """Latent search hit a non-finite loss or gradient.

    Attributes:
        result: the trajectory recorded up to the failing step.
        reason: short description of what went non-finite.
    """

    def __init__(self, reason: str, result: "InversionResult") -> None:
        super().__init__(f"inversion aborted at step {result.steps_taken}: {reason}")
        self.reason = reason
        self.result = result


# ---- threat harness ---------------------------------------------------------

class DegenerateDataError(LatentVeilError, ValueError):
    """Dataset cannot support the requested split, training, or evaluation."""


class NotTrainedError(LatentVeilError):
    """A surrogate classifier was used before training."""


# ---- metrics ----------------------------------------------------------------

class MetricError(LatentVeilError, ValueError):
    """A quality metric cannot be computed for the given inputs."""


# ---- configuration & files --------------------------------------------------

class ConfigError(LatentVeilError, ValueError):
    """RunConfig parse or validation failure.

    Attributes:
        key: the offending key (None if the line had no key).
        line: 1-based line number, or ``"<cli>"`` for --set overrides.
    """

    def __init__(self, message: str, *, key: Optional[str] = None,
                 line: Optional[object] = None) -> None:
        where = f"line {line}" if line is not None else "config"
        prefix = f"{where}: key '{key}'" if key else where
        super().__init__(f"{prefix}: {message}")
        self.key = key
        self.line = line


class LatentFileError(LatentVeilError, ValueError):
    """Base class for malformed LatentFile payloads."""


class BadMagicError(LatentFileError):
    pass


class TruncatedPayloadError(LatentFileError):
    pass


class VersionMismatchError(LatentFileError):
    pass


class TrailingDataError(LatentFileError):
    pass
