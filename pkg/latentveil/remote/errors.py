"""Structured errors for the recognition-service wire protocol."""
from __future__ import annotations

from typing import Optional

from ..errors import LatentVeilError


class RemoteError(LatentVeilError):
    """Base class for recognition-service failures.

    Attributes:
        endpoint: ``host:port`` the request went to (None for server-side errors).
        body: the raw reply or error text, truncated.
    """

    def __init__(
        self,
        message: str,
        *,
        endpoint: Optional[str] = None,
        body: Optional[str] = None,
    ) -> None:
        super().__init__(message)
        self.endpoint = endpoint
        self.body = (body[:500] + "…") if body and len(body) > 500 else body


class TransportError(RemoteError, ConnectionError):
    """Could not connect, send, or receive (includes timeouts)."""


class NotEnrolledError(RemoteError):
    """The service has no enrolled identities or no trained model yet."""


class MalformedResponseError(RemoteError):
    """The reply was not valid protocol JSON or lacked required fields."""


class RemoteServiceError(RemoteError):
    """The service answered ``{"ok": false}`` for another reason."""


class ServiceBindError(RemoteError, OSError):
    """The mock service could not bind its listening socket."""
