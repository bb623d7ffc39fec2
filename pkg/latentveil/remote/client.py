"""RecognitionClient: a small resilient client for the recognition wire protocol.

- One TCP connection per request; nothing is shared between calls.
- Finite default timeout on every call.
- Optional retry-with-backoff on transport failures only (off by default);
  service replies, including errors, are never retried.
- Every ``{"ok": false}`` reply maps to a distinct structured error.
"""
from __future__ import annotations

import logging
import socket
import time
from dataclasses import dataclass
from typing import Any, Callable, Dict, Optional, Tuple

from ..errors import ValidationError
from ..imaging import ImageTensor
from . import protocol
from .errors import (
    MalformedResponseError,
    NotEnrolledError,
    RemoteServiceError,
    TransportError,
)

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 10.0  # seconds
DEFAULT_BACKOFF = 0.2  # seconds, doubled per retry


def parse_endpoint(endpoint: str) -> Tuple[str, int]:
    """``host:port`` → (host, port)."""
    host, sep, port = endpoint.rpartition(":")
    if not sep or not host or not port.isdigit() or not 0 < int(port) < 65536:
        raise ValidationError(f"endpoint must look like host:port, got {endpoint!r}")
    return host.strip("[]"), int(port)


@dataclass(frozen=True)
class ClientConfig:
    timeout: float = DEFAULT_TIMEOUT
    retries: int = 0
    backoff: float = DEFAULT_BACKOFF

    def __post_init__(self) -> None:
        if not self.timeout > 0:
            raise ValidationError(f"timeout must be positive, got {self.timeout}")
        if self.retries < 0:
            raise ValidationError(f"retries must be >= 0, got {self.retries}")
        if self.backoff < 0:
            raise ValidationError(f"backoff must be >= 0, got {self.backoff}")


class RecognitionClient:
    """Client for one recognition service endpoint."""

    def __init__(
        self,
        host: str,
        port: int,
        *,
        timeout: float = DEFAULT_TIMEOUT,
        retries: int = 0,
        backoff: float = DEFAULT_BACKOFF,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.config = ClientConfig(timeout=timeout, retries=retries, backoff=backoff)
        self.host = host
        self.port = port
        self._sleep = sleep

    @classmethod
    def from_config(cls, cfg: ClientConfig, endpoint: str) -> RecognitionClient:
        host, port = parse_endpoint(endpoint)
        return cls(host, port, timeout=cfg.timeout, retries=cfg.retries, backoff=cfg.backoff)

    @property
    def endpoint(self) -> str:
        return f"{self.host}:{self.port}"

    # ---- low-level ----------------------------------------------------------

    def _exchange(self, payload: bytes) -> bytes:
        try:
            with socket.create_connection((self.host, self.port), timeout=self.config.timeout) as sock:
                sock.sendall(payload)
                with sock.makefile("rb") as reader:
                    line = reader.readline(protocol.MAX_LINE_BYTES + 1)
        except OSError as e:
            raise TransportError(f"transport failure talking to {self.endpoint}: {e}",
                                 endpoint=self.endpoint) from e
        if not line:
            raise TransportError(f"{self.endpoint} closed the connection without replying",
                                 endpoint=self.endpoint)
        return line

    def call(self, request: Dict[str, Any]) -> Dict[str, Any]:
        """Send one request and return the decoded ``{"ok": true}`` reply."""
        payload = protocol.encode_message(request)
        attempt = 0
        while True:
            try:
                line = self._exchange(payload)
                break
            except TransportError:
                if attempt >= self.config.retries:
                    raise
                delay = self.config.backoff * (2 ** attempt)
                attempt += 1
                log.warning("Transport error on %s; retry %d/%d in %.2fs",
                            self.endpoint, attempt, self.config.retries, delay)
                self._sleep(delay)
        return self._check_reply(line)

    def _check_reply(self, line: bytes) -> Dict[str, Any]:
        text = line.decode("utf-8", errors="replace")
        try:
            reply = protocol.decode_message(line)
        except protocol.ProtocolError as e:
            raise MalformedResponseError(f"malformed reply from {self.endpoint}: {e}",
                                         endpoint=self.endpoint, body=text) from e
        ok = reply.get("ok")
        if ok is True:
            return reply
        if ok is not False:
            raise MalformedResponseError(f"reply from {self.endpoint} lacks a boolean 'ok'",
                                         endpoint=self.endpoint, body=text)
        message = str(reply.get("error", ""))
        if message.startswith(protocol.ERR_NOT_ENROLLED):
            raise NotEnrolledError(f"{self.endpoint}: {message}", endpoint=self.endpoint, body=text)
        raise RemoteServiceError(f"{self.endpoint}: {message or 'request failed'}",
                                 endpoint=self.endpoint, body=text)

    # ---- high-level protocol calls ------------------------------------------

    def enroll(self, label: int, image: ImageTensor) -> None:
        self.call({"op": "enroll", "id": int(label), "image_b64": protocol.image_to_b64(image)})

    def train(self) -> None:
        self.call({"op": "train"})

    def reset(self) -> None:
        """Forget every enrolled image and the trained model."""
        self.call({"op": "reset"})

    def identify(self, image: ImageTensor) -> Tuple[int, float]:
        reply = self.call({"op": "identify", "image_b64": protocol.image_to_b64(image)})
        label = reply.get("id")
        confidence = reply.get("confidence")
        if not isinstance(label, int) or isinstance(label, bool):
            raise MalformedResponseError(f"identify reply from {self.endpoint} has no integer 'id'",
                                         endpoint=self.endpoint, body=str(reply))
        if not isinstance(confidence, (int, float)) or isinstance(confidence, bool) \
                or not 0.0 <= confidence <= 1.0:
            raise MalformedResponseError(
                f"identify reply from {self.endpoint} has no confidence in [0, 1]",
                endpoint=self.endpoint, body=str(reply),
            )
        return label, float(confidence)


def remote_enroll(cfg: ClientConfig, endpoint: str, label: int, image: ImageTensor,
                  client: Optional[RecognitionClient] = None) -> None:
    (client or RecognitionClient.from_config(cfg, endpoint)).enroll(label, image)


def remote_train(cfg: ClientConfig, endpoint: str,
                 client: Optional[RecognitionClient] = None) -> None:
    (client or RecognitionClient.from_config(cfg, endpoint)).train()


def remote_identify(cfg: ClientConfig, endpoint: str, image: ImageTensor,
                    client: Optional[RecognitionClient] = None) -> Tuple[int, float]:
    """Predicted label and confidence for ``image`` from the service at ``endpoint``."""
    return (client or RecognitionClient.from_config(cfg, endpoint)).identify(image)
