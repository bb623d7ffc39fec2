"""Line-delimited JSON wire protocol shared by the client and the mock service.

Requests::

    {"op": "enroll", "id": <int>, "image_b64": <base64 PNG>}  → {"ok": true}
    {"op": "train"}                                          → {"ok": true}
    {"op": "identify", "image_b64": <base64 PNG>}             → {"ok": true, "id": <int>, "confidence": <float>}
    {"op": "reset"}                                          → {"ok": true}

Failures answer ``{"ok": false, "error": <string>}``; the error text starts
with one of the stable prefixes below.
"""
from __future__ import annotations

import base64
import binascii
import json
from typing import Any, Dict

from ..imaging import ImageTensor, decode_png, encode_png

MAX_LINE_BYTES = 16 * 1024 * 1024

OPS = ("enroll", "train", "identify", "reset")

ERR_NOT_ENROLLED = "not enrolled"
ERR_BAD_REQUEST = "bad request"
ERR_UNKNOWN_OP = "unknown op"


class ProtocolError(ValueError):
    """A line could not be parsed into a protocol message."""


def image_to_b64(img: ImageTensor) -> str:
    return base64.b64encode(encode_png(img)).decode("ascii")


def image_from_b64(payload: str) -> ImageTensor:
    try:
        raw = base64.b64decode(payload.encode("ascii"), validate=True)
    except (binascii.Error, UnicodeEncodeError) as e:
        raise ProtocolError(f"image_b64 is not valid base64: {e}") from e
    return decode_png(raw)


def encode_message(message: Dict[str, Any]) -> bytes:
    """One message as a compact JSON line (floats keep their exact repr)."""
    return json.dumps(message, separators=(",", ":"), allow_nan=False).encode("utf-8") + b"\n"


def decode_message(line: bytes) -> Dict[str, Any]:
    if len(line) > MAX_LINE_BYTES:
        raise ProtocolError(f"message exceeds {MAX_LINE_BYTES} bytes")
    try:
        message = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ProtocolError(f"not a JSON line: {e}") from e
    if not isinstance(message, dict):
        raise ProtocolError(f"expected a JSON object, got {type(message).__name__}")
    return message


def ok(**fields: Any) -> Dict[str, Any]:
    return {"ok": True, **fields}


def error(prefix: str, detail: str = "") -> Dict[str, Any]:
    return {"ok": False, "error": f"{prefix}: {detail}" if detail else prefix}
