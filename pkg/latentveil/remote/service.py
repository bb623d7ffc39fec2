"""Mock recognition service speaking the line-delimited JSON protocol.

Two modes:

- classifier-backed: answers ``identify`` from a given trained classifier
  from the first request on;
- gallery: ``enroll`` collects labeled images and ``train`` fits a surrogate
  on them (a single enrolled identity gives a constant predictor with
  confidence 1.0).

``reset`` empties the gallery and drops the served model in either mode.

The served model is an immutable snapshot swapped atomically by ``train``,
so concurrent requests always see one consistent model.
"""
from __future__ import annotations

import logging
import socketserver
import threading
from typing import Any, Dict, List, Optional, Tuple

from ..errors import ImageShapeError, LatentVeilError
from ..imaging import ImageTensor
from ..threats.classifier import SurrogateClassifier, TrainConfig, train_classifier
from . import protocol
from .errors import ServiceBindError

log = logging.getLogger(__name__)


class _ConstantModel:
    """Predictor for a gallery holding one identity."""

    def __init__(self, label: int) -> None:
        self.label = label

    def identify(self, img: ImageTensor) -> Tuple[int, float]:
        return self.label, 1.0


class RecognitionService:
    """Protocol state machine, independent of the transport."""

    def __init__(self, classifier: Optional[SurrogateClassifier] = None,
                 train_config: Optional[TrainConfig] = None) -> None:
        self.train_config = train_config or TrainConfig()
        self._model: Any = classifier
        self._gallery: List[Tuple[ImageTensor, int]] = []
        self._lock = threading.Lock()

    def handle(self, request: Dict[str, Any]) -> Dict[str, Any]:
        op = request.get("op")
        if op not in protocol.OPS:
            return protocol.error(protocol.ERR_UNKNOWN_OP, repr(op))
        try:
            if op == "enroll":
                return self._enroll(request)
            if op == "train":
                return self._train()
            if op == "reset":
                return self._reset()
            return self._identify(request)
        except (protocol.ProtocolError, LatentVeilError) as e:
            return protocol.error(protocol.ERR_BAD_REQUEST, str(e))

    def _image(self, request: Dict[str, Any]) -> ImageTensor:
        payload = request.get("image_b64")
        if not isinstance(payload, str):
            raise protocol.ProtocolError("missing image_b64")
        return protocol.image_from_b64(payload)

    def _enroll(self, request: Dict[str, Any]) -> Dict[str, Any]:
        label = request.get("id")
        if not isinstance(label, int) or isinstance(label, bool) or label < 0:
            raise protocol.ProtocolError("enroll needs a non-negative integer 'id'")
        image = self._image(request)
        with self._lock:
            if self._gallery and self._gallery[0][0].shape != image.shape:
                raise ImageShapeError(
                    f"gallery holds {self._gallery[0][0].shape} images, got {image.shape}")
            self._gallery.append((image, label))
        return protocol.ok()

    def _train(self) -> Dict[str, Any]:
        with self._lock:
            gallery = list(self._gallery)
        labels = sorted({label for _, label in gallery})
        if not labels:
            return protocol.error(protocol.ERR_NOT_ENROLLED, "gallery is empty")
        if len(labels) == 1:
            model: Any = _ConstantModel(labels[0])
        else:
            model = train_classifier(gallery, [], self.train_config, n_classes=labels[-1] + 1)
        self._model = model
        log.info("Mock service trained on %d images of %d identities", len(gallery), len(labels))
        return protocol.ok()

    def _reset(self) -> Dict[str, Any]:
        """Drop the gallery and the served model."""
        with self._lock:
            self._gallery.clear()
            self._model = None
        log.info("Mock service reset")
        return protocol.ok()

    def _identify(self, request: Dict[str, Any]) -> Dict[str, Any]:
        model = self._model
        if model is None:
            return protocol.error(protocol.ERR_NOT_ENROLLED, "no trained model")
        label, confidence = model.identify(self._image(request))
        return protocol.ok(id=int(label), confidence=float(confidence))


class _Handler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        service: RecognitionService = self.server.service  # type: ignore[attr-defined]
        while True:
            line = self.rfile.readline(protocol.MAX_LINE_BYTES + 1)
            if not line:
                return
            if not line.strip():
                continue
            try:
                reply = service.handle(protocol.decode_message(line))
            except protocol.ProtocolError as e:
                reply = protocol.error(protocol.ERR_BAD_REQUEST, str(e))
            self.wfile.write(protocol.encode_message(reply))
            self.wfile.flush()


class _Server(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class MockServiceHandle:
    """A running mock service; stop it with :meth:`shutdown` or a ``with`` block."""

    def __init__(self, server: _Server, thread: threading.Thread) -> None:
        self._server = server
        self._thread = thread
        self._closed = False

    @property
    def address(self) -> Tuple[str, int]:
        host, port = self._server.server_address[:2]
        return str(host), int(port)

    @property
    def endpoint(self) -> str:
        host, port = self.address
        return f"{host}:{port}"

    @property
    def service(self) -> RecognitionService:
        return self._server.service  # type: ignore[attr-defined]

    def wait(self) -> None:
        """Block until the service stops."""
        while self._thread.is_alive():
            self._thread.join(timeout=0.5)

    def shutdown(self) -> None:
        if self._closed:
            return
        self._closed = True
        self._server.shutdown()
        self._server.server_close()
        self._thread.join()
        log.info("Mock service on %s stopped", self.endpoint)

    def __enter__(self) -> MockServiceHandle:
        return self

    def __exit__(self, *exc: Any) -> None:
        self.shutdown()


def mock_service(
    classifier: Optional[SurrogateClassifier] = None,
    host: str = "127.0.0.1",
    port: int = 0,
    *,
    train_config: Optional[TrainConfig] = None,
) -> MockServiceHandle:
    """Bind and start serving in a background thread (port 0 picks a free port)."""
    try:
        server = _Server((host, port), _Handler)
    except OSError as e:
        raise ServiceBindError(f"cannot bind {host}:{port}: {e}", endpoint=f"{host}:{port}") from e
    server.service = RecognitionService(classifier, train_config)  # type: ignore[attr-defined]
    thread = threading.Thread(target=server.serve_forever, name="latentveil-mock", daemon=True)
    thread.start()
    handle = MockServiceHandle(server, thread)
    log.info("Mock service listening on %s (%s mode)", handle.endpoint,
             "classifier" if classifier is not None else "gallery")
    return handle
