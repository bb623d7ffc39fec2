"""Integration tests: RecognitionClient against the mock service over real TCP."""
from __future__ import annotations

import json
import socket

import numpy as np
import pytest

from latentveil.generator import BlobGeneratorConfig, make_identity_dataset
from latentveil.imaging import ImageTensor, quantize
from latentveil.perception import ExtractorSpec
from latentveil.remote import RecognitionClient, mock_service, parse_endpoint
from latentveil.remote.errors import NotEnrolledError, RemoteServiceError, TransportError
from latentveil.threats.classifier import TrainConfig, train_classifier

pytestmark = pytest.mark.integration

CFG = BlobGeneratorConfig(n_blobs=4, size=8)
TRAINING = TrainConfig(epochs=20, extractor=ExtractorSpec())


@pytest.fixture(scope="module")
def dataset():
    return make_identity_dataset(3, 4, 0.05, seed=5, cfg=CFG)


@pytest.fixture(scope="module")
def classifier(dataset):
    return train_classifier([(i.image, i.label) for i in dataset.items], [], TRAINING, n_classes=3)


def _client(handle, **kwargs):
    host, port = parse_endpoint(handle.endpoint)
    return RecognitionClient(host, port, timeout=5.0, **kwargs)


def _raw_exchange(handle, line: bytes) -> dict:
    host, port = handle.address
    with socket.create_connection((host, port), timeout=5.0) as sock:
        sock.sendall(line)
        with sock.makefile("rb") as reader:
            return json.loads(reader.readline())


def test_remote_answer_equals_local_answer_on_the_quantized_image(dataset, classifier):
    with mock_service(classifier) as handle:
        client = _client(handle)
        for item in dataset.items[:6]:
            assert client.identify(item.image) == classifier.identify(quantize(item.image))


def test_gallery_lifecycle(dataset):
    with mock_service(train_config=TRAINING) as handle:
        client = _client(handle)
        with pytest.raises(NotEnrolledError):
            client.identify(dataset.items[0].image)
        with pytest.raises(NotEnrolledError):
            client.train()
        for item in dataset.items:
            client.enroll(item.label, item.image)
        client.train()
        label, confidence = client.identify(dataset.items[0].image)
        assert 0 <= label < 3
        assert 0.0 <= confidence <= 1.0


def test_single_identity_gallery_is_a_constant_predictor(dataset):
    with mock_service() as handle:
        client = _client(handle)
        client.enroll(2, dataset.items[0].image)
        client.train()
        assert client.identify(dataset.items[11].image) == (2, 1.0)


def test_unknown_op_and_bad_requests(dataset):
    with mock_service() as handle:
        reply = _raw_exchange(handle, b'{"op":"dance"}\n')
        assert reply["ok"] is False
        assert reply["error"].startswith("unknown op")
        reply = _raw_exchange(handle, b"this is not json\n")
        assert reply["error"].startswith("bad request")
        reply = _raw_exchange(handle, b'{"op":"enroll","id":-1,"image_b64":""}\n')
        assert reply["error"].startswith("bad request")
        with pytest.raises(RemoteServiceError):
            _client(handle).call({"op": "enroll", "id": 1, "image_b64": "not base64!"})


def test_one_connection_serves_several_lines(dataset):
    with mock_service() as handle:
        host, port = handle.address
        with socket.create_connection((host, port), timeout=5.0) as sock:
            sock.sendall(b'{"op":"train"}\n\n{"op":"nope"}\n')
            with sock.makefile("rb") as reader:
                first = json.loads(reader.readline())
                second = json.loads(reader.readline())
        assert first["error"].startswith("not enrolled")
        assert second["error"].startswith("unknown op")


def test_stopped_service_is_a_transport_error():
    handle = mock_service()
    host, port = parse_endpoint(handle.endpoint)
    handle.shutdown()
    handle.shutdown()
    with pytest.raises(TransportError):
        RecognitionClient(host, port, timeout=1.0).train()


def test_wrong_size_image_gets_an_error_reply_and_the_connection_survives(dataset, classifier):
    item = dataset.items[0]
    larger = ImageTensor(np.full((16, 16, item.image.channels), 0.5))
    with mock_service(classifier) as handle:
        client = _client(handle)
        with pytest.raises(RemoteServiceError, match="features"):
            client.identify(larger)
        assert client.identify(item.image) == classifier.identify(quantize(item.image))


def test_gallery_rejects_images_of_a_second_size(dataset):
    item = dataset.items[0]
    with mock_service(train_config=TRAINING) as handle:
        client = _client(handle)
        client.enroll(item.label, item.image)
        with pytest.raises(RemoteServiceError, match="gallery holds"):
            client.enroll(1, ImageTensor(np.zeros((16, 16, item.image.channels))))
        client.train()
        assert client.identify(item.image) == (item.label, 1.0)
