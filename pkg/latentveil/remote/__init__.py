"""Generic recognition-service client and the mock service it is tested against."""

from .client import (
    ClientConfig,
    RecognitionClient,
    parse_endpoint,
    remote_enroll,
    remote_identify,
    remote_train,
)
from .service import MockServiceHandle, RecognitionService, mock_service

__all__ = [
    "ClientConfig",
    "MockServiceHandle",
    "RecognitionClient",
    "RecognitionService",
    "mock_service",
    "parse_endpoint",
    "remote_enroll",
    "remote_identify",
    "remote_train",
]
