"""Feature extraction and the feature-space loss driving latent search.

Two extractors:

- ``pixel``: the flattened image.
- ``randconv``: ``stages`` repetitions of (seeded 3×3 convolution bank of
  8 filters, softplus, 2×2 mean-pool), then flatten. Weights are drawn
  once from the seed and never trained.

Both expose a vector-Jacobian product so the loss can be pulled back to
pixels and, through the generator, to the latent.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Literal, Tuple

import numpy as np
from scipy import ndimage
from scipy.special import expit

from .errors import ImageShapeError, ShapeError, ValidationError
from .imaging import ImageTensor

log = logging.getLogger(__name__)

ExtractorKind = Literal["pixel", "randconv"]
N_FILTERS = 8
KERNEL = 3


@dataclass(frozen=True)
class ExtractorSpec:
    kind: ExtractorKind = "pixel"
    seed: int = 0
    stages: int = 3

    def __post_init__(self) -> None:
        if self.kind not in ("pixel", "randconv"):
            raise ValidationError(f"unknown extractor kind {self.kind!r}")
        if self.kind == "randconv" and self.stages < 1:
            raise ValidationError(f"randconv needs stages >= 1, got {self.stages}")

    def describe(self) -> str:
        if self.kind == "pixel":
            return "pixel"
        return f"randconv(seed={self.seed},stages={self.stages})"


@lru_cache(maxsize=32)
def _conv_bank(seed: int, stages: int, channels: int) -> Tuple[np.ndarray, ...]:
    """Per-stage weights of shape (8, C_in, 3, 3); read-only."""
    rng = np.random.default_rng(seed)
    banks = []
    c_in = channels
    for _ in range(stages):
        fan_in = c_in * KERNEL * KERNEL
        w = rng.standard_normal((N_FILTERS, c_in, KERNEL, KERNEL)) * np.sqrt(2.0 / fan_in)
        w.setflags(write=False)
        banks.append(w)
        c_in = N_FILTERS
    return tuple(banks)


def _softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


def _mean_pool(x: np.ndarray) -> np.ndarray:
    h, w = (x.shape[0] // 2) * 2, (x.shape[1] // 2) * 2
    c = x.shape[2]
    return x[:h, :w].reshape(h // 2, 2, w // 2, 2, c).mean(axis=(1, 3))


def _mean_pool_backward(grad: np.ndarray, in_shape: tuple) -> np.ndarray:
    out = np.zeros(in_shape)
    h, w = grad.shape[0] * 2, grad.shape[1] * 2
    out[:h, :w] = np.repeat(np.repeat(grad, 2, axis=0), 2, axis=1) / 4.0
    return out


def _conv_forward(x: np.ndarray, bank: np.ndarray) -> np.ndarray:
    h, w, _ = x.shape
    out = np.zeros((h, w, bank.shape[0]))
    for o in range(bank.shape[0]):
        for c in range(bank.shape[1]):
            out[:, :, o] += ndimage.correlate(x[:, :, c], bank[o, c], mode="constant")
    return out


def _conv_backward(grad: np.ndarray, bank: np.ndarray) -> np.ndarray:
    # Adjoint of zero-padded correlation is zero-padded convolution.
    h, w, _ = grad.shape
    out = np.zeros((h, w, bank.shape[1]))
    for o in range(bank.shape[0]):
        for c in range(bank.shape[1]):
            out[:, :, c] += ndimage.convolve(grad[:, :, o], bank[o, c], mode="constant")
    return out


class Extractor:
    """Forward/backward pair for one :class:`ExtractorSpec`."""

    def __init__(self, spec: ExtractorSpec) -> None:
        self.spec = spec

    def _check(self, arr: np.ndarray) -> None:
        if self.spec.kind == "randconv":
            need = 2 ** self.spec.stages
            if arr.shape[0] < need or arr.shape[1] < need:
                raise ImageShapeError(
                    f"randconv with {self.spec.stages} stages needs images >= {need}×{need}, "
                    f"got {arr.shape[0]}×{arr.shape[1]}"
                )

    def forward(self, arr: np.ndarray) -> Tuple[np.ndarray, list]:
        """Return (features, tape); ``tape`` feeds :meth:`backward`."""
        self._check(arr)
        if self.spec.kind == "pixel":
            return arr.reshape(-1).copy(), [arr.shape]
        tape: List[tuple] = []
        x = arr
        for bank in _conv_bank(self.spec.seed, self.spec.stages, arr.shape[2]):
            pre = _conv_forward(x, bank)
            act = _softplus(pre)
            tape.append((x.shape, pre, act.shape))
            x = _mean_pool(act)
        tape.append(x.shape)
        return x.reshape(-1), tape

    def backward(self, tape: list, grad_features: np.ndarray) -> np.ndarray:
        """Pull a feature-space gradient back to pixel space."""
        if self.spec.kind == "pixel":
            return np.asarray(grad_features, dtype=np.float64).reshape(tape[0])
        grad = np.asarray(grad_features, dtype=np.float64).reshape(tape[-1])
        banks = _conv_bank(self.spec.seed, self.spec.stages, tape[0][0][2])
        for (in_shape, pre, act_shape), bank in zip(reversed(tape[:-1]), reversed(banks)):
            grad = _mean_pool_backward(grad, act_shape)
            grad = grad * expit(pre)
            grad = _conv_backward(grad, bank)
        return grad


def extract(img: ImageTensor, spec: ExtractorSpec) -> np.ndarray:
    """Feature vector of ``img`` (1-D float64)."""
    features, _ = Extractor(spec).forward(img.data)
    return features


def feature_loss(y: np.ndarray, yhat: np.ndarray) -> float:
    """Mean squared difference (1/F)·Σ(y − ŷ)²."""
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape:
        raise ShapeError(f"feature dimensionality mismatch: {y.shape} vs {yhat.shape}")
    diff = y - yhat
    return float(np.mean(diff * diff))


def feature_loss_gradient(
    y: np.ndarray,
    yhat: np.ndarray,
    spec: ExtractorSpec,
    img: ImageTensor | np.ndarray,
) -> np.ndarray:
    """∂ feature_loss(y, extract(img)) / ∂ img, shaped like the image."""
    arr = img.data if isinstance(img, ImageTensor) else np.asarray(img, dtype=np.float64)
    extractor = Extractor(spec)
    features, tape = extractor.forward(arr)
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != features.shape or yhat.shape != features.shape:
        raise ShapeError(
            f"inconsistent inputs: extractor yields {features.shape}, "
            f"got y {y.shape} and yhat {yhat.shape}"
        )
    return extractor.backward(tape, (2.0 / y.size) * (yhat - y))
