"""Surrogate re-identification classifier: multinomial logistic regression on features.

Features come from a fixed extractor (randconv by default) and are
standardized with training-set statistics. Training is seeded mini-batch
gradient descent with momentum, reusing the inversion optimizer's
``sgdm_step``; the epoch with the best validation top-1 wins.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Protocol, Sequence, Tuple

import numpy as np
from scipy.special import log_softmax, softmax

from ..errors import DegenerateDataError, NotTrainedError, ShapeError, ValidationError
from ..imaging import ImageTensor
from ..inversion.optimizers import SgdmState, sgdm_step
from ..perception import Extractor, ExtractorSpec

log = logging.getLogger(__name__)

TOP_K = 5


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    learning_rate: float = 0.1
    momentum: float = 0.9
    batch_size: int = 16
    weight_decay: float = 1e-4
    seed: int = 0
    extractor: ExtractorSpec = field(default_factory=lambda: ExtractorSpec(kind="randconv"))

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ValidationError(f"epochs must be >= 0, got {self.epochs}")
        if not self.learning_rate > 0:
            raise ValidationError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ValidationError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.weight_decay < 0:
            raise ValidationError(f"weight_decay must be >= 0, got {self.weight_decay}")

    def describe(self) -> str:
        return (f"logreg(epochs={self.epochs},lr={self.learning_rate},momentum={self.momentum},"
                f"batch={self.batch_size},wd={self.weight_decay},seed={self.seed},"
                f"features={self.extractor.describe()})")


class ProbabilisticClassifier(Protocol):
    """What the harness needs from an attacker model."""

    n_classes: int

    def predict_proba(self, images: Sequence[ImageTensor]) -> np.ndarray: ...


@dataclass(frozen=True, eq=False)
class SurrogateClassifier:
    """Trained (or placeholder) logistic model; immutable once built."""

    extractor: ExtractorSpec
    weights: np.ndarray
    bias: np.ndarray
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    config: TrainConfig = field(default_factory=TrainConfig)
    trained: bool = True

    def __post_init__(self) -> None:
        for name in ("weights", "bias", "feature_mean", "feature_scale"):
            arr = np.array(getattr(self, name), dtype=np.float64, copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_classes(self) -> int:
        return int(self.bias.size)

    @classmethod
    def untrained(cls, extractor: ExtractorSpec, n_features: int, n_classes: int) -> SurrogateClassifier:
        return cls(extractor, np.zeros((n_features, n_classes)), np.zeros(n_classes),
                   np.zeros(n_features), np.ones(n_features), trained=False)

    def _require_trained(self) -> None:
        if not self.trained:
            raise NotTrainedError("classifier has not been trained")

    def _check_width(self, n_features: int) -> None:
        if n_features != self.feature_mean.size:
            raise ShapeError(
                f"classifier expects {self.feature_mean.size} features, got {n_features} "
                "(image size differs from the training images)"
            )

    def standardize(self, raw_features: np.ndarray) -> np.ndarray:
        return (np.asarray(raw_features, dtype=np.float64) - self.feature_mean) / self.feature_scale

    def raw_features(self, images: Sequence[ImageTensor]) -> np.ndarray:
        extractor = Extractor(self.extractor)
        return np.stack([extractor.forward(img.data)[0] for img in images])

    def proba_from_features(self, raw_features: np.ndarray) -> np.ndarray:
        """Class probabilities for raw (unstandardized) feature rows."""
        self._require_trained()
        rows = np.atleast_2d(raw_features)
        self._check_width(rows.shape[1])
        z = self.standardize(rows)
        return softmax(z @ self.weights + self.bias, axis=1)

    def predict_proba(self, images: Sequence[ImageTensor]) -> np.ndarray:
        return self.proba_from_features(self.raw_features(images))

    def identify(self, img: ImageTensor) -> Tuple[int, float]:
        """Best label (lowest index on ties) and its probability."""
        probs = self.predict_proba([img])[0]
        label = int(np.argmax(probs))
        return label, float(probs[label])

    def loss_and_input_gradient(self, image: ImageTensor | np.ndarray, label: int) -> Tuple[float, np.ndarray]:
        """Cross-entropy for ``label`` and its gradient with respect to the pixels."""
        self._require_trained()
        if not 0 <= label < self.n_classes:
            raise ValidationError(f"label {label} outside [0, {self.n_classes})")
        arr = image.data if isinstance(image, ImageTensor) else np.asarray(image, dtype=np.float64)
        extractor = Extractor(self.extractor)
        features, tape = extractor.forward(arr)
        self._check_width(features.size)
        logits = self.standardize(features) @ self.weights + self.bias
        log_probs = log_softmax(logits)
        d_logits = np.exp(log_probs)
        d_logits[label] -= 1.0
        d_features = (self.weights @ d_logits) / self.feature_scale
        return float(-log_probs[label]), extractor.backward(tape, d_features)

    def digest(self) -> str:
        """Short content hash identifying the model for reports."""
        h = hashlib.sha256(self.config.describe().encode())
        for arr in (self.weights, self.bias, self.feature_mean, self.feature_scale):
            h.update(arr.astype("<f8").tobytes())
        return h.hexdigest()[:12]


# ---- evaluation -------------------------------------------------------------

@dataclass(frozen=True)
class Accuracy:
    top1: float
    top5: float
    n: int


def topk_accuracy(probs: np.ndarray, labels: Sequence[int], k: int = TOP_K) -> Accuracy:
    """Top-1 and top-k rates; ties rank the lower label index first."""
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    labels = np.asarray(labels, dtype=int)
    if labels.size == 0:
        raise DegenerateDataError("cannot evaluate on an empty test set")
    if probs.shape[0] != labels.size:
        raise ValidationError(f"{probs.shape[0]} predictions for {labels.size} labels")
    ranking = np.argsort(-probs, axis=1, kind="stable")
    top1 = float(np.mean(ranking[:, 0] == labels))
    hits = np.any(ranking[:, :k] == labels[:, None], axis=1)
    return Accuracy(top1=top1, top5=float(np.mean(hits)), n=int(labels.size))


def evaluate(classifier: ProbabilisticClassifier, images: Sequence[ImageTensor],
             labels: Sequence[int]) -> Accuracy:
    if len(images) == 0:
        raise DegenerateDataError("cannot evaluate on an empty test set")
    return topk_accuracy(classifier.predict_proba(images), labels)


# ---- training ---------------------------------------------------------------

def _standardization(features: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    mean = features.mean(axis=0)
    scale = features.std(axis=0)
    scale[scale == 0] = 1.0
    return mean, scale


def fit_logistic(
    features: np.ndarray,
    labels: Sequence[int],
    n_classes: int,
    val_features: Optional[np.ndarray],
    val_labels: Optional[Sequence[int]],
    cfg: TrainConfig,
    *,
    on_epoch: Optional[Callable[[int, float], None]] = None,
) -> Tuple[np.ndarray, np.ndarray, float]:
    """Fit softmax regression on (already standardized) features.

    Starts from all-zero weights, so zero epochs yields the uniform predictor.
    Returns ``(weights, bias, best_val_top1)``; without validation data the
    last epoch is kept and the reported accuracy is on the training set.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=int)
    n, n_features = x.shape
    onehot = np.eye(n_classes)[y]
    has_val = val_features is not None and val_labels is not None and len(val_labels) > 0
    if has_val:
        vx, vy = np.asarray(val_features, dtype=np.float64), np.asarray(val_labels, dtype=int)
    else:
        vx, vy = x, y

    def unpack(params: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return params[:-n_classes].reshape(n_features, n_classes), params[-n_classes:]

    def score(params: np.ndarray) -> float:
        w, b = unpack(params)
        return topk_accuracy(softmax(vx @ w + b, axis=1), vy).top1

    state = SgdmState.init(np.zeros(n_features * n_classes + n_classes))
    best_params, best_score = state.params, score(state.params)
    rng = np.random.default_rng(cfg.seed)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            w, b = unpack(state.params)
            residual = softmax(x[idx] @ w + b, axis=1) - onehot[idx]
            grad_w = x[idx].T @ residual / idx.size + cfg.weight_decay * w
            grad_b = residual.mean(axis=0)
            state = sgdm_step(state, np.concatenate([grad_w.ravel(), grad_b]),
                              cfg.learning_rate, cfg.momentum)
        current = score(state.params)
        log.debug("epoch %d: validation top-1 %.3f", epoch, current)
        if on_epoch is not None:
            on_epoch(epoch, current)
        if not has_val or current > best_score:
            best_params, best_score = state.params, current
    w, b = unpack(best_params)
    return w.copy(), b.copy(), best_score


def train_on_features(
    features: np.ndarray,
    labels: Sequence[int],
    val_features: Optional[np.ndarray],
    val_labels: Optional[Sequence[int]],
    cfg: TrainConfig,
    n_classes: Optional[int] = None,
) -> SurrogateClassifier:
    """Standardize raw extractor features and fit the logistic model."""
    y = np.asarray(labels, dtype=int)
    if y.size == 0 or np.unique(y).size < 2:
        raise DegenerateDataError("training data must contain at least 2 identities")
    k = int(n_classes) if n_classes is not None else int(y.max()) + 1
    x = np.asarray(features, dtype=np.float64)
    mean, scale = _standardization(x)
    val_z = None
    if val_features is not None and val_labels is not None and len(val_labels) > 0:
        val_z = (np.asarray(val_features, dtype=np.float64) - mean) / scale
    weights, bias, best = fit_logistic((x - mean) / scale, y, k, val_z, val_labels, cfg)
    log.info("Trained surrogate on %d samples, %d identities (best val top-1 %.3f)",
             y.size, k, best)
    return SurrogateClassifier(cfg.extractor, weights, bias, mean, scale, cfg)


def extract_features(images: Sequence[ImageTensor], spec: ExtractorSpec) -> np.ndarray:
    extractor = Extractor(spec)
    return np.stack([extractor.forward(img.data)[0] for img in images])


def train_classifier(
    train: Sequence[Tuple[ImageTensor, int]],
    val: Sequence[Tuple[ImageTensor, int]],
    cfg: TrainConfig,
    n_classes: Optional[int] = None,
) -> SurrogateClassifier:
    """Train on ``(image, label)`` pairs; ``val`` picks the best epoch."""
    if not train:
        raise DegenerateDataError("training set is empty")
    features = extract_features([img for img, _ in train], cfg.extractor)
    labels: List[int] = [label for _, label in train]
    val_features = extract_features([img for img, _ in val], cfg.extractor) if val else None
    val_labels = [label for _, label in val] if val else None
    return train_on_features(features, labels, val_features, val_labels, cfg, n_classes)
