"""Closed-form differentiable blob generator, mean latent, synthetic identities.

Each latent row describes one isotropic Gaussian blob with columns
``(cx, cy, r, g, b, log_s)``. Colors add up per channel and a logistic
squash maps the activation into (0, 1)::

    A_c(p) = Σ_i color_{i,c} · exp(−‖p − (cx_i, cy_i)‖² / (2·exp(2·log_s_i)))
    out_c(p) = 1 / (1 + exp(−k·A_c(p)))

Pixel coordinates are normalized with ``j / (S − 1)`` so the frame spans
[0, 1]² corner to corner; x runs along columns, y along rows.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Sequence

import numpy as np
from scipy.special import expit

from .errors import ShapeError, ValidationError
from .imaging import MIN_SIDE, ImageTensor

log = logging.getLogger(__name__)

LATENT_COLUMNS = ("cx", "cy", "r", "g", "b", "log_s")
LATENT_DIM = len(LATENT_COLUMNS)
_CX, _CY, _LOG_S = 0, 1, 5
_COLORS = slice(2, 5)


@dataclass(frozen=True, eq=False)
class LatentCode:
    """L×D real matrix ω (read-only)."""

    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.values, dtype=np.float64, copy=True)
        if arr.ndim != 2:
            raise ShapeError(f"latent must be a 2-D matrix, got shape {arr.shape}")
        if arr.shape[0] < 2 or arr.shape[1] < 2:
            raise ShapeError(f"latent must be at least 2×2, got {arr.shape[0]}×{arr.shape[1]}")
        if not np.all(np.isfinite(arr)):
            raise ShapeError("latent contains non-finite entries")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def rows(self) -> int:
        return int(self.values.shape[0])

    @property
    def cols(self) -> int:
        return int(self.values.shape[1])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def flatten(self) -> np.ndarray:
        return self.values.reshape(-1).copy()

    @classmethod
    def from_flat(cls, vec: np.ndarray, rows: int, cols: int) -> LatentCode:
        return cls(np.asarray(vec, dtype=np.float64).reshape(rows, cols))


@dataclass(frozen=True)
class BlobGeneratorConfig:
    n_blobs: int = 16
    size: int = 64
    steepness: float = 4.0

    def __post_init__(self) -> None:
        if self.n_blobs < 2:
            raise ValidationError(f"n_blobs must be >= 2, got {self.n_blobs}")
        if self.size < MIN_SIDE:
            raise ValidationError(f"output size must be >= {MIN_SIDE}, got {self.size}")
        if not (self.steepness > 0 and np.isfinite(self.steepness)):
            raise ValidationError(f"steepness must be positive, got {self.steepness}")

    @property
    def latent_dim(self) -> int:
        return LATENT_DIM

    @property
    def latent_shape(self) -> tuple[int, int]:
        return (self.n_blobs, LATENT_DIM)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return (self.size, self.size, 3)


@lru_cache(maxsize=8)
def _pixel_grid(size: int) -> tuple[np.ndarray, np.ndarray]:
    axis = np.linspace(0.0, 1.0, size)
    ys, xs = np.meshgrid(axis, axis, indexing="ij")
    xs = xs.reshape(-1)
    ys = ys.reshape(-1)
    xs.setflags(write=False)
    ys.setflags(write=False)
    return xs, ys


def _as_matrix(w: LatentCode | np.ndarray, cfg: BlobGeneratorConfig) -> np.ndarray:
    arr = w.values if isinstance(w, LatentCode) else np.asarray(w, dtype=np.float64)
    if arr.shape != cfg.latent_shape:
        raise ShapeError(f"latent shape {arr.shape} does not match generator {cfg.latent_shape}")
    return arr


def _blob_field(w: np.ndarray, cfg: BlobGeneratorConfig):
    """Return (dx, dy, d2, q, E) with E[i, p] the blob envelope at pixel p."""
    xs, ys = _pixel_grid(cfg.size)
    dx = xs[None, :] - w[:, _CX, None]
    dy = ys[None, :] - w[:, _CY, None]
    d2 = dx * dx + dy * dy
    q = 0.5 * np.exp(-2.0 * w[:, _LOG_S])
    envelope = np.exp(-d2 * q[:, None])
    return dx, dy, d2, q, envelope


def render(w: LatentCode | np.ndarray, cfg: BlobGeneratorConfig) -> np.ndarray:
    """Raw-array form of :func:`synth_generate` (S×S×3), used on hot paths."""
    arr = _as_matrix(w, cfg)
    _, _, _, _, envelope = _blob_field(arr, cfg)
    activation = envelope.T @ arr[:, _COLORS]
    out = expit(cfg.steepness * activation)
    return out.reshape(cfg.size, cfg.size, 3)


def synth_generate(w: LatentCode, cfg: BlobGeneratorConfig) -> ImageTensor:
    return ImageTensor(render(w, cfg))


def synth_gradient(
    w: LatentCode | np.ndarray,
    cfg: BlobGeneratorConfig,
    upstream: np.ndarray,
) -> np.ndarray:
    """Vector-Jacobian product ∂⟨output, upstream⟩/∂w, shape L×6."""
    arr = _as_matrix(w, cfg)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != cfg.image_shape:
        raise ShapeError(f"upstream shape {upstream.shape} does not match output {cfg.image_shape}")

    dx, dy, d2, q, envelope = _blob_field(arr, cfg)
    colors = arr[:, _COLORS]
    out = expit(cfg.steepness * (envelope.T @ colors))
    g_act = upstream.reshape(-1, 3) * (cfg.steepness * out * (1.0 - out))

    grad = np.zeros_like(arr)
    grad[:, _COLORS] = envelope @ g_act
    weighted = (colors @ g_act.T) * envelope
    grad[:, _CX] = 2.0 * q * np.sum(weighted * dx, axis=1)
    grad[:, _CY] = 2.0 * q * np.sum(weighted * dy, axis=1)
    grad[:, _LOG_S] = 2.0 * q * np.sum(weighted * d2, axis=1)
    return grad


def mean_latent(samples: Sequence[LatentCode]) -> LatentCode:
    """Element-wise arithmetic mean of latent codes."""
    if not samples:
        raise ValidationError("mean_latent needs at least one sample")
    shape = samples[0].shape
    for s in samples[1:]:
        if s.shape != shape:
            raise ShapeError(f"latent shapes differ: {shape} vs {s.shape}")
    return LatentCode(np.mean(np.stack([s.values for s in samples]), axis=0))


def sample_latents(cfg: BlobGeneratorConfig, n: int, seed: int) -> List[LatentCode]:
    rng = np.random.default_rng(seed)
    return [LatentCode(rng.standard_normal(cfg.latent_shape)) for _ in range(n)]


def random_latent(cfg: BlobGeneratorConfig, seed: int) -> LatentCode:
    return sample_latents(cfg, 1, seed)[0]


def average_latent(cfg: BlobGeneratorConfig, n_samples: int = 1000, seed: int = 0) -> LatentCode:
    """Latent of the "average face": mean of seeded standard-normal draws."""
    return mean_latent(sample_latents(cfg, n_samples, seed))


# ---- synthetic identity dataset ---------------------------------------------

@dataclass(frozen=True, eq=False)
class LabeledImage:
    image: ImageTensor
    label: int
    latent: LatentCode


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    items: List[LabeledImage]
    n_ids: int
    n_per_id: int
    cfg: BlobGeneratorConfig = field(default_factory=BlobGeneratorConfig)

    def __post_init__(self) -> None:
        counts = np.zeros(self.n_ids, dtype=int)
        for item in self.items:
            if not 0 <= item.label < self.n_ids:
                raise ValidationError(f"label {item.label} outside [0, {self.n_ids})")
            counts[item.label] += 1
        if np.any(counts != self.n_per_id):
            raise ValidationError(f"expected {self.n_per_id} items per label, got {counts.tolist()}")

    def __len__(self) -> int:
        return len(self.items)

    @property
    def labels(self) -> np.ndarray:
        return np.array([item.label for item in self.items], dtype=int)


def make_identity_dataset(
    n_ids: int,
    n_per_id: int,
    jitter: float,
    seed: int,
    cfg: BlobGeneratorConfig,
) -> LabeledDataset:
    """Render n_ids identities, n_per_id jittered views each, from one seed."""
    if n_ids < 2:
        raise ValidationError(f"n_ids must be >= 2, got {n_ids}")
    if n_per_id < 3:
        raise ValidationError(f"n_per_id must be >= 3, got {n_per_id}")
    if not (jitter > 0 and np.isfinite(jitter)):
        raise ValidationError(f"jitter must be positive, got {jitter}")

    rng = np.random.default_rng(seed)
    items: List[LabeledImage] = []
    for label in range(n_ids):
        base = rng.standard_normal(cfg.latent_shape)
        for _ in range(n_per_id):
            latent = LatentCode(base + jitter * rng.standard_normal(cfg.latent_shape))
            items.append(LabeledImage(synth_generate(latent, cfg), label, latent))
    log.info("Built synthetic dataset: %d ids × %d images (seed=%d, jitter=%g)",
             n_ids, n_per_id, seed, jitter)
    return LabeledDataset(items, n_ids, n_per_id, cfg)


def dataset_checksum(ds: LabeledDataset) -> str:
    h = hashlib.sha256()
    for item in ds.items:
        h.update(int(item.label).to_bytes(4, "little"))
        h.update(item.latent.values.astype("<f8").tobytes())
        h.update(item.image.data.astype("<f8").tobytes())
    return h.hexdigest()
