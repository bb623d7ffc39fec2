"""Obfuscators: DeepBlur in latent space and the pixel-space baselines.

DeepBlur inverts an image into the generator's latent space, low-pass filters
the latent matrix with a truncated Gaussian, and regenerates. The baselines
(Gaussian blur, pixelation, masking, projected sign-gradient noise) work on
pixels directly. Every obfuscator maps a [0, 1] image to a [0, 1] image.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Literal, Optional, Tuple

import numpy as np
from scipy import ndimage

from .errors import NotTrainedError, ValidationError
from .generator import BlobGeneratorConfig, LatentCode, average_latent, synth_generate
from .imaging import ImageTensor
from .inversion import InversionResult, OptimizerConfig, invert
from .perception import ExtractorSpec

if TYPE_CHECKING:
    from .threats.classifier import SurrogateClassifier

log = logging.getLogger(__name__)

ObfuscatorKind = Literal[
    "identity", "deepblur", "deepblur_average", "pixel_blur", "pixelate", "mask", "advnoise",
]
OBFUSCATOR_KINDS: Tuple[str, ...] = (
    "identity", "deepblur", "deepblur_average", "pixel_blur", "pixelate", "mask", "advnoise",
)
MAX_ADV_EPSILON = 0.25

Rect = Tuple[int, int, int, int]


# ---- Gaussian machinery -----------------------------------------------------

def _check_sigma(sigma: float) -> float:
    sigma = float(sigma)
    if not math.isfinite(sigma) or sigma < 0:
        raise ValidationError(f"sigma must be finite and >= 0, got {sigma}")
    return sigma


def gaussian_density(x: float, y: float, sigma: float) -> float:
    """Continuous 2-D Gaussian ``exp(−(x²+y²)/(2σ²)) / (2πσ²)`` for σ > 0."""
    sigma = _check_sigma(sigma)
    if sigma == 0:
        raise ValidationError("density is undefined at sigma = 0")
    return math.exp(-(x * x + y * y) / (2.0 * sigma * sigma)) / (2.0 * math.pi * sigma * sigma)


@dataclass(frozen=True, eq=False)
class GaussianKernel:
    sigma: float
    radius: int
    weights: np.ndarray


def gaussian_kernel(sigma: float) -> GaussianKernel:
    """Kernel on the integer grid [−r, r]² with r = ceil(3σ), normalized to sum 1."""
    sigma = _check_sigma(sigma)
    if sigma == 0:
        weights = np.ones((1, 1))
        weights.setflags(write=False)
        return GaussianKernel(0.0, 0, weights)
    radius = int(math.ceil(3.0 * sigma))
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    yy, xx = np.meshgrid(offsets, offsets, indexing="ij")
    weights = np.exp(-(xx * xx + yy * yy) / (2.0 * sigma * sigma))
    weights /= weights.sum()
    weights.setflags(write=False)
    return GaussianKernel(sigma, radius, weights)


def _reflect_convolve(arr: np.ndarray, kernel: GaussianKernel) -> np.ndarray:
    # scipy's "mirror" reflects about the edge sample without repeating it.
    return ndimage.convolve(arr, kernel.weights, mode="mirror")


def blur_latent(w: LatentCode, sigma: float) -> LatentCode:
    """ω' = g(ω): 2-D Gaussian convolution of the latent matrix."""
    kernel = gaussian_kernel(sigma)
    if kernel.radius == 0:
        return w
    return LatentCode(_reflect_convolve(w.values, kernel))


def average_latent_mode(w: LatentCode) -> LatentCode:
    """The σ → ∞ limit: every entry replaced by the global mean."""
    values = w.values
    if np.all(values == values.flat[0]):
        # Re-summing a constant matrix can drift by an ulp.
        return w
    return LatentCode(np.full(w.shape, float(np.mean(values))))


# ---- DeepBlur ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DeepBlurSettings:
    """Everything the inversion step needs besides the image."""

    generator: BlobGeneratorConfig = field(default_factory=BlobGeneratorConfig)
    extractor: ExtractorSpec = field(default_factory=ExtractorSpec)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    init: Optional[LatentCode] = None

    def initial_latent(self) -> LatentCode:
        if self.init is not None:
            return self.init
        return average_latent(self.generator)

    def invert(self, img: ImageTensor, *, clock: Callable[[], float] = time.perf_counter) -> InversionResult:
        return invert(img, self.generator, self.extractor, self.optimizer,
                      self.initial_latent(), clock=clock)


@dataclass(frozen=True, eq=False)
class DeepBlurResult:
    image: ImageTensor
    latent_before: LatentCode
    latent_after: LatentCode
    inversion: InversionResult


def deep_blur(
    img: ImageTensor,
    sigma: Optional[float],
    settings: DeepBlurSettings,
    *,
    inversion: Optional[InversionResult] = None,
    clock: Callable[[], float] = time.perf_counter,
) -> DeepBlurResult:
    """Invert ``img``, filter the latent, regenerate.

    ``sigma=None`` selects the average mode. A precomputed ``inversion`` of
    the same image skips the search, so one inversion can serve a σ sweep.
    :class:`~latentveil.errors.InversionAborted` propagates unchanged.
    """
    if inversion is None:
        inversion = settings.invert(img, clock=clock)
    before = inversion.latent
    after = average_latent_mode(before) if sigma is None else blur_latent(before, sigma)
    return DeepBlurResult(synth_generate(after, settings.generator), before, after, inversion)


# ---- pixel-space baselines --------------------------------------------------

def pixel_blur(img: ImageTensor, sigma: float) -> ImageTensor:
    """Per-channel Gaussian blur with the same kernel and boundary as the latent blur."""
    kernel = gaussian_kernel(sigma)
    if kernel.radius == 0:
        return img
    channels = [_reflect_convolve(img.data[:, :, c], kernel) for c in range(img.channels)]
    return ImageTensor(np.clip(np.stack(channels, axis=-1), 0.0, 1.0))


def pixelate(img: ImageTensor, block: int) -> ImageTensor:
    """Replace each top-left anchored block×block tile by its mean (edge tiles may be ragged)."""
    if int(block) != block or block < 1:
        raise ValidationError(f"block must be a positive integer, got {block}")
    block = int(block)
    if block == 1:
        return img
    rows = np.arange(0, img.height, block)
    cols = np.arange(0, img.width, block)
    sums = np.add.reduceat(np.add.reduceat(img.data, rows, axis=0), cols, axis=1)
    row_counts = np.diff(np.append(rows, img.height))
    col_counts = np.diff(np.append(cols, img.width))
    means = sums / (row_counts[:, None, None] * col_counts[None, :, None])
    out = np.repeat(np.repeat(means, row_counts, axis=0), col_counts, axis=1)
    return ImageTensor(np.clip(out, 0.0, 1.0))


def default_mask_rect(height: int, width: int) -> Rect:
    """Central half of the frame as ``(x0, y0, x1, y1)``."""
    return (width // 4, height // 4, width - width // 4, height - height // 4)


def mask(img: ImageTensor, rect: Optional[Rect] = None, value: float = 0.0) -> ImageTensor:
    """Fill the half-open rectangle ``[x0, x1) × [y0, y1)`` with ``value`` (black by default)."""
    if rect is None:
        rect = default_mask_rect(img.height, img.width)
    x0, y0, x1, y1 = (int(v) for v in rect)
    if not (0 <= x0 < x1 <= img.width and 0 <= y0 < y1 <= img.height):
        raise ValidationError(
            f"mask rectangle {rect} is empty or outside the {img.width}×{img.height} frame"
        )
    if not 0.0 <= value <= 1.0:
        raise ValidationError(f"mask value must lie in [0, 1], got {value}")
    out = np.array(img.data, copy=True)
    out[y0:y1, x0:x1, :] = value
    return ImageTensor(out)


def adv_noise(
    img: ImageTensor,
    surrogate: "SurrogateClassifier",
    label: int,
    epsilon: float,
    steps: int,
    seed: Optional[int] = None,
) -> ImageTensor:
    """Projected sign-gradient ascent on the surrogate's loss for ``label``.

    Step size is ε/steps; every iterate is projected to the L∞ ball of radius
    ε around ``img`` and to [0, 1]. With ``seed`` the iterate starts from a
    uniform random point of the ball. Returns the iterate with the highest
    surrogate loss seen; the unperturbed input is always a candidate, so the
    loss never ends below the clean loss.
    """
    if not surrogate.trained:
        raise NotTrainedError("adversarial noise needs a trained surrogate classifier")
    if not 0 < epsilon <= MAX_ADV_EPSILON:
        raise ValidationError(f"epsilon must be in (0, {MAX_ADV_EPSILON}], got {epsilon}")
    if int(steps) != steps or steps < 1:
        raise ValidationError(f"steps must be a positive integer, got {steps}")

    origin = img.data
    lower = np.clip(origin - epsilon, 0.0, 1.0)
    upper = np.clip(origin + epsilon, 0.0, 1.0)
    x = np.array(origin, copy=True)
    loss, grad = surrogate.loss_and_input_gradient(x, label)
    best_x, best_loss = x, loss
    if seed is not None:
        rng = np.random.default_rng(seed)
        x = np.clip(x + rng.uniform(-epsilon, epsilon, size=x.shape), lower, upper)
        loss, grad = surrogate.loss_and_input_gradient(x, label)
        if loss > best_loss:
            best_x, best_loss = x, loss

    step = epsilon / steps
    for _ in range(int(steps)):
        x = np.clip(x + step * np.sign(grad), lower, upper)
        loss, grad = surrogate.loss_and_input_gradient(x, label)
        if loss > best_loss:
            best_x, best_loss = x, loss
    log.debug("adv_noise: label %d, surrogate loss %.4f", label, best_loss)
    return ImageTensor(best_x)


# ---- dispatch ---------------------------------------------------------------

def _fmt(value: float) -> str:
    return repr(float(value))


@dataclass(frozen=True)
class ObfuscatorSpec:
    """One obfuscator and its parameters, validated per kind.

    Only the fields relevant to ``kind`` are consulted: ``sigma`` for the
    blurs, ``block`` for pixelate, ``rect``/``mask_value`` for mask and
    ``epsilon``/``steps``/``seed`` for advnoise.
    """

    kind: ObfuscatorKind = "deepblur"
    sigma: float = 1.0
    block: int = 8
    rect: Optional[Rect] = None
    mask_value: float = 0.0
    epsilon: float = 0.03
    steps: int = 10
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in OBFUSCATOR_KINDS:
            raise ValidationError(f"unknown obfuscator kind {self.kind!r}")
        if self.kind in ("deepblur", "pixel_blur"):
            _check_sigma(self.sigma)
        if self.kind == "pixelate" and (int(self.block) != self.block or self.block < 1):
            raise ValidationError(f"block must be a positive integer, got {self.block}")
        if self.kind == "mask":
            if self.rect is not None:
                if len(self.rect) != 4:
                    raise ValidationError(f"mask rectangle needs 4 coordinates, got {self.rect}")
                x0, y0, x1, y1 = self.rect
                if not (0 <= x0 < x1 and 0 <= y0 < y1):
                    raise ValidationError(f"mask rectangle {self.rect} is empty or negative")
            if not 0.0 <= self.mask_value <= 1.0:
                raise ValidationError(f"mask value must lie in [0, 1], got {self.mask_value}")
        if self.kind == "advnoise":
            if not 0 < self.epsilon <= MAX_ADV_EPSILON:
                raise ValidationError(f"epsilon must be in (0, {MAX_ADV_EPSILON}], got {self.epsilon}")
            if self.steps < 1:
                raise ValidationError(f"steps must be >= 1, got {self.steps}")

    @property
    def is_deepblur(self) -> bool:
        return self.kind in ("deepblur", "deepblur_average")

    @property
    def param(self) -> str:
        """The single CSV-facing parameter of this obfuscator ('' if none)."""
        if self.kind in ("deepblur", "pixel_blur"):
            return _fmt(self.sigma)
        if self.kind == "pixelate":
            return str(int(self.block))
        if self.kind == "advnoise":
            return _fmt(self.epsilon)
        if self.kind == "mask" and self.rect is not None:
            return ":".join(str(int(v)) for v in self.rect)
        return ""

    @property
    def label(self) -> str:
        return f"{self.kind}@{self.param}" if self.param else self.kind

    @classmethod
    def parse(cls, token: str, **defaults) -> "ObfuscatorSpec":
        """Build a spec from ``kind[@param]`` (``none`` means identity).

        ``defaults`` seeds the fields the token does not set.
        """
        kind, _, raw = token.strip().partition("@")
        kind = kind.strip()
        if kind == "none":
            kind = "identity"
        values = dict(defaults)
        if raw:
            try:
                if kind in ("deepblur", "pixel_blur"):
                    values["sigma"] = float(raw)
                elif kind == "pixelate":
                    values["block"] = int(raw)
                elif kind == "advnoise":
                    values["epsilon"] = float(raw)
                elif kind == "mask":
                    values["rect"] = tuple(int(v) for v in raw.split(":"))
                else:
                    raise ValidationError(f"obfuscator {kind!r} takes no parameter, got {token!r}")
            except ValueError as e:
                if isinstance(e, ValidationError):
                    raise
                raise ValidationError(f"bad parameter in obfuscator token {token!r}") from e
        return cls(kind=kind, **values)


def obfuscate(
    img: ImageTensor,
    spec: ObfuscatorSpec,
    *,
    settings: Optional[DeepBlurSettings] = None,
    inversion: Optional[InversionResult] = None,
    surrogate: Optional["SurrogateClassifier"] = None,
    label: Optional[int] = None,
    seed: Optional[int] = None,
    clock: Callable[[], float] = time.perf_counter,
) -> ImageTensor:
    """Apply ``spec`` to one image.

    DeepBlur kinds need ``settings`` (or use the defaults) and may take a
    precomputed ``inversion``. advnoise needs ``surrogate`` and the true
    ``label``; ``seed`` overrides ``spec.seed`` for its random start.
    """
    if spec.kind == "identity":
        return img
    if spec.is_deepblur:
        sigma = None if spec.kind == "deepblur_average" else spec.sigma
        return deep_blur(img, sigma, settings or DeepBlurSettings(),
                         inversion=inversion, clock=clock).image
    if spec.kind == "pixel_blur":
        return pixel_blur(img, spec.sigma)
    if spec.kind == "pixelate":
        return pixelate(img, spec.block)
    if spec.kind == "mask":
        return mask(img, spec.rect, spec.mask_value)
    if surrogate is None or label is None:
        raise ValidationError("advnoise needs a surrogate classifier and the true label")
    return adv_noise(img, surrogate, label, spec.epsilon, spec.steps,
                     seed=spec.seed if seed is None else seed)
