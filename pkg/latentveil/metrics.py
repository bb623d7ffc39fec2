"""Fidelity and identity-distance measures: PSNR, SSIM, MS-SSIM and FID.

All image metrics work on the internal unit scale (dynamic range 1.0).
FID fits Gaussians to extractor features; the matrix square root goes
through a symmetric eigendecomposition so results are deterministic.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, ndimage
from skimage.metrics import peak_signal_noise_ratio, structural_similarity
from skimage.transform import downscale_local_mean

from .errors import MetricError, ShapeError
from .imaging import ImageTensor
from .perception import ExtractorSpec, extract

log = logging.getLogger(__name__)

SSIM_SIGMA = 1.5
SSIM_TRUNCATE = 3.5  # radius 5 → 11×11 window
SSIM_WINDOW = 11
SSIM_K1 = 0.01
SSIM_K2 = 0.03
DYNAMIC_RANGE = 1.0
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
SSIM_OPTIONS: Dict[str, Any] = {
    "gaussian_weights": True,
    "sigma": SSIM_SIGMA,
    "use_sample_covariance": False,
    "data_range": DYNAMIC_RANGE,
    "K1": SSIM_K1,
    "K2": SSIM_K2,
}
NEGATIVE_EIGEN_TOL = 1e-8
SYMMETRY_TOL = 1e-10


def _check_pair(reference: ImageTensor, test: ImageTensor) -> None:
    if reference.shape != test.shape:
        raise ShapeError(f"image shapes differ: {reference.shape} vs {test.shape}")


def psnr(reference: ImageTensor, test: ImageTensor) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` for identical images."""
    _check_pair(reference, test)
    if np.array_equal(reference.data, test.data):
        return math.inf
    return float(peak_signal_noise_ratio(reference.data, test.data, data_range=DYNAMIC_RANGE))


def _check_window(img: ImageTensor) -> None:
    if min(img.height, img.width) < SSIM_WINDOW:
        raise MetricError(
            f"SSIM needs images of at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {img.height}×{img.width}"
        )


def ssim(reference: ImageTensor, test: ImageTensor) -> float:
    """Mean local SSIM (11×11 Gaussian window, σ = 1.5), averaged over channels."""
    _check_pair(reference, test)
    _check_window(reference)
    return float(structural_similarity(reference.data, test.data, channel_axis=-1, **SSIM_OPTIONS))


def _ssim_and_cs(x: np.ndarray, y: np.ndarray) -> Tuple[float, float]:
    """Mean SSIM and mean contrast-structure term of one channel over the valid region."""
    _, ssim_map = structural_similarity(x, y, full=True, **SSIM_OPTIONS)
    # cs = SSIM / luminance, with the same Gaussian local means scikit-image uses
    c1 = (SSIM_K1 * DYNAMIC_RANGE) ** 2
    mu_x = ndimage.gaussian_filter(x, SSIM_SIGMA, truncate=SSIM_TRUNCATE, mode="reflect")
    mu_y = ndimage.gaussian_filter(y, SSIM_SIGMA, truncate=SSIM_TRUNCATE, mode="reflect")
    luminance = (2.0 * mu_x * mu_y + c1) / (mu_x * mu_x + mu_y * mu_y + c1)
    pad = SSIM_WINDOW // 2
    crop = (slice(pad, -pad), slice(pad, -pad))
    return float(np.mean(ssim_map[crop])), float(np.mean((ssim_map / luminance)[crop]))


def ms_ssim_scales(height: int, width: int) -> int:
    """Number of usable scales: each must still fit one 11×11 window."""
    side = min(height, width)
    scales = 0
    while scales < len(MS_SSIM_WEIGHTS) and side >= SSIM_WINDOW:
        scales += 1
        side //= 2
    return scales


def _halve(a: np.ndarray) -> np.ndarray:
    h, w = (a.shape[0] // 2) * 2, (a.shape[1] // 2) * 2
    return downscale_local_mean(a[:h, :w], (2, 2))


def _ms_ssim_channel(x: np.ndarray, y: np.ndarray, weights: np.ndarray) -> float:
    value = 1.0
    for j, weight in enumerate(weights):
        ssim_value, cs_value = _ssim_and_cs(x, y)
        last = j == len(weights) - 1
        value *= max(ssim_value if last else cs_value, 0.0) ** weight
        if not last:
            x, y = _halve(x), _halve(y)
    return value


def ms_ssim(reference: ImageTensor, test: ImageTensor) -> float:
    """Multi-scale SSIM with the standard exponents, renormalized when fewer scales fit."""
    _check_pair(reference, test)
    _check_window(reference)
    scales = ms_ssim_scales(reference.height, reference.width)
    weights = np.asarray(MS_SSIM_WEIGHTS[:scales])
    weights = weights / weights.sum()
    values = [
        _ms_ssim_channel(reference.data[:, :, c], test.data[:, :, c], weights)
        for c in range(reference.channels)
    ]
    return float(np.mean(values))


# ---- FID --------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GaussianMoments:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ShapeError(f"moments disagree: mean {mean.shape}, covariance {cov.shape}")
        if not np.allclose(cov, cov.T, rtol=0.0, atol=SYMMETRY_TOL):
            raise MetricError("covariance is not symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return int(self.mean.size)

    @classmethod
    def fit(cls, features: np.ndarray) -> "GaussianMoments":
        """Sample mean and covariance (denominator n − 1) of row-wise samples."""
        x = np.asarray(features, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[0] < 2:
            raise MetricError(f"FID needs at least 2 samples per set, got {x.shape[0]}")
        cov = np.cov(x, rowvar=False, ddof=1)
        return cls(x.mean(axis=0), (cov + np.atleast_2d(cov).T) / 2.0)


def _psd_sqrt_eigenvalues(matrix: np.ndarray, what: str) -> tuple:
    eigvals, eigvecs = linalg.eigh(matrix)
    if eigvals.size and eigvals.min() < -NEGATIVE_EIGEN_TOL:
        raise MetricError(f"{what} has a materially negative eigenvalue {eigvals.min():.3e}")
    return np.sqrt(np.clip(eigvals, 0.0, None)), eigvecs


def frechet_distance(real: GaussianMoments, gen: GaussianMoments) -> float:
    """‖μ_r − μ_g‖² + Tr(Σ_r + Σ_g − 2·(Σ_r^½ Σ_g Σ_r^½)^½), clamped at 0."""
    if real.dim != gen.dim:
        raise ShapeError(f"feature dimensionality mismatch: {real.dim} vs {gen.dim}")
    if np.array_equal(real.mean, gen.mean) and np.array_equal(real.cov, gen.cov):
        # Rank-deficient covariances leave rounding noise in the square root.
        return 0.0
    roots, vecs = _psd_sqrt_eigenvalues(real.cov, "real covariance")
    sqrt_real = (vecs * roots) @ vecs.T
    product = sqrt_real @ gen.cov @ sqrt_real
    product = (product + product.T) / 2.0
    inner_roots, _ = _psd_sqrt_eigenvalues(product, "covariance product")
    diff = real.mean - gen.mean
    value = float(diff @ diff + np.trace(real.cov) + np.trace(gen.cov) - 2.0 * inner_roots.sum())
    return max(value, 0.0)


def fid(real_features: Sequence[np.ndarray], gen_features: Sequence[np.ndarray]) -> float:
    real = np.asarray(real_features, dtype=np.float64)
    gen = np.asarray(gen_features, dtype=np.float64)
    if real.ndim == 2 and gen.ndim == 2 and real.shape[1] != gen.shape[1]:
        raise ShapeError(f"feature dimensionality mismatch: {real.shape[1]} vs {gen.shape[1]}")
    return frechet_distance(GaussianMoments.fit(real), GaussianMoments.fit(gen))


# ---- reports ----------------------------------------------------------------

@dataclass(frozen=True)
class QualityReport:
    method: str
    psnr: float
    ssim: float
    ms_ssim: float
    fid: Optional[float]
    n: int

    CSV_HEADER = ("method", "psnr_db", "ssim", "ms_ssim", "fid")

    def as_csv_row(self) -> list:
        return [self.method, self.psnr, self.ssim, self.ms_ssim, self.fid]


def _mean_psnr(values: Sequence[float]) -> float:
    # Identical pairs carry no finite value; inf only when every pair is identical.
    finite = [v for v in values if not math.isinf(v)]
    return float(np.mean(finite)) if finite else math.inf


def quality_report(
    method: str,
    originals: Sequence[ImageTensor],
    obfuscated: Sequence[ImageTensor],
    spec: ExtractorSpec,
) -> QualityReport:
    """Pairwise PSNR/SSIM/MS-SSIM averaged over pairs, FID over the two sets.

    FID is ``None`` with fewer than two pairs.
    """
    if len(originals) != len(obfuscated):
        raise ShapeError(f"{len(originals)} originals vs {len(obfuscated)} obfuscated images")
    if not originals:
        raise MetricError("quality report needs at least one image pair")
    psnrs: List[float] = []
    ssims: List[float] = []
    ms_ssims: List[float] = []
    for ref, test in zip(originals, obfuscated):
        psnrs.append(psnr(ref, test))
        ssims.append(ssim(ref, test))
        ms_ssims.append(ms_ssim(ref, test))
    fid_value: Optional[float] = None
    if len(originals) >= 2:
        fid_value = fid([extract(i, spec) for i in originals], [extract(i, spec) for i in obfuscated])
    report = QualityReport(
        method=method,
        psnr=_mean_psnr(psnrs),
        ssim=float(np.mean(ssims)),
        ms_ssim=float(np.mean(ms_ssims)),
        fid=fid_value,
        n=len(originals),
    )
    log.info("Quality %s over %d pairs: psnr=%.2f ssim=%.4f ms_ssim=%.4f",
             method, report.n, report.psnr, report.ssim, report.ms_ssim)
    return report
