"""Seeded optimizer comparison: loss against steps and elapsed time per optimizer.

Targets are rendered from known standard-normal latents, so every run has a
ground-truth optimum at loss 0. Per-step rows are aggregated across seeds by
median (a seed that stopped early keeps contributing its final loss).
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import InversionAborted, ValidationError
from ..generator import BlobGeneratorConfig, LatentCode, random_latent, synth_generate
from ..imaging import ImageTensor
from ..perception import ExtractorSpec
from .optimizers import OPTIMIZER_KINDS, OptimizerConfig
from .search import InversionResult, invert, steps_to_threshold

log = logging.getLogger(__name__)

# Offsets keep target latents and random initializations on disjoint streams.
TARGET_SEED_OFFSET = 10_000
INIT_SEED_OFFSET = 20_000


@dataclass(frozen=True, eq=False)
class BenchmarkTarget:
    seed: int
    latent: LatentCode
    image: ImageTensor


@dataclass(frozen=True)
class ComparisonRow:
    optimizer: str
    step: int
    loss: float
    elapsed_ms: float

    CSV_HEADER = ("optimizer", "step", "loss", "elapsed_ms")

    def as_csv_row(self) -> list:
        return [self.optimizer, self.step, self.loss, self.elapsed_ms]


@dataclass(frozen=True, eq=False)
class OptimizerComparison:
    rows: List[ComparisonRow]
    steps_to_threshold: Dict[str, List[Optional[int]]]
    threshold: float
    n_seeds: int

    def median_steps(self, kind: str) -> float:
        """Median steps-to-threshold; a seed that never got there counts as +inf."""
        values = [math.inf if s is None else float(s) for s in self.steps_to_threshold[kind]]
        return float(np.median(values))

    def summary(self) -> List[dict]:
        out = []
        for kind, values in self.steps_to_threshold.items():
            reached = sum(1 for v in values if v is not None)
            out.append({
                "optimizer": kind,
                "median_steps": self.median_steps(kind),
                "reached": reached,
                "seeds": len(values),
            })
        return out


def benchmark_targets(cfg: BlobGeneratorConfig, n_seeds: int, base_seed: int = 0) -> List[BenchmarkTarget]:
    """Render ``n_seeds`` targets from seeded ground-truth latents."""
    if n_seeds < 1:
        raise ValidationError(f"need at least one seed, got {n_seeds}")
    targets = []
    for seed in range(base_seed, base_seed + n_seeds):
        latent = random_latent(cfg, TARGET_SEED_OFFSET + seed)
        targets.append(BenchmarkTarget(seed, latent, synth_generate(latent, cfg)))
    return targets


def random_init(cfg: BlobGeneratorConfig, seed: int) -> LatentCode:
    """Seeded random starting point for the average-face comparison."""
    return random_latent(cfg, INIT_SEED_OFFSET + seed)


def run_inversion(
    target: ImageTensor,
    cfg: BlobGeneratorConfig,
    spec: ExtractorSpec,
    opt: OptimizerConfig,
    init: LatentCode,
    clock: Callable[[], float],
) -> InversionResult:
    """``invert`` that keeps the partial trajectory of an aborted run."""
    try:
        return invert(target, cfg, spec, opt, init, clock=clock)
    except InversionAborted as e:
        log.warning("%s", e)
        return e.result


def _aggregate(kind: str, results: Sequence[InversionResult], max_steps: int) -> List[ComparisonRow]:
    horizon = max(len(r.losses) for r in results)
    horizon = min(horizon, max_steps + 1)
    losses = np.empty((len(results), horizon))
    elapsed = np.empty((len(results), horizon))
    for i, r in enumerate(results):
        curve = np.asarray(r.losses, dtype=np.float64)
        cumulative = np.cumsum(np.asarray(r.elapsed, dtype=np.float64)) * 1000.0
        n = len(curve)
        losses[i, :n] = curve
        losses[i, n:] = curve[-1]
        elapsed[i, :n] = cumulative
        elapsed[i, n:] = cumulative[-1]
    loss_median = np.median(losses, axis=0)
    time_median = np.median(elapsed, axis=0)
    return [
        ComparisonRow(kind, step, float(loss_median[step]), float(time_median[step]))
        for step in range(horizon)
    ]


def compare_optimizers(
    cfg: BlobGeneratorConfig,
    spec: ExtractorSpec,
    base: OptimizerConfig,
    *,
    kinds: Sequence[str] = OPTIMIZER_KINDS,
    n_seeds: int = 20,
    threshold: float = 1e-3,
    init: Optional[LatentCode] = None,
    clock: Callable[[], float] = time.perf_counter,
    progress: Optional[Callable[[], None]] = None,
) -> OptimizerComparison:
    """Invert every benchmark target with each optimizer kind.

    ``base`` supplies step budget and stopping target; each kind gets its own
    default learning rate unless ``base`` pins one and shares its kind.
    ``init`` is used for every seed when given; otherwise each seed starts from
    its own seeded random latent. ``progress`` is called once per finished
    inversion.
    """
    for kind in kinds:
        if kind not in OPTIMIZER_KINDS:
            raise ValidationError(f"unknown optimizer kind {kind!r}")

    targets = benchmark_targets(cfg, n_seeds)
    rows: List[ComparisonRow] = []
    reached: Dict[str, List[Optional[int]]] = {}
    for kind in kinds:
        opt = base if kind == base.kind else replace(base, kind=kind, learning_rate=None)
        results: List[InversionResult] = []
        for target in targets:
            start = init if init is not None else random_init(cfg, target.seed)
            results.append(run_inversion(target.image, cfg, spec, opt, start, clock))
            if progress is not None:
                progress()
        reached[kind] = [steps_to_threshold(r.losses, threshold) for r in results]
        rows.extend(_aggregate(kind, results, opt.max_steps))
        log.info("%s: median steps to %.0e = %s", kind, threshold,
                 np.median([math.inf if s is None else s for s in reached[kind]]))
    return OptimizerComparison(rows, reached, threshold, n_seeds)


def init_comparison(
    cfg: BlobGeneratorConfig,
    spec: ExtractorSpec,
    opt: OptimizerConfig,
    mean_init: LatentCode,
    *,
    n_seeds: int = 20,
    threshold: float = 1e-3,
    clock: Callable[[], float] = time.perf_counter,
) -> Tuple[List[Optional[int]], List[Optional[int]]]:
    """Steps-to-threshold from the mean latent vs. from seeded random starts."""
    targets = benchmark_targets(cfg, n_seeds)
    from_mean = []
    from_random = []
    for target in targets:
        r_mean = run_inversion(target.image, cfg, spec, opt, mean_init, clock)
        r_rand = run_inversion(target.image, cfg, spec, opt, random_init(cfg, target.seed), clock)
        from_mean.append(steps_to_threshold(r_mean.losses, threshold))
        from_random.append(steps_to_threshold(r_rand.losses, threshold))
    return from_mean, from_random
