"""Latent representation search: fit ω so that generate(ω) matches a target.

The objective is ``feature_loss(extract(target), extract(generate(ω)))``.
Gradients flow image → extractor VJP → generator VJP. The optimizer works
on the flattened latent; reshaping happens only at the generator boundary.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from ..errors import InversionAborted, NonFiniteError, ShapeError
from ..generator import BlobGeneratorConfig, LatentCode, render, synth_gradient
from ..imaging import ImageTensor
from ..perception import Extractor, ExtractorSpec, feature_loss
from .optimizers import (
    AdagradState,
    AdamState,
    LbfgsState,
    OptimizerConfig,
    SgdmState,
    adagrad_step,
    adam_step,
    lbfgs_step,
    sgdm_step,
)

log = logging.getLogger(__name__)

Clock = Callable[[], float]


@dataclass(frozen=True, eq=False)
class InversionResult:
    """Outcome of one latent search.

    ``latent`` is the best iterate seen, not the last one. ``losses`` and
    ``elapsed`` have one entry per step including step 0 (the initial
    evaluation); ``elapsed`` holds per-step durations in seconds.
    """

    latent: LatentCode
    losses: List[float]
    best_loss: float
    steps_taken: int
    elapsed: List[float]
    converged: bool
    optimizer: str = "lbfgs"
    fallback_steps: List[int] = field(default_factory=list)


class LatentObjective:
    """Loss and gradient of a target image over flat latent vectors.

    Remembers the last evaluation so a line search followed by a gradient
    request at the accepted point does not render twice.
    """

    def __init__(self, target: ImageTensor, cfg: BlobGeneratorConfig, spec: ExtractorSpec) -> None:
        if target.shape != cfg.image_shape:
            raise ShapeError(f"target shape {target.shape} does not match generator {cfg.image_shape}")
        self.cfg = cfg
        self.extractor = Extractor(spec)
        self.target_features, _ = self.extractor.forward(target.data)
        self._last_x: Optional[np.ndarray] = None
        self._last: Optional[Tuple[float, np.ndarray, np.ndarray, list]] = None

    def _evaluate(self, x: np.ndarray):
        if self._last_x is not None and np.array_equal(x, self._last_x):
            return self._last
        w = x.reshape(self.cfg.latent_shape)
        with np.errstate(over="ignore", invalid="ignore"):
            img = render(w, self.cfg)
            features, tape = self.extractor.forward(img)
        loss = feature_loss(self.target_features, features)
        self._last_x = np.array(x, copy=True)
        self._last = (loss, w, features, tape)
        return self._last

    def loss(self, x: np.ndarray) -> float:
        return self._evaluate(x)[0]

    def grad(self, x: np.ndarray) -> np.ndarray:
        loss, w, features, tape = self._evaluate(x)
        d_features = (2.0 / features.size) * (features - self.target_features)
        d_image = self.extractor.backward(tape, d_features)
        with np.errstate(over="ignore", invalid="ignore"):
            return synth_gradient(w, self.cfg, d_image).reshape(-1)

    def loss_and_grad(self, x: np.ndarray) -> Tuple[float, np.ndarray]:
        return self.loss(x), self.grad(x)


def _finite(loss: float, grad: np.ndarray) -> bool:
    return bool(np.isfinite(loss) and np.all(np.isfinite(grad)))


def invert(
    target: ImageTensor,
    cfg: BlobGeneratorConfig,
    spec: ExtractorSpec,
    opt: OptimizerConfig,
    init: LatentCode,
    *,
    clock: Clock = time.perf_counter,
) -> InversionResult:
    """Search the latent of ``target`` starting from ``init``.

    Runs at most ``opt.max_steps`` updates and stops as soon as the best loss
    reaches ``opt.target_loss`` or the gradient vanishes. Raises
    :class:`InversionAborted` (carrying the trajectory so far) when a loss or
    gradient turns non-finite.
    """
    if init.shape != cfg.latent_shape:
        raise ShapeError(f"init latent shape {init.shape} does not match generator {cfg.latent_shape}")
    rows, cols = cfg.latent_shape
    objective = LatentObjective(target, cfg, spec)

    x = init.flatten()
    started = clock()
    loss, grad = objective.loss_and_grad(x)
    losses = [loss]
    elapsed = [clock() - started]
    best_x, best_loss = x, loss
    fallback_steps: List[int] = []

    def snapshot(steps: int) -> InversionResult:
        finite_losses = [v for v in losses if np.isfinite(v)]
        best = min(finite_losses) if finite_losses else float("nan")
        return InversionResult(
            latent=LatentCode.from_flat(best_x, rows, cols) if np.all(np.isfinite(best_x)) else init,
            losses=list(losses),
            best_loss=best,
            steps_taken=steps,
            elapsed=list(elapsed),
            converged=bool(best <= opt.target_loss),
            optimizer=opt.kind,
            fallback_steps=list(fallback_steps),
        )

    if not _finite(loss, grad):
        raise InversionAborted("non-finite loss or gradient at the initial point", snapshot(0))

    sgdm = SgdmState.init(x) if opt.kind == "sgdm" else None
    adagrad = AdagradState.init(x) if opt.kind == "adagrad" else None
    adam = AdamState.init(x) if opt.kind == "adam" else None
    lbfgs = LbfgsState.init(x, loss, grad) if opt.kind == "lbfgs" else None

    steps = 0
    while steps < opt.max_steps and best_loss > opt.target_loss:
        if not np.any(grad):
            log.debug("Gradient vanished at step %d; stopping", steps)
            break
        step = steps + 1
        started = clock()
        try:
            if sgdm is not None:
                sgdm = sgdm_step(sgdm, grad, opt.learning_rate, opt.momentum)
                x = sgdm.params
            elif adagrad is not None:
                adagrad = adagrad_step(adagrad, grad, opt.learning_rate, opt.epsilon)
                x = adagrad.params
            elif adam is not None:
                adam = adam_step(adam, grad, step, opt.learning_rate,
                                 opt.beta1, opt.beta2, opt.epsilon)
                x = adam.params
            else:
                assert lbfgs is not None
                lbfgs = lbfgs_step(lbfgs, objective.loss, objective.grad, opt)
                x = lbfgs.params
                if lbfgs.fell_back:
                    fallback_steps.append(step)
            loss, grad = objective.loss_and_grad(x)
        except NonFiniteError as e:
            raise InversionAborted(str(e), snapshot(steps)) from e
        if not _finite(loss, grad):
            raise InversionAborted(f"non-finite loss or gradient at step {step}", snapshot(steps))

        steps = step
        losses.append(loss)
        elapsed.append(clock() - started)
        if loss < best_loss:
            best_x, best_loss = x, loss
        log.debug("%s step %d: loss=%.6e", opt.kind, step, loss)

    result = snapshot(steps)
    log.info("Inversion (%s): %d steps, best loss %.3e, converged=%s",
             opt.kind, result.steps_taken, result.best_loss, result.converged)
    return result


def steps_to_threshold(losses: List[float], threshold: float) -> Optional[int]:
    """First step whose loss is strictly below ``threshold`` (None if never)."""
    for step, value in enumerate(losses):
        if value < threshold:
            return step
    return None


def trajectory_rows(result: InversionResult) -> List[list]:
    """Rows for the ``step,loss,elapsed_ms`` trajectory CSV."""
    return [
        [step, loss, duration * 1000.0]
        for step, (loss, duration) in enumerate(zip(result.losses, result.elapsed))
    ]
