"""Shape-agnostic optimizer steps on flat parameter vectors.

Every step function is pure: it takes an immutable state and returns a new
one. Momentum SGD, AdaGrad and Adam consume a gradient; L-BFGS owns its line
search and therefore takes the loss and gradient callables.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Literal, Optional, Sequence, Tuple

import numpy as np

from ..errors import NonFiniteError, ShapeError, ValidationError

log = logging.getLogger(__name__)

OptimizerKind = Literal["sgdm", "adagrad", "adam", "lbfgs"]
OPTIMIZER_KINDS: Tuple[str, ...] = ("sgdm", "adagrad", "adam", "lbfgs")

DEFAULT_LEARNING_RATES = {
    "sgdm": 2.0,
    "adagrad": 0.1,
    "adam": 0.05,
    "lbfgs": 0.1,
}
CURVATURE_EPS = 1e-10
MAX_BACKTRACKS = 30


@dataclass(frozen=True)
class OptimizerConfig:
    """Hyperparameters; only the fields relevant to ``kind`` are consulted."""

    kind: OptimizerKind = "lbfgs"
    learning_rate: Optional[float] = None
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    memory: int = 10
    max_steps: int = 200
    target_loss: float = 1e-4
    armijo_c: float = 1e-4
    backtrack: float = 0.5

    def __post_init__(self) -> None:
        if self.kind not in OPTIMIZER_KINDS:
            raise ValidationError(f"unknown optimizer kind {self.kind!r}")
        if self.learning_rate is None:
            object.__setattr__(self, "learning_rate", DEFAULT_LEARNING_RATES[self.kind])
        if not self.learning_rate > 0:
            raise ValidationError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.max_steps < 0:
            raise ValidationError(f"max_steps must be >= 0, got {self.max_steps}")
        if self.target_loss < 0:
            raise ValidationError(f"target_loss must be >= 0, got {self.target_loss}")
        if self.kind == "sgdm" and not 0 <= self.momentum < 1:
            raise ValidationError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.kind == "adam":
            for name in ("beta1", "beta2"):
                if not 0 <= getattr(self, name) < 1:
                    raise ValidationError(f"{name} must be in [0, 1), got {getattr(self, name)}")
        if self.kind in ("adagrad", "adam") and not self.epsilon > 0:
            raise ValidationError(f"epsilon must be positive, got {self.epsilon}")
        if self.kind == "lbfgs":
            if self.memory < 1:
                raise ValidationError(f"memory must be >= 1, got {self.memory}")
            if not 0 < self.armijo_c < 1:
                raise ValidationError(f"armijo_c must be in (0, 1), got {self.armijo_c}")
            if not 0 < self.backtrack < 1:
                raise ValidationError(f"backtrack must be in (0, 1), got {self.backtrack}")


def _check_grad(grad: np.ndarray, params: np.ndarray) -> np.ndarray:
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.shape:
        raise ShapeError(f"gradient shape {grad.shape} != parameter shape {params.shape}")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError("non-finite gradient")
    return grad


# ---- momentum SGD -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SgdmState:
    params: np.ndarray
    velocity: np.ndarray

    @classmethod
    def init(cls, params: np.ndarray) -> SgdmState:
        params = np.asarray(params, dtype=np.float64)
        return cls(params.copy(), np.zeros_like(params))


def sgdm_step(state: SgdmState, grad: np.ndarray, lr: float, momentum: float) -> SgdmState:
    """v ← μ·v + g;  ω ← ω − lr·v."""
    grad = _check_grad(grad, state.params)
    velocity = momentum * state.velocity + grad
    return SgdmState(state.params - lr * velocity, velocity)


# ---- AdaGrad ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AdagradState:
    params: np.ndarray
    accum: np.ndarray

    @classmethod
    def init(cls, params: np.ndarray) -> AdagradState:
        params = np.asarray(params, dtype=np.float64)
        return cls(params.copy(), np.zeros_like(params))


def adagrad_step(state: AdagradState, grad: np.ndarray, lr: float, epsilon: float) -> AdagradState:
    """G ← G + g⊙g;  ω ← ω − lr·g/(√G + ε)."""
    grad = _check_grad(grad, state.params)
    accum = state.accum + grad * grad
    return AdagradState(state.params - lr * grad / (np.sqrt(accum) + epsilon), accum)


# ---- Adam -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AdamState:
    params: np.ndarray
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def init(cls, params: np.ndarray) -> AdamState:
        params = np.asarray(params, dtype=np.float64)
        return cls(params.copy(), np.zeros_like(params), np.zeros_like(params))


def adam_step(
    state: AdamState,
    grad: np.ndarray,
    t: int,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
) -> AdamState:
    """Bias-corrected Adam update for step index ``t`` (1-based)."""
    if t < 1:
        raise ValidationError(f"Adam step index must be >= 1, got {t}")
    grad = _check_grad(grad, state.params)
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    return AdamState(state.params - lr * m_hat / (np.sqrt(v_hat) + epsilon), m, v)


# ---- L-BFGS -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LbfgsState:
    params: np.ndarray
    loss: float
    grad: np.ndarray
    s_hist: Tuple[np.ndarray, ...] = ()
    y_hist: Tuple[np.ndarray, ...] = ()
    fell_back: bool = False
    skipped_pair: bool = False
    evaluations: int = field(default=0)

    @classmethod
    def init(cls, params: np.ndarray, loss: float, grad: np.ndarray) -> LbfgsState:
        params = np.asarray(params, dtype=np.float64).copy()
        return cls(params, float(loss), _check_grad(grad, params).copy())


def two_loop_direction(
    grad: np.ndarray,
    s_hist: Sequence[np.ndarray],
    y_hist: Sequence[np.ndarray],
) -> np.ndarray:
    """Return H·grad for the implicit L-BFGS inverse Hessian H.

    Pairs are ordered oldest first; H₀ = γI with γ = sᵀy / yᵀy of the newest
    pair (γ = 1 with empty history).
    """
    q = np.array(grad, dtype=np.float64, copy=True)
    rhos = [1.0 / float(np.dot(y, s)) for s, y in zip(s_hist, y_hist)]
    alphas = [0.0] * len(s_hist)
    for i in range(len(s_hist) - 1, -1, -1):
        alphas[i] = rhos[i] * float(np.dot(s_hist[i], q))
        q -= alphas[i] * y_hist[i]
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= float(np.dot(s, y)) / float(np.dot(y, y))
    for i in range(len(s_hist)):
        beta = rhos[i] * float(np.dot(y_hist[i], q))
        q += (alphas[i] - beta) * s_hist[i]
    return q


def lbfgs_step(
    state: LbfgsState,
    loss_fn: Callable[[np.ndarray], float],
    grad_fn: Callable[[np.ndarray], np.ndarray],
    cfg: OptimizerConfig,
) -> LbfgsState:
    """One quasi-Newton step with Armijo backtracking from a unit step.

    If the line search exhausts its backtracks the step falls back to a plain
    gradient step of length ``cfg.learning_rate`` and ``fell_back`` is set.
    Curvature pairs with sᵀy <= 1e-10 are skipped to keep H positive definite.
    """
    x, f0, g = state.params, state.loss, state.grad
    direction = -two_loop_direction(g, state.s_hist, state.y_hist)
    slope = float(np.dot(g, direction))
    if slope >= 0:
        # Only reachable through rounding; restart from steepest descent.
        direction, slope = -g, -float(np.dot(g, g))

    evaluations = 0
    alpha = 1.0
    accepted: Optional[Tuple[np.ndarray, float]] = None
    for _ in range(MAX_BACKTRACKS):
        trial = x + alpha * direction
        f_trial = loss_fn(trial)
        evaluations += 1
        if np.isfinite(f_trial) and f_trial <= f0 + cfg.armijo_c * alpha * slope:
            accepted = (trial, float(f_trial))
            break
        alpha *= cfg.backtrack

    fell_back = accepted is None
    if accepted is None:
        norm = float(np.linalg.norm(g))
        step = g / norm if norm > 0 else g
        trial = x - cfg.learning_rate * step
        accepted = (trial, float(loss_fn(trial)))
        evaluations += 1
        log.warning("L-BFGS line search exhausted %d backtracks; took a gradient step",
                    MAX_BACKTRACKS)

    x_new, f_new = accepted
    g_new = _check_grad(grad_fn(x_new), x_new)
    s = x_new - x
    y = g_new - g
    s_hist, y_hist = state.s_hist, state.y_hist
    curvature = float(np.dot(s, y))
    skipped = curvature <= CURVATURE_EPS
    if skipped:
        log.debug("Skipping curvature pair (sᵀy = %.3e)", curvature)
    else:
        s_hist = (s_hist + (s,))[-cfg.memory:]
        y_hist = (y_hist + (y,))[-cfg.memory:]
    return replace(
        state,
        params=x_new,
        loss=f_new,
        grad=g_new,
        s_hist=s_hist,
        y_hist=y_hist,
        fell_back=fell_back,
        skipped_pair=skipped,
        evaluations=state.evaluations + evaluations,
    )
