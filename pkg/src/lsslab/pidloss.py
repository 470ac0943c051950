"""Adaptive PID-Tversky loss.

Soft confusion counts drive a differentiable focal Tversky loss; hard
counts gathered once per epoch drive a PID controller that moves the
false-negative weight beta inside a fixed band (alpha = 1 - beta).
A plain binary cross-entropy is provided as the ablation baseline.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InputError, NumericError

EPS = 1e-6
PROB_CLIP = 1e-7


@dataclass(frozen=True)
class ConfusionCounts:
    tp: float
    fp: float
    fn: float
    tn: float
    epsilon: float = EPS

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.fn + other.fn, self.tn + other.tn, self.epsilon)

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn


def _pair(probs, gt):
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(gt).astype(np.float64)
    if p.shape != y.shape:
        raise InputError(f"prediction {p.shape} and target {y.shape} differ in shape")
    return p, y


def soft_confusion(probs, gt) -> ConfusionCounts:
    p, y = _pair(probs, gt)
    return ConfusionCounts(
        tp=float(np.sum(p * y)),
        fp=float(np.sum(p * (1 - y))),
        fn=float(np.sum((1 - p) * y)),
        tn=float(np.sum((1 - p) * (1 - y))),
    )


def hard_confusion(probs, gt, thresh: float = 0.5) -> ConfusionCounts:
    p, y = _pair(probs, gt)
    pred = p > thresh
    truth = y > 0.5
    return ConfusionCounts(
        tp=int(np.count_nonzero(pred & truth)),
        fp=int(np.count_nonzero(pred & ~truth)),
        fn=int(np.count_nonzero(~pred & truth)),
        tn=int(np.count_nonzero(~pred & ~truth)),
    )


def imbalance_signal(c: ConfusionCounts) -> float:
    """Normalized FN-FP imbalance in (-1, 1); positive means under-segmenting."""
    return (c.fn - c.fp) / (c.fn + c.fp + c.epsilon)


def tversky_index(c: ConfusionCounts, alpha: float, beta: float) -> float:
    if alpha < 0 or beta < 0:
        raise InputError("Tversky weights must be nonnegative")
    return (c.tp + c.epsilon) / (c.tp + alpha * c.fp + beta * c.fn + c.epsilon)


@dataclass(frozen=True)
class LossParams:
    gamma: float = 4.0 / 3.0
    epsilon: float = EPS

    def __post_init__(self):
        if not (self.gamma > 0 and self.epsilon > 0):
            raise InputError("gamma and epsilon must be positive")


def focal_tversky_loss(probs, gt, alpha: float, beta: float,
                       lp: LossParams = LossParams()) -> tuple[float, np.ndarray]:
    """``(1 - TI)^gamma`` over soft counts pooled across the whole input.

    Returns the loss and its gradient with respect to ``probs``. Inputs are
    clipped to [1e-7, 1 - 1e-7]; clipped entries get zero gradient.
    """
    p_raw, y = _pair(probs, gt)
    p = np.clip(p_raw, PROB_CLIP, 1 - PROB_CLIP)
    tp = np.sum(p * y)
    fp = np.sum(p * (1 - y))
    fn = np.sum((1 - p) * y)
    num = tp + lp.epsilon
    den = tp + alpha * fp + beta * fn + lp.epsilon
    ti = num / den
    slack = max(1.0 - ti, 0.0)
    loss = slack ** lp.gamma

    # d(tp)/dp = y, d(fp)/dp = 1 - y, d(fn)/dp = -y
    d_num = y
    d_den = y + alpha * (1 - y) - beta * y
    d_ti = (d_num * den - num * d_den) / den ** 2
    if slack > 0:
        grad = -lp.gamma * slack ** (lp.gamma - 1) * d_ti
    else:
        grad = np.zeros_like(p)
    grad = np.where((p_raw >= PROB_CLIP) & (p_raw <= 1 - PROB_CLIP), grad, 0.0)
    return float(loss), grad


def bce_loss(probs, gt) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy and its gradient ``(p - y) / (p (1 - p) N)``."""
    p_raw, y = _pair(probs, gt)
    p = np.clip(p_raw, PROB_CLIP, 1 - PROB_CLIP)
    n = p.size
    loss = -np.mean(y * np.log(p) + (1 - y) * np.log1p(-p))
    grad = (p - y) / (p * (1 - p) * n)
    grad = np.where((p_raw >= PROB_CLIP) & (p_raw <= 1 - PROB_CLIP), grad, 0.0)
    return float(loss), grad


# --------------------------------------------------------------------------
# Controller


@dataclass(frozen=True)
class PidState:
    kp: float = 0.05
    ki: float = 0.005
    kd: float = 0.01
    integral: float = 0.0
    prev_error: float = 0.0
    beta: float = 0.75
    beta_min: float = 0.65
    beta_max: float = 0.85
    integral_max: float = 10.0
    epoch: int = 0

    @property
    def alpha(self) -> float:
        return 1.0 - self.beta


def pid_update(state: PidState, error: float) -> tuple[PidState, float]:
    if not math.isfinite(error):
        raise NumericError(f"controller received non-finite error {error!r}")
    integral = min(max(state.integral + error, -state.integral_max), state.integral_max)
    delta = error - state.prev_error
    u = state.kp * error + state.ki * integral + state.kd * delta
    beta = min(max(state.beta + u, state.beta_min), state.beta_max)
    new = replace(state, integral=integral, prev_error=error, beta=beta, epoch=state.epoch + 1)
    return new, u
