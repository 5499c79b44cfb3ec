"""Segmentation losses: BCE, weighted BCE, soft Dice, and their convex
combination. Each returns (value, gradient-w.r.t.-pred) so training code and
the finite-difference checker consume the same interface.

Predictions are probabilities in [0,1]; targets are hard {0,1} masks of the
same shape. Probabilities are clamped to [delta, 1-delta] before any
logarithm, and the gradient is zero where the clamp was active.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor


def _check_pair(pred: Tensor, target: Tensor) -> None:
    if pred.shape != target.shape:
        raise ShapeError(f"loss: shape mismatch {pred.shape} vs {target.shape}")
    t = target.data
    if not np.all((t == 0) | (t == 1)):
        raise ValueError("loss target must be binary {0,1}")


def bce_loss(pred: Tensor, target: Tensor, delta: float = 1e-7):
    """Mean binary cross-entropy: -(1/N) sum[y ln p + (1-y) ln(1-p)]."""
    _check_pair(pred, target)
    p_raw = pred.data.astype(np.float64, copy=False)
    p = np.clip(p_raw, delta, 1.0 - delta)
    y = target.data.astype(np.float64, copy=False)
    n = p.size
    value = float(-(y * np.log(p) + (1.0 - y) * np.log1p(-p)).mean())
    grad = (p - y) / (p * (1.0 - p)) / n
    grad[(p_raw < delta) | (p_raw > 1.0 - delta)] = 0.0
    return value, Tensor(grad.astype(pred.dtype))


def wce_loss(pred: Tensor, target: Tensor, w: float, delta: float = 1e-7,
             scale_both_terms: bool = False):
    """Weighted BCE: -(1/N) sum[w·y ln p + (1-y) ln(1-p)].

    Only the positive term is weighted, so w > 1 counters foreground scarcity;
    w = 1 reduces exactly to `bce_loss`. `scale_both_terms` instead multiplies
    the whole BCE by w (a global rescale that cannot rebalance classes, kept
    for comparison).
    """
    if w <= 0:
        raise ValueError("positive-class weight must be > 0")
    if scale_both_terms:
        value, grad = bce_loss(pred, target, delta)
        return w * value, Tensor(w * grad.data)
    _check_pair(pred, target)
    p_raw = pred.data.astype(np.float64, copy=False)
    p = np.clip(p_raw, delta, 1.0 - delta)
    y = target.data.astype(np.float64, copy=False)
    n = p.size
    value = float(-(w * y * np.log(p) + (1.0 - y) * np.log1p(-p)).mean())
    grad = (-w * y / p + (1.0 - y) / (1.0 - p)) / n
    grad[(p_raw < delta) | (p_raw > 1.0 - delta)] = 0.0
    return value, Tensor(grad.astype(pred.dtype))


def dice_loss(pred: Tensor, target: Tensor, eps: float = 1.0):
    """Soft Dice loss: 1 - (2 sum(y·p) + eps) / (sum(y) + sum(p) + eps).

    No thresholding of pred; eps rescues the all-empty 0/0 case.
    """
    if eps <= 0:
        raise ValueError("dice smoothing eps must be > 0")
    _check_pair(pred, target)
    p = pred.data.astype(np.float64, copy=False)
    y = target.data.astype(np.float64, copy=False)
    num = 2.0 * (y * p).sum() + eps
    den = y.sum() + p.sum() + eps
    value = float(1.0 - num / den)
    grad = -(2.0 * y * den - num) / (den * den)
    return value, Tensor(grad.astype(pred.dtype))


@dataclass
class LossConfig:
    """Loss selection and constants.

    kind: one of bce, wce, dice, combined. `alpha` mixes WCE and Dice in the
    combined loss ((1-alpha)·WCE + alpha·Dice); alpha=0 reduces to WCE and
    alpha=1 to Dice.
    """

    kind: str = "combined"
    pos_weight: float = 1.0
    dice_eps: float = 1.0
    alpha: float = 0.5
    clamp_delta: float = 1e-7
    wce_scale_both_terms: bool = False

    KINDS = ("bce", "wce", "dice", "combined")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; expected one of {self.KINDS}")
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError("alpha must lie in [0, 1]")
        if self.pos_weight <= 0:
            raise ValueError("pos_weight must be > 0")
        if not (0.0 < self.clamp_delta < 0.5):
            raise ValueError("clamp_delta must lie in (0, 0.5)")
        if self.dice_eps <= 0:
            raise ValueError("dice_eps must be > 0")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "pos_weight": self.pos_weight,
            "dice_eps": self.dice_eps,
            "alpha": self.alpha,
            "clamp_delta": self.clamp_delta,
            "wce_scale_both_terms": self.wce_scale_both_terms,
        }

    @staticmethod
    def from_dict(d: dict) -> "LossConfig":
        return LossConfig(**d)


def combined_loss(pred: Tensor, target: Tensor, cfg: LossConfig):
    """Convex combination (1-alpha)·WCE + alpha·Dice."""
    wv, wg = wce_loss(pred, target, cfg.pos_weight, cfg.clamp_delta,
                      cfg.wce_scale_both_terms)
    dv, dg = dice_loss(pred, target, cfg.dice_eps)
    a = cfg.alpha
    value = (1.0 - a) * wv + a * dv
    grad = (1.0 - a) * wg.data + a * dg.data
    return value, Tensor(grad)


def make_loss(cfg: LossConfig):
    """Bind a LossConfig into a (pred, target) -> (value, grad) callable."""
    if cfg.kind == "bce":
        return lambda p, t: bce_loss(p, t, cfg.clamp_delta)
    if cfg.kind == "wce":
        return lambda p, t: wce_loss(p, t, cfg.pos_weight, cfg.clamp_delta,
                                     cfg.wce_scale_both_terms)
    if cfg.kind == "dice":
        return lambda p, t: dice_loss(p, t, cfg.dice_eps)
    return lambda p, t: combined_loss(p, t, cfg)
