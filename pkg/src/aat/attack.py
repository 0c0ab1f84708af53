"""PGD adversarial example generation against any way of the model.

The attack maximizes the chosen way's cross-entropy by iterated gradient
ascent on the input, projecting the perturbation back into the epsilon
ball (coordinate clip for l-inf, radial rescale for l2) and clamping
pixels to the configured range (default [0, 1]) after every step. Model parameters are read-only
throughout, and the returned array is a plain constant: no gradient
graph leaks back to the caller.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from . import prng
from .errors import ValidationError
from .model import ThreeWayModel
from .tensor import Tensor, backward, cross_entropy

_NORM_FLOOR = 1e-12  # skip l2 steps on samples with vanishing gradient


@dataclass
class AttackConfig:
    norm: str = "l2"  # "l2" or "linf"
    epsilon: float = 0.3
    alpha: float = 0.01
    steps: int = 10
    random_start: bool = False
    seed: int = 0
    clamp: Optional[Tuple[float, float]] = (0.0, 1.0)

    def __post_init__(self):
        if self.norm not in ("l2", "linf"):
            raise ValidationError(f"unknown norm {self.norm!r}")
        if not np.isfinite(self.epsilon) or self.epsilon < 0:
            raise ValidationError(f"epsilon must be finite and >= 0, got {self.epsilon}")
        if not np.isfinite(self.alpha) or self.alpha <= 0:
            raise ValidationError(f"alpha must be finite and > 0, got {self.alpha}")
        if self.steps < 0:
            raise ValidationError(f"steps must be >= 0, got {self.steps}")


def _flat_norms(delta: np.ndarray) -> np.ndarray:
    return np.sqrt((delta.reshape(delta.shape[0], -1) ** 2).sum(axis=1))


def _project(delta: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    if cfg.norm == "linf":
        return np.clip(delta, -cfg.epsilon, cfg.epsilon)
    norms = _flat_norms(delta)
    factor = np.ones_like(norms)
    over = norms > cfg.epsilon
    factor[over] = cfg.epsilon / norms[over]
    return delta * factor.reshape(-1, *([1] * (delta.ndim - 1)))


def pgd(model: ThreeWayModel, x: np.ndarray, y: np.ndarray, way: str,
        cfg: AttackConfig) -> np.ndarray:
    """Return adversarial inputs within the epsilon ball around x."""
    x = np.asarray(x, dtype=np.float32)
    if cfg.epsilon == 0.0:
        return x.copy()

    if cfg.random_start:
        rng = prng.stream(cfg.seed, prng.STREAM_ATTACK)
        if cfg.norm == "linf":
            delta = rng.uniform(-cfg.epsilon, cfg.epsilon, size=x.shape).astype(np.float32)
        else:
            direction = rng.standard_normal(x.shape).astype(np.float32)
            norms = np.maximum(_flat_norms(direction), _NORM_FLOOR)
            radii = cfg.epsilon * rng.uniform(0.0, 1.0, size=len(x)) ** (1.0 / x[0].size)
            delta = direction * (radii / norms).reshape(-1, *([1] * (x.ndim - 1)))
        if cfg.clamp is not None:
            delta = np.clip(x + delta, *cfg.clamp) - x
    else:
        delta = np.zeros_like(x)

    for _ in range(cfg.steps):
        xt = Tensor(x + delta, requires_grad=True)
        loss = cross_entropy(model.forward_way(xt, way), y)
        backward(loss, wrt=[xt])
        g = xt.grad
        if cfg.norm == "linf":
            delta = delta + cfg.alpha * np.sign(g)
        else:
            norms = _flat_norms(g)
            step_scale = np.where(norms < _NORM_FLOOR, 0.0, cfg.alpha / np.maximum(norms, _NORM_FLOOR))
            delta = delta + g * step_scale.reshape(-1, *([1] * (x.ndim - 1)))
        delta = _project(delta.astype(np.float32), cfg)
        if cfg.clamp is not None:
            delta = np.clip(x + delta, *cfg.clamp) - x

    return (x + delta).astype(np.float32)


def pseudo_label(model: ThreeWayModel, x_adv: np.ndarray, y: np.ndarray,
                 way: str) -> Tuple[np.ndarray, np.ndarray]:
    """Model's own predictions on x_adv, plus the misclassified mask.

    Only masked samples carry the asymmetric losses; ties in the argmax
    resolve to the lowest class index.
    """
    logits = model.forward_way(Tensor(x_adv), way)
    yhat = logits.data.argmax(axis=1)
    return yhat, yhat != np.asarray(y)
