"""Adversarial, reconstruction and contextual-reconstruction objectives.

All expectations and norms are means over batch and elements, which keeps
the loss weights independent of image resolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Callable

import numpy as np

from . import tensor as T
from .tensor import Tensor

COMPONENTS = ("l1_mask", "l1_non_mask", "d_wgan", "g_wgan", "cr", "gp")


@dataclass
class LossWeights:
    l1_mask: float = 10.0
    l1_non_mask: float = 1.0
    d_wgan: float = 1.0
    g_wgan: float = 0.001
    cr: float = 1.0
    gp: float = 10.0
    alpha: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"loss weight {f.name} must be finite and >= 0, got {v}")


@dataclass
class LossReport:
    g_wgan: float
    d_wgan: float
    gp: float
    l1_mask: float
    l1_non_mask: float
    cr: float
    total: float

    def as_row(self) -> list[float]:
        return [self.g_wgan, self.d_wgan, self.gp, self.l1_mask, self.l1_non_mask,
                self.cr, self.total]

    CSV_HEADER = ("step", "g_wgan", "d_wgan", "gp", "l1_mask", "l1_non_mask", "cr", "total")


def _scores(x: Tensor, name: str) -> Tensor:
    if x.size == 0:
        raise ValueError(f"{name}: empty batch")
    return x


def wgan_g_loss(d_fake: Tensor) -> Tensor:
    return T.neg(T.mean(_scores(d_fake, "wgan_g_loss")))


def wgan_d_loss(d_real: Tensor, d_fake: Tensor) -> Tensor:
    """Critic loss in minimisation form: mean(D(fake)) - mean(D(real))."""
    _scores(d_real, "wgan_d_loss")
    _scores(d_fake, "wgan_d_loss")
    if d_real.shape != d_fake.shape:
        raise ValueError(f"real scores {d_real.shape} and fake scores {d_fake.shape} differ")
    return T.sub(T.mean(d_fake), T.mean(d_real))


def interpolate(real: Tensor, fake: Tensor, rng: np.random.Generator) -> Tensor:
    """u·real + (1−u)·fake with one uniform u per batch item."""
    u = rng.uniform(size=(real.shape[0],) + (1,) * (real.ndim - 1)).astype(real.dtype)
    return Tensor(u * real.data + (1 - u) * fake.data)


def gradient_penalty(critic: Callable[[Tensor], Tensor], x_interp: Tensor, mask: Tensor,
                     penalize_known: bool = True) -> Tensor:
    """mean((‖∇D(x) ⊙ (1 − M)‖₂ − 1)²).

    ``penalize_known=False`` masks with M instead, i.e. keeps the gradient on
    the missing region.
    """
    m = mask if penalize_known else T.sub(1.0, mask)
    norm = T.second_order_grad_norm(critic, x_interp, m)
    d = T.sub(norm, 1.0)
    return T.mean(T.mul(d, d))


def _check_same(*ts: Tensor) -> None:
    shape = ts[0].shape
    for t in ts[1:]:
        if t.shape != shape and np.broadcast_shapes(t.shape, shape) != shape:
            raise ValueError(f"shape mismatch: {shape} vs {t.shape}")


def l1_mask(x_hat: Tensor, x: Tensor, mask: Tensor) -> Tensor:
    _check_same(x_hat, x, mask)
    return T.mean(T.absolute(T.mul(T.sub(x_hat, x), mask)))


def l1_non_mask(x_hat: Tensor, x: Tensor, mask: Tensor) -> Tensor:
    _check_same(x_hat, x, mask)
    return T.mean(T.absolute(T.mul(T.sub(x_hat, x), T.sub(1.0, mask))))


def cr_loss(y: Tensor, x: Tensor, incomplete: Tensor, mask: Tensor,
            critic: Callable[[Tensor], Tensor], alpha: float = 1.0) -> Tensor:
    """Hinge on the critic score of Y⊙M + I plus alpha·mean|Y − X|."""
    _check_same(y, x, incomplete, mask)
    composite = T.add(T.mul(y, mask), incomplete)
    hinge = T.mean(T.relu(T.sub(1.0, critic(composite))))
    return T.add(hinge, T.mul(T.mean(T.absolute(T.sub(y, x))), alpha))


def total_loss(components: dict, weights: LossWeights):
    """Weighted sum of the six components (tensors or floats)."""
    missing = [k for k in COMPONENTS if k not in components]
    if missing:
        raise ValueError(f"missing loss components: {missing}")
    return sum(components[k] * getattr(weights, k) for k in COMPONENTS)
