"""Loss functions and counter accuracy for the dual-discriminator setup.

Pure numpy computations over batches; no autodiff framework involved.
Probabilities are clamped to [eps, 1 - eps] before any logarithm so every
loss stays finite.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .fem import ParameterError

LOG_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    """Weights of the composite generator objective."""

    reconstruction: float = 1.0
    adversarial: float = 0.01
    counting: float = 0.1

    def __post_init__(self):
        if min(self.reconstruction, self.adversarial, self.counting) < 0:
            raise ParameterError(f"loss weights must be non-negative: {self}")


@dataclass(frozen=True, eq=False)
class GeneratorBatch:
    """One evaluation batch: designs, fakes, discriminator outputs, counts."""

    true_designs: np.ndarray      # (N, ...) pixel values
    pred_designs: np.ndarray      # same shape
    disc_probs: np.ndarray        # (N,) D(G(z/c)) in [0, 1]
    true_counts: np.ndarray       # (N,) bar-count bounds
    pred_counts: np.ndarray       # (N,) counted bars of the fakes
    counter_accuracy: float       # accuracy of the counter on real designs

    def __post_init__(self):
        x = np.asarray(self.true_designs, dtype=float)
        xh = np.asarray(self.pred_designs, dtype=float)
        p = np.asarray(self.disc_probs, dtype=float)
        y = np.asarray(self.true_counts, dtype=float)
        yh = np.asarray(self.pred_counts, dtype=float)
        n = x.shape[0] if x.ndim else 0
        if n < 1:
            raise ParameterError("batch must contain at least one sample")
        if xh.shape != x.shape:
            raise ParameterError(f"design shapes differ: {x.shape} vs {xh.shape}")
        for name, arr in (("disc_probs", p), ("true_counts", y), ("pred_counts", yh)):
            if arr.shape != (n,):
                raise ParameterError(f"{name} must have shape ({n},), got {arr.shape}")
        if np.any(p < 0) or np.any(p > 1):
            raise ParameterError("discriminator probabilities must lie in [0, 1]")
        if not (0.0 <= self.counter_accuracy <= 1.0):
            raise ParameterError(f"counter accuracy must lie in [0, 1], got {self.counter_accuracy}")
        for name, arr in (
            ("true_designs", x),
            ("pred_designs", xh),
            ("disc_probs", p),
            ("true_counts", y),
            ("pred_counts", yh),
        ):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def size(self) -> int:
        return self.true_designs.shape[0]


def _clamped_log(p: np.ndarray) -> np.ndarray:
    return np.log(np.clip(p, LOG_EPS, 1.0 - LOG_EPS))


def reconstruction_loss(batch: GeneratorBatch) -> float:
    """Mean over samples of the mean squared pixel error."""
    diff = batch.true_designs - batch.pred_designs
    return float((diff.reshape(batch.size, -1) ** 2).mean(axis=1).mean())


def counting_loss(batch: GeneratorBatch, strict: bool = False) -> float:
    """Fraction of fakes whose bar count reaches the bound.

    The printed objective uses >=; pass strict=True for the
    strictly-greater variant.
    """
    if strict:
        hits = batch.pred_counts > batch.true_counts
    else:
        hits = batch.pred_counts >= batch.true_counts
    return float(np.mean(hits))


def adversarial_loss_generator(batch: GeneratorBatch) -> float:
    """Mean log(1 - D(G(z/c))), clamped."""
    return float(np.mean(_clamped_log(1.0 - batch.disc_probs)))


def discriminator_loss(real_probs: Sequence[float], fake_probs: Sequence[float]) -> float:
    """-(mean log D(real) + mean log(1 - D(fake))), negated for minimization."""
    real = np.asarray(real_probs, dtype=float)
    fake = np.asarray(fake_probs, dtype=float)
    for name, arr in (("real", real), ("fake", fake)):
        if arr.size == 0:
            raise ParameterError(f"{name} probabilities must be non-empty")
        if np.any(arr < 0) or np.any(arr > 1):
            raise ParameterError(f"{name} probabilities must lie in [0, 1]")
    return float(-(np.mean(_clamped_log(real)) + np.mean(_clamped_log(1.0 - fake))))


@dataclass(frozen=True)
class GeneratorLossBreakdown:
    total: float
    reconstruction: float
    adversarial: float
    counting: float
    reconstruction_term: float
    adversarial_term: float
    counting_term: float


def generator_loss(
    batch: GeneratorBatch,
    weights: LossWeights = LossWeights(),
    strict_counting: bool = False,
) -> GeneratorLossBreakdown:
    """Composite objective: w_rec * L_rec + w_adv * L_adv + w_cnt * Acc * L_cnt."""
    l_rec = reconstruction_loss(batch)
    l_adv = adversarial_loss_generator(batch)
    l_cnt = counting_loss(batch, strict=strict_counting)
    t_rec = weights.reconstruction * l_rec
    t_adv = weights.adversarial * l_adv
    t_cnt = weights.counting * batch.counter_accuracy * l_cnt
    return GeneratorLossBreakdown(
        total=t_rec + t_adv + t_cnt,
        reconstruction=l_rec,
        adversarial=l_adv,
        counting=l_cnt,
        reconstruction_term=t_rec,
        adversarial_term=t_adv,
        counting_term=t_cnt,
    )


def counter_accuracy(
    true_counts: Sequence[float],
    pred_counts: Sequence[float],
    tolerance_bars: int = 0,
) -> float:
    """Fraction of predictions within tolerance_bars of the true counts."""
    true = np.asarray(true_counts, dtype=float)
    pred = np.asarray(pred_counts, dtype=float)
    if true.shape != pred.shape:
        raise ParameterError(f"count arrays must match: {true.shape} vs {pred.shape}")
    if true.size == 0:
        raise ParameterError("count arrays must be non-empty")
    return float(np.mean(np.abs(pred - true) <= tolerance_bars + 1e-9))
