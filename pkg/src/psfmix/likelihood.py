"""Poisson noise model: deviance, gradients, and the proximal map."""

from __future__ import annotations

from typing import Sequence

import numpy as np

__all__ = [
    "poisson_deviance",
    "mixture_means",
    "deviance_gradient",
    "poisson_prox",
]


def poisson_deviance(photons: np.ndarray, means: np.ndarray) -> float:
    """Poisson deviance sum(p*log(p/mu) + mu - p) with 0*log(0) = 0.

    Zero mean is only admissible where the observed count is zero.
    """
    p = np.asarray(photons, dtype=float)
    mu = np.asarray(means, dtype=float)
    if p.shape != mu.shape:
        raise ValueError("photons and means must have the same shape")
    if np.any(mu < 0.0):
        raise ValueError("means must be non-negative")
    if np.any((mu == 0.0) & (p > 0.0)):
        raise ValueError("zero mean with a positive count has infinite deviance")
    pos = p > 0.0
    out = float(np.sum(mu - p))
    out += float(np.sum(p[pos] * np.log(p[pos] / mu[pos])))
    return out


def mixture_means(
    operators: Sequence,
    weights: Sequence[np.ndarray],
    background: float,
) -> np.ndarray:
    """Per-pixel mean counts: sum of blurred weight maps plus background.

    ``background`` is the integrated per-pixel background count.
    """
    if len(operators) != len(weights):
        raise ValueError("one weight vector per operator required")
    mu = np.full(operators[0].n_pixels, float(background))
    for op, w in zip(operators, weights):
        mu = mu + op.apply(np.asarray(w, dtype=float))
    return mu


def deviance_gradient(
    operators: Sequence,
    photons: np.ndarray,
    means: np.ndarray,
) -> list[np.ndarray]:
    """Per-operator gradient blocks of the deviance: B_k^T (1 - p/mu)."""
    p = np.asarray(photons, dtype=float)
    mu = np.asarray(means, dtype=float)
    if np.any(mu <= 0.0):
        raise ValueError("gradient requires strictly positive means")
    residual = 1.0 - p / mu
    return [op.adjoint(residual) for op in operators]


def poisson_prox(target: np.ndarray, photons: np.ndarray, scale: float) -> np.ndarray:
    """Pointwise minimizer of scale*(mu - p*log(mu)) + (mu - target)^2 / 2.

    Positive quadratic root, evaluated on the numerically stable branch so
    large negative targets do not cancel catastrophically.  Pixels with a
    zero count get the closed form max(0, target - scale).
    """
    t = np.asarray(target, dtype=float)
    p = np.asarray(photons, dtype=float)
    if scale <= 0.0:
        raise ValueError("scale must be positive")
    if np.any(p < 0.0):
        raise ValueError("photon counts must be non-negative")
    diff = t - scale
    root = np.sqrt(diff * diff + 4.0 * scale * p)
    with np.errstate(divide="ignore", invalid="ignore"):
        mu = np.where(diff >= 0.0, 0.5 * (diff + root), 2.0 * scale * p / (root - diff))
    return np.where(p > 0.0, mu, np.maximum(0.0, diff))
