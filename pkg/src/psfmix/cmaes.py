"""Covariance matrix adaptation evolution strategy on a bounded box.

Standard (mu/mu_w, lambda) CMA-ES with cumulative step-size adaptation and
rank-one plus rank-mu covariance updates, plus IPOP restarts with doubled
population.  Coordinates are normalized to the unit box internally so one
step size serves parameters of very different magnitudes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = ["CmaResult", "cma_minimize"]

_RESAMPLE_LIMIT = 100


@dataclass
class CmaResult:
    x: np.ndarray
    fun: float
    n_evals: int
    n_restarts: int


class _Run:
    """One CMA-ES run in unit-box coordinates."""

    def __init__(self, dim: int, popsize: int, sigma0: float, rng: np.random.Generator):
        self.dim = dim
        self.popsize = popsize
        self.rng = rng
        self.mean = rng.uniform(0.25, 0.75, dim)
        self.sigma = sigma0

        mu = popsize // 2
        raw = np.log(0.5 * (popsize + 1)) - np.log(np.arange(1, mu + 1))
        self.weights = raw / raw.sum()
        self.mu = mu
        self.mu_eff = 1.0 / np.sum(self.weights**2)

        d, mu_eff = float(dim), self.mu_eff
        self.c_sigma = (mu_eff + 2.0) / (d + mu_eff + 5.0)
        self.d_sigma = 1.0 + 2.0 * max(0.0, np.sqrt((mu_eff - 1.0) / (d + 1.0)) - 1.0) + self.c_sigma
        self.c_c = (4.0 + mu_eff / d) / (d + 4.0 + 2.0 * mu_eff / d)
        self.c_1 = 2.0 / ((d + 1.3) ** 2 + mu_eff)
        self.c_mu = min(1.0 - self.c_1, 2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((d + 2.0) ** 2 + mu_eff))
        self.chi_n = np.sqrt(d) * (1.0 - 1.0 / (4.0 * d) + 1.0 / (21.0 * d * d))

        self.cov = np.eye(dim)
        self.p_sigma = np.zeros(dim)
        self.p_c = np.zeros(dim)
        self._gen = 0

    def ask(self) -> tuple[np.ndarray, np.ndarray]:
        """Sample a population inside the unit box; resample then clamp."""
        cov = 0.5 * (self.cov + self.cov.T)
        eigvals, basis = np.linalg.eigh(cov)
        scales = np.sqrt(np.clip(eigvals, 1e-20, None))
        self._basis, self._scales = basis, scales

        points = np.empty((self.popsize, self.dim))
        steps = np.empty((self.popsize, self.dim))
        for i in range(self.popsize):
            for _ in range(_RESAMPLE_LIMIT):
                y = basis @ (scales * self.rng.standard_normal(self.dim))
                x = self.mean + self.sigma * y
                if np.all((x >= 0.0) & (x <= 1.0)):
                    break
            else:
                x = np.clip(x, 0.0, 1.0)
                y = (x - self.mean) / self.sigma
            points[i] = x
            steps[i] = y
        return points, steps

    def tell(self, steps: np.ndarray, values: np.ndarray) -> None:
        order = np.argsort(values)
        selected = steps[order[: self.mu]]
        y_w = self.weights @ selected
        self.mean = self.mean + self.sigma * y_w

        inv_sqrt = self._basis @ ((self._basis / self._scales).T @ y_w)
        self.p_sigma = (1.0 - self.c_sigma) * self.p_sigma + np.sqrt(
            self.c_sigma * (2.0 - self.c_sigma) * self.mu_eff
        ) * inv_sqrt
        h_sigma = float(
            np.linalg.norm(self.p_sigma)
            / np.sqrt(1.0 - (1.0 - self.c_sigma) ** (2.0 * (self._gen + 1)))
            < (1.4 + 2.0 / (self.dim + 1.0)) * self.chi_n
        )
        self.p_c = (1.0 - self.c_c) * self.p_c + h_sigma * np.sqrt(
            self.c_c * (2.0 - self.c_c) * self.mu_eff
        ) * y_w

        rank_mu = selected.T @ (self.weights[:, None] * selected)
        self.cov = (
            (1.0 - self.c_1 - self.c_mu) * self.cov
            + self.c_1
            * (np.outer(self.p_c, self.p_c) + (1.0 - h_sigma) * self.c_c * (2.0 - self.c_c) * self.cov)
            + self.c_mu * rank_mu
        )
        self.sigma *= np.exp(
            (self.c_sigma / self.d_sigma) * (np.linalg.norm(self.p_sigma) / self.chi_n - 1.0)
        )
        self._gen += 1

    def degenerate(self) -> bool:
        return (
            self.sigma * float(np.sqrt(np.max(np.diag(self.cov)))) < 1e-12
            or float(np.max(self._scales) / np.min(self._scales)) > 1e7
        )


def cma_minimize(
    fn: Callable[[np.ndarray], float],
    lower,
    upper,
    seed: int,
    max_evals: int = 20000,
    sigma0: float = 0.25,
    popsize: int | None = None,
    tol_fun: float = 1e-10,
    restarts: int = 3,
) -> CmaResult:
    """Minimize a black-box function over the box [lower, upper].

    Deterministic for a fixed seed.  Each restart doubles the population and
    draws a fresh start point; the best point ever evaluated is returned in
    the original coordinates.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if lower.shape != upper.shape or lower.ndim != 1:
        raise ValueError("bounds must be matching 1-d arrays")
    if np.any(upper <= lower):
        raise ValueError("upper bounds must exceed lower bounds")
    dim = lower.size
    span = upper - lower
    rng = np.random.default_rng(seed)
    base_pop = popsize if popsize is not None else 4 + int(3 * np.log(dim))

    best_x = None
    best_f = np.inf
    n_evals = 0
    n_restarts = 0

    for attempt in range(restarts + 1):
        if n_evals >= max_evals:
            break
        if attempt > 0:
            n_restarts += 1
        run = _Run(dim, base_pop * (2**attempt), sigma0, rng)
        window = 10 + int(np.ceil(30.0 * dim / run.popsize))
        history: list[float] = []
        while n_evals < max_evals:
            points, steps = run.ask()
            values = np.empty(run.popsize)
            for i in range(run.popsize):
                values[i] = float(fn(lower + span * points[i]))
                n_evals += 1
            order = int(np.argmin(values))
            if values[order] < best_f:
                best_f = values[order]
                best_x = lower + span * points[order]
            run.tell(steps, values)

            history.append(float(values.min()))
            if len(history) > window:
                history.pop(0)
                if max(history) - min(history) < tol_fun:
                    break
            if run.degenerate():
                break

    return CmaResult(x=np.asarray(best_x), fun=best_f, n_evals=n_evals, n_restarts=n_restarts)
