"""Independent reference solvers and instance generators shared by tests.

The projected proximal-gradient solver below makes no use of the package's
splitting scheme; it minimizes the same composite objective
deviance(Bw + beta)/N + sum_k lambda_k ||w_k||_1 over w >= 0 by accelerated
first-order steps, so the two implementations can be compared on final
objective values.
"""

import numpy as np

from psfmix import DenseBlurOperator, GaussianParams, GridGeometry, dense_blur_matrix


def ppg_objective(design, lam, photons, background, w):
    mu = design @ w + background
    n = photons.size
    pos = photons > 0
    dev = float(np.sum(mu - photons))
    dev += float(np.sum(photons[pos] * np.log(photons[pos] / mu[pos])))
    return dev / n + float(lam @ np.abs(w))


def ppg_minimize(matrices, photons, background, penalties,
                 max_iters=200000, tol=1e-13):
    """Projected proximal gradient (FISTA with function restarts)."""
    design = np.hstack(matrices)
    lam = np.concatenate(
        [np.full(m.shape[1], p) for m, p in zip(matrices, penalties)]
    )
    photons = np.asarray(photons, dtype=float)
    n = photons.size

    # Lipschitz bound of the smooth part on the feasible set: means never
    # drop below the background for non-negative weights
    lips = np.linalg.norm(design, 2) ** 2 * max(photons.max(), 1.0) / (background**2 * n)
    step = 1.0 / lips

    w = np.zeros(design.shape[1])
    y = w.copy()
    t_mom = 1.0
    f_prev = ppg_objective(design, lam, photons, background, w)
    stall = 0
    for _ in range(max_iters):
        mu = design @ y + background
        grad = design.T @ (1.0 - photons / mu) / n
        w_new = np.maximum(0.0, y - step * (grad + lam))
        f_new = ppg_objective(design, lam, photons, background, w_new)
        if f_new > f_prev:
            # momentum restart; retry as a plain projected step from w
            y = w.copy()
            t_mom = 1.0
            mu = design @ y + background
            grad = design.T @ (1.0 - photons / mu) / n
            w_new = np.maximum(0.0, y - step * (grad + lam))
            f_new = ppg_objective(design, lam, photons, background, w_new)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_mom**2))
        y = w_new + ((t_mom - 1.0) / t_next) * (w_new - w)
        t_mom = t_next
        if abs(f_prev - f_new) <= tol * max(1.0, abs(f_new)):
            stall += 1
            if stall >= 50:
                w = w_new
                break
        else:
            stall = 0
        w = w_new
        f_prev = f_new
    return w, ppg_objective(design, lam, photons, background, w)


def random_tiny_instance(seed):
    """A small random calibration problem on a 1-D grid.

    At most 32 pixels and 8 atoms, so dense oracle solves stay instant.
    """
    rng = np.random.default_rng(seed)
    n_cols = int(rng.integers(12, 33))
    geometry = GridGeometry(1, 1, n_cols, 100.0, 100.0)
    centers = geometry.pixel_centers()

    n_kernels = int(rng.integers(1, 3))
    total_atoms = int(rng.integers(n_kernels, 9))
    splits = sorted(rng.choice(np.arange(1, total_atoms), size=n_kernels - 1,
                               replace=False).tolist()) if n_kernels > 1 else []
    counts = np.diff([0] + splits + [total_atoms])

    kernels, matrices, positions = [], [], []
    for count in counts:
        kernel = GaussianParams(float(rng.uniform(0.08, 0.3)), float(rng.uniform(0.08, 0.3)))
        idx = rng.choice(n_cols, size=int(count), replace=False)
        pos = centers[np.sort(idx)]
        kernels.append(kernel)
        positions.append(pos)
        matrices.append(dense_blur_matrix(kernel, pos, geometry))

    background = float(rng.uniform(0.5, 3.0))
    mu = np.full(n_cols, background)
    for m in matrices:
        w_true = rng.uniform(0.0, 0.4, size=m.shape[1])
        w_true[rng.random(m.shape[1]) < 0.5] = 0.0
        mu = mu + m @ w_true
    photons = rng.poisson(mu).astype(float)
    penalties = [float(rng.uniform(0.002, 0.05)) for _ in matrices]

    operators = [DenseBlurOperator(m) for m in matrices]
    return {
        "geometry": geometry,
        "kernels": kernels,
        "positions": positions,
        "matrices": matrices,
        "operators": operators,
        "photons": photons,
        "background": background,
        "penalties": penalties,
    }
