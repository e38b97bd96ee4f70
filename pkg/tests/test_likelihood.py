"""Poisson deviance, gradients, and the proximal map."""

import numpy as np
import pytest

from psfmix import (
    DenseBlurOperator,
    deviance_gradient,
    mixture_means,
    poisson_deviance,
    poisson_prox,
)


def random_model(seed, n_pixels=16, n_atoms=4, n_ops=1):
    rng = np.random.default_rng(seed)
    ops = [DenseBlurOperator(rng.uniform(0.0, 2.0, size=(n_pixels, n_atoms)))
           for _ in range(n_ops)]
    weights = [rng.uniform(0.0, 1.5, size=n_atoms) for _ in range(n_ops)]
    background = float(rng.uniform(0.5, 3.0))
    return ops, weights, background, rng


class TestPoissonDeviance:
    def test_zero_at_saturation(self):
        p = np.array([0.0, 1.0, 4.0, 9.0])
        assert poisson_deviance(p, p.copy()) == 0.0

    def test_zero_count_term_is_the_mean(self):
        assert poisson_deviance(np.array([0.0]), np.array([2.0])) == 2.0

    def test_two_against_one(self):
        val = poisson_deviance(np.array([2.0]), np.array([1.0]))
        np.testing.assert_allclose(val, 0.3862943611198906, rtol=1e-14)

    def test_zero_mean_with_counts_rejected(self):
        with pytest.raises(ValueError):
            poisson_deviance(np.array([1.0]), np.array([0.0]))

    def test_negative_mean_rejected(self):
        with pytest.raises(ValueError):
            poisson_deviance(np.array([1.0]), np.array([-0.5]))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            poisson_deviance(np.zeros(3), np.ones(4))

    def test_nonnegative_everywhere(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            mu = rng.uniform(0.1, 20.0, size=12)
            p = rng.poisson(mu).astype(float)
            assert poisson_deviance(p, mu) >= 0.0

    def test_convex_in_the_mean(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            p = rng.poisson(5.0, size=10).astype(float)
            mu1 = rng.uniform(0.5, 10.0, size=10)
            mu2 = rng.uniform(0.5, 10.0, size=10)
            mid = poisson_deviance(p, 0.5 * (mu1 + mu2))
            avg = 0.5 * (poisson_deviance(p, mu1) + poisson_deviance(p, mu2))
            assert mid <= avg + 1e-12


class TestMixtureMeans:
    def test_sums_blurred_blocks_over_background(self):
        ops, weights, background, _ = random_model(0, n_ops=2)
        mu = mixture_means(ops, weights, background)
        expected = background + ops[0].apply(weights[0]) + ops[1].apply(weights[1])
        np.testing.assert_allclose(mu, expected, rtol=1e-14)

    def test_count_mismatch_rejected(self):
        ops, weights, background, _ = random_model(1, n_ops=2)
        with pytest.raises(ValueError):
            mixture_means(ops, weights[:1], background)


class TestDevianceGradient:
    def test_vanishes_at_saturation(self):
        ops, weights, background, _ = random_model(2)
        mu = mixture_means(ops, weights, background)
        grads = deviance_gradient(ops, mu.copy(), mu)
        for g in grads:
            np.testing.assert_allclose(g, 0.0, atol=1e-12)

    def test_matches_central_differences(self):
        h = 1e-5
        for seed in range(5):
            ops, weights, background, rng = random_model(seed, n_pixels=16, n_atoms=4)
            mu = mixture_means(ops, weights, background)
            photons = rng.poisson(mu).astype(float)
            grads = deviance_gradient(ops, photons, mu)
            for k, w in enumerate(weights):
                for m in range(w.size):
                    bumped = [x.copy() for x in weights]
                    bumped[k][m] += h
                    up = poisson_deviance(photons, mixture_means(ops, bumped, background))
                    bumped[k][m] -= 2 * h
                    dn = poisson_deviance(photons, mixture_means(ops, bumped, background))
                    fd = (up - dn) / (2 * h)
                    np.testing.assert_allclose(
                        grads[k][m], fd, rtol=1e-5, atol=1e-7 * max(1.0, abs(fd))
                    )

    def test_matches_central_differences_on_larger_models(self):
        h = 1e-5
        for seed in range(3):
            ops, weights, background, rng = random_model(
                100 + seed, n_pixels=64, n_atoms=8, n_ops=2
            )
            mu = mixture_means(ops, weights, background)
            photons = rng.poisson(mu).astype(float)
            grads = deviance_gradient(ops, photons, mu)
            flat = np.concatenate(grads)
            direction = rng.normal(size=flat.size)
            direction /= np.linalg.norm(direction)
            split = np.split(direction, [weights[0].size])

            def shifted(t):
                moved = [w + t * d for w, d in zip(weights, split)]
                return poisson_deviance(photons, mixture_means(ops, moved, background))

            fd = (shifted(h) - shifted(-h)) / (2 * h)
            np.testing.assert_allclose(flat @ direction, fd, rtol=1e-5, atol=1e-8)

    def test_radial_derivative_identity(self):
        # d/dt deviance(t * w) at t=1 equals sum (1 - p/mu)(mu - background)
        ops, weights, background, rng = random_model(7, n_ops=2)
        mu = mixture_means(ops, weights, background)
        for photons in (mu.copy(), np.zeros_like(mu), rng.poisson(mu).astype(float)):
            grads = deviance_gradient(ops, photons, mu)
            inner = sum(float(g @ w) for g, w in zip(grads, weights))
            expected = float(np.sum((1.0 - photons / mu) * (mu - background)))
            np.testing.assert_allclose(inner, expected, rtol=1e-8, atol=1e-10)
        # saturated counts make the radial derivative vanish
        grads = deviance_gradient(ops, mu.copy(), mu)
        assert abs(sum(float(g @ w) for g, w in zip(grads, weights))) <= 1e-10
        # an all-zero acquisition leaves exactly the signal mass
        grads = deviance_gradient(ops, np.zeros_like(mu), mu)
        inner = sum(float(g @ w) for g, w in zip(grads, weights))
        np.testing.assert_allclose(inner, float(np.sum(mu - background)), rtol=1e-10)

    def test_zero_mean_rejected(self):
        ops, weights, _, _ = random_model(3)
        with pytest.raises(ValueError):
            deviance_gradient(ops, np.zeros(16), np.zeros(16))


class TestPoissonProx:
    def test_quadratic_root_case(self):
        # scale 1, target 2, count 3: mu solves mu^2 - mu - 3 = 0
        mu = poisson_prox(np.array([2.0]), np.array([3.0]), 1.0)
        np.testing.assert_allclose(mu, (1.0 + np.sqrt(13.0)) / 2.0, rtol=1e-14)
        np.testing.assert_allclose(mu, 2.302775637731995, rtol=1e-12)

    def test_zero_count_closed_form(self):
        target = np.array([3.0, 0.5, -2.0])
        mu = poisson_prox(target, np.zeros(3), 1.0)
        np.testing.assert_allclose(mu, [2.0, 0.0, 0.0])

    def test_scale_limits(self):
        # vanishing scale: the quadratic dominates, mu hugs the target
        p = np.array([3.0, 7.0, 1.0])
        mu = poisson_prox(np.array([10.0, 0.1, 5.0]), p, 1e-10)
        np.testing.assert_allclose(mu, [10.0, 0.1, 5.0], atol=1e-7)
        # huge scale: the data term dominates, mu hugs the counts
        mu = poisson_prox(np.array([10.0, 0.1, 5.0]), p, 1e10)
        np.testing.assert_allclose(mu, p, rtol=1e-8)

    def test_optimality_condition(self):
        # stationarity: scale * (1 - p/mu) + (mu - target) = 0 wherever p > 0
        rng = np.random.default_rng(17)
        target = rng.normal(0.0, 50.0, size=10000)
        photons = rng.poisson(5.0, size=10000).astype(float)
        scale = 0.37
        mu = poisson_prox(target, photons, scale)
        pos = photons > 0
        residual = scale * (1.0 - photons[pos] / mu[pos]) + (mu[pos] - target[pos])
        assert np.max(np.abs(residual)) < 1e-10
        # p = 0 minimizes scale*mu + (mu-t)^2/2 over mu >= 0
        np.testing.assert_allclose(
            mu[~pos], np.maximum(0.0, target[~pos] - scale), atol=1e-12
        )

    def test_stable_for_large_negative_targets(self):
        # the naive root formula cancels catastrophically here; the stable
        # branch lands on the asymptote scale * p / |target|
        mu = poisson_prox(np.array([-1e12]), np.array([4.0]), 1.0)
        assert np.all(mu > 0.0) and np.all(np.isfinite(mu))
        np.testing.assert_allclose(mu, 4e-12, rtol=1e-6)

    def test_validation(self):
        with pytest.raises(ValueError):
            poisson_prox(np.zeros(3), np.zeros(3), 0.0)
        with pytest.raises(ValueError):
            poisson_prox(np.zeros(3), np.array([1.0, -1.0, 0.0]), 1.0)
