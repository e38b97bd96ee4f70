"""Tests for the split calibration solver and support pruning."""

import numpy as np
import pytest
from oracles import ppg_minimize, random_tiny_instance

from psfmix import (
    Dictionary,
    GaussianParams,
    GridGeometry,
    ImageStack,
    StackKind,
    asb_minimize,
    dense_blur_matrix,
    estimate_support,
    identity_camera,
    solve_calibration,
    soft_threshold,
    support_threshold,
)
from psfmix.blur import DenseBlurOperator, IdentityOperator
from psfmix.solver import AsbState, project_nonneg


def test_soft_threshold_closed_forms():
    assert soft_threshold(np.array([5.0]), 2.0)[0] == 3.0
    assert soft_threshold(np.array([-5.0]), 2.0)[0] == -3.0
    assert soft_threshold(np.array([1.5]), 2.0)[0] == 0.0
    v = np.array([-3.0, -0.5, 0.0, 0.5, 3.0])
    np.testing.assert_array_equal(soft_threshold(v, 0.0), v)
    np.testing.assert_array_equal(
        soft_threshold(v, 1.0), np.array([-2.0, 0.0, 0.0, 0.0, 2.0])
    )


def test_project_nonneg_clips_and_is_idempotent():
    v = np.array([-2.0, 0.0, 3.5])
    out = project_nonneg(v)
    np.testing.assert_array_equal(out, [0.0, 0.0, 3.5])
    np.testing.assert_array_equal(project_nonneg(out), out)


def test_identity_operator_unpenalized_recovers_excess():
    # with B = I and no l1 penalty the optimum is w = max(0, p - beta)
    rng = np.random.default_rng(7)
    photons = rng.poisson(6.0, size=24).astype(float)
    background = 2.0
    result = asb_minimize(
        [IdentityOperator(photons.size)],
        photons,
        background,
        [0.0],
        tol_primal=1e-12,
        tol_obj=0.0,
        max_iters=20000,
    )
    assert result.converged
    np.testing.assert_allclose(
        result.weights[0],
        np.maximum(0.0, photons - background),
        atol=1e-6,
    )


def test_near_delta_digital_calibration_recovers_excess():
    # a kernel far narrower than the pixel acts as peak * identity
    geometry = GridGeometry(1, 1, 16, 100.0, 100.0)
    kernel = GaussianParams(0.001, 0.001)
    dictionary = Dictionary((kernel,), (geometry.pixel_centers(),), digital=True)
    camera = identity_camera(1.0, 1.0)
    rng = np.random.default_rng(11)
    photons = rng.poisson(5.0, size=16).astype(float)
    background = 1.5
    result = solve_calibration(
        ImageStack(geometry, photons, StackKind.PHOTONS),
        dictionary,
        camera,
        penalties=[0.0],
        background=background,
        tol_primal=1e-11,
        tol_obj=0.0,
        max_iters=20000,
    )
    np.testing.assert_allclose(
        result.weights[0] * kernel.peak,
        np.maximum(0.0, photons - background),
        atol=1e-5,
    )


def test_huge_penalty_kills_all_weights():
    inst = random_tiny_instance(3)
    lam = 1e3 * float(inst["photons"].max() + 1.0)
    result = asb_minimize(
        inst["operators"],
        inst["photons"],
        inst["background"],
        [lam] * len(inst["operators"]),
        max_iters=5000,
    )
    for w in result.weights:
        np.testing.assert_array_equal(w, np.zeros_like(w))
    assert result.support_trace[-1].sum() == 0


def test_weights_nonnegative_and_objective_improves():
    for seed in (0, 1, 2):
        inst = random_tiny_instance(seed)
        result = asb_minimize(
            inst["operators"],
            inst["photons"],
            inst["background"],
            inst["penalties"],
            max_iters=4000,
        )
        for w in result.weights:
            assert np.all(w >= 0.0)
        finite = result.objective_trace[np.isfinite(result.objective_trace)]
        assert finite[-1] <= finite[0]
        assert len(result.objective_trace) == result.n_iters
        assert len(result.residual_trace) == result.n_iters
        assert result.support_trace.shape[0] == result.n_iters


def test_matches_projected_gradient_oracle():
    # both methods minimize the same convex composite objective, so their
    # final objective values must agree to tight tolerance
    for seed in (5, 17, 23, 41, 59):
        inst = random_tiny_instance(seed)
        result = asb_minimize(
            inst["operators"],
            inst["photons"],
            inst["background"],
            inst["penalties"],
            tol_primal=1e-10,
            tol_obj=1e-15,
            max_iters=20000,
        )
        _, obj_ppg = ppg_minimize(
            inst["matrices"], inst["photons"], inst["background"], inst["penalties"]
        )
        assert abs(result.objective - obj_ppg) <= 1e-6 * max(1.0, abs(obj_ppg)), (
            f"seed {seed}: asb {result.objective!r} vs oracle {obj_ppg!r}"
        )


def test_converged_state_is_a_fixed_point():
    inst = random_tiny_instance(8)
    state = AsbState(
        inst["operators"], inst["photons"], inst["background"], inst["penalties"]
    )
    residual = np.inf
    for _ in range(30000):
        residual = state.sweep()
        if residual <= 1e-12:
            break
    assert residual <= 1e-12
    before = [
        [v.copy() for v in group]
        for group in (state.w1, state.b1, state.w2, state.b2, state.w3, state.b3)
    ]
    running_before = state.running.copy()
    state.sweep()
    after = (state.w1, state.b1, state.w2, state.b2, state.w3, state.b3)
    for group_before, group_after in zip(before, after):
        for v_before, v_after in zip(group_before, group_after):
            assert np.max(np.abs(v_after - v_before)) < 1e-9
    assert np.max(np.abs(state.running - running_before)) < 1e-9


def test_running_sum_stays_consistent():
    inst = random_tiny_instance(13)
    state = AsbState(
        inst["operators"], inst["photons"], inst["background"], inst["penalties"]
    )
    for _ in range(200):
        state.sweep()
        recomputed = np.full(inst["photons"].size, inst["background"])
        for w in state.w1:
            recomputed = recomputed + w
        np.testing.assert_allclose(state.running, recomputed, atol=1e-10)


def test_solve_calibration_sweeps_narrow_kernels_first():
    # a dictionary listed widest-first must give bitwise the same answer as
    # manually running the blocks narrowest-first and unpermuting
    inst = random_tiny_instance(27)
    assert len(inst["kernels"]) == 2
    order = sorted(
        range(2), key=lambda k: (inst["kernels"][k].sigma_xy_um, inst["kernels"][k].sigma_z_um)
    )
    desc = order[::-1]
    dictionary = Dictionary(
        tuple(inst["kernels"][k] for k in desc),
        tuple(inst["positions"][k] for k in desc),
    )
    stack = ImageStack(inst["geometry"], inst["photons"], StackKind.PHOTONS)
    result = solve_calibration(
        stack,
        dictionary,
        identity_camera(1.0, 1.0),
        penalties=[inst["penalties"][k] for k in desc],
        background=inst["background"],
        rho=1.0,
        max_iters=300,
    )
    manual = asb_minimize(
        [DenseBlurOperator(inst["matrices"][k]) for k in order],
        inst["photons"],
        inst["background"],
        [inst["penalties"][k] for k in order],
        max_iters=300,
    )
    # result.weights follows the dictionary (descending) order
    for slot, k in enumerate(desc):
        manual_slot = order.index(k)
        np.testing.assert_array_equal(result.weights[slot], manual.weights[manual_slot])


def test_solve_calibration_grey_equals_photons():
    inst = random_tiny_instance(4)
    camera = identity_camera(1.0, 1.0)
    camera = type(camera)(
        quantum_efficiency=1.0,
        gain=1.0,
        amplification=1.0,
        bias=100.0,
        exposure_ms=camera.exposure_ms,
        pixel_area_um2=camera.pixel_area_um2,
    )
    dictionary = Dictionary(tuple(inst["kernels"]), tuple(inst["positions"]))
    photons = inst["photons"]
    grey = ImageStack(inst["geometry"], photons + 100.0, StackKind.GREY)
    direct = ImageStack(inst["geometry"], photons, StackKind.PHOTONS)
    kwargs = dict(
        penalties=inst["penalties"], background=inst["background"], max_iters=200
    )
    res_grey = solve_calibration(grey, dictionary, camera, **kwargs)
    res_photons = solve_calibration(direct, dictionary, camera, **kwargs)
    for wg, wp in zip(res_grey.weights, res_photons.weights):
        np.testing.assert_array_equal(wg, wp)


def test_solve_calibration_default_background_is_median():
    inst = random_tiny_instance(6)
    dictionary = Dictionary(tuple(inst["kernels"]), tuple(inst["positions"]))
    stack = ImageStack(inst["geometry"], inst["photons"], StackKind.PHOTONS)
    camera = identity_camera(1.0, 1.0)
    implicit = solve_calibration(
        stack, dictionary, camera, penalties=inst["penalties"], max_iters=150
    )
    explicit = solve_calibration(
        stack,
        dictionary,
        camera,
        penalties=inst["penalties"],
        background=float(np.median(inst["photons"])),
        max_iters=150,
    )
    for wi, we in zip(implicit.weights, explicit.weights):
        np.testing.assert_array_equal(wi, we)


def test_solve_calibration_rejects_mean_stacks():
    geometry = GridGeometry(1, 1, 4, 100.0, 100.0)
    stack = ImageStack(geometry, np.ones(4), StackKind.MEAN)
    kernel = GaussianParams(0.1, 0.1)
    dictionary = Dictionary((kernel,), (geometry.pixel_centers(),))
    with pytest.raises(ValueError):
        solve_calibration(stack, dictionary, identity_camera(1.0, 1.0), penalties=[0.01])


def test_asb_state_validations():
    op = IdentityOperator(4)
    photons = np.ones(4)
    with pytest.raises(ValueError):
        AsbState([op], -photons, 1.0, [0.1])
    with pytest.raises(ValueError):
        AsbState([op], photons, 1.0, [0.1, 0.2])
    with pytest.raises(ValueError):
        AsbState([op], photons, 1.0, [-0.1])
    with pytest.raises(ValueError):
        AsbState([op], photons, 1.0, [0.1], rho=0.0)
    with pytest.raises(ValueError):
        AsbState([op], photons, -1.0, [0.1])


def poisson_quantile(rate, quantile):
    # smallest integer y with CDF(y) >= quantile, by direct summation
    total = 0.0
    term = np.exp(-rate)
    y = 0
    while True:
        total += term
        if total >= quantile:
            return y
        y += 1
        term *= rate / y


def test_support_threshold_matches_manual_cdf():
    kernel = GaussianParams(0.1, 0.2)
    for exposure, rate in ((1.0, 10.0), (2.0, 5.0)):
        camera = identity_camera(exposure, 1.0)
        c = camera.integration_volume
        expected_count = poisson_quantile(rate * c, 0.99)
        got = support_threshold(kernel, camera, rate, quantile=0.99)
        assert got == pytest.approx(expected_count / (c * kernel.peak), rel=1e-12)


def test_support_threshold_rejects_negative_rate():
    with pytest.raises(ValueError):
        support_threshold(GaussianParams(0.1, 0.1), identity_camera(1.0, 1.0), -1.0)


def test_estimate_support_masks_are_strict():
    kernel = GaussianParams(0.1, 0.1)
    camera = identity_camera(1.0, 1.0)
    rate = 10.0
    t = support_threshold(kernel, camera, rate)
    weights = [np.array([t, t * 1.0000001, 0.0, 5 * t])]
    est = estimate_support(weights, [kernel], camera, rate)
    np.testing.assert_array_equal(est.masks[0], [False, True, False, True])
    np.testing.assert_array_equal(est.weights[0], [0.0, t * 1.0000001, 0.0, 5 * t])
    assert est.support_size == 2


def test_estimate_support_flat_override_and_empty():
    kernel = GaussianParams(0.1, 0.1)
    camera = identity_camera(1.0, 1.0)
    weights = [np.array([0.05, 0.2, 0.11])]
    est = estimate_support(weights, [kernel], camera, 10.0, min_weight=0.1)
    assert est.thresholds == [0.1]
    np.testing.assert_array_equal(est.masks[0], [False, True, True])

    empty = estimate_support([np.zeros(3)], [kernel], camera, 10.0)
    assert empty.support_size == 0


def test_estimate_support_restrict_filters_positions():
    geometry = GridGeometry(1, 1, 6, 100.0, 100.0)
    centers = geometry.pixel_centers()
    kernel = GaussianParams(0.1, 0.1)
    dictionary = Dictionary((kernel,), (centers,), digital=True)
    weights = [np.array([0.0, 3.0, 0.0, 0.0, 2.0, 0.0])]
    est = estimate_support(weights, [kernel], identity_camera(1.0, 1.0), 1.0, min_weight=1.0)
    restricted = est.restrict(dictionary)
    assert restricted.digital is False
    np.testing.assert_array_equal(restricted.positions[0], centers[[1, 4]])


def test_estimate_support_length_mismatch():
    with pytest.raises(ValueError):
        estimate_support([np.ones(2)], [], identity_camera(1.0, 1.0), 1.0)
