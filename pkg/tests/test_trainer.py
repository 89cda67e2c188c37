"""Tests for the loss, gradients, hyperparameter rules, and training loop."""

import math

import numpy as np
import pytest

from subspace_gd.model import (
    DeepNet,
    NetDims,
    copy_net,
    end_to_end,
    init_fanin,
    init_standard_normal,
)
from subspace_gd.numkit import gaussian, range_projectors, spec_stats
from subspace_gd.oracle import oracle_map
from subspace_gd.problem import gen_instance, gen_uos
from subspace_gd.trainer import (
    HyperParams,
    derive_hyperparams,
    grad_check,
    gradients,
    loss,
    relu_gradients,
    resolve_hyperparams,
    shrink_product,
    shrink_product_excluding,
    train,
)


def scalar_net(weights, mode="raw", relu=False):
    dims = NetDims(L=len(weights), m=1, d_w=1, d=1)
    return DeepNet(
        dims=dims,
        weights=[np.array([[float(w)]]) for w in weights],
        mode=mode,
        relu_at_penultimate=relu,
    )


class TestLoss:
    def test_scalar_hand_case(self):
        # residual (1*1*1 - 2)^2 / 2 = 0.5, penalty 0.5*0.5*(1+1) = 0.5
        net = scalar_net([1.0, 1.0])
        X = np.array([[2.0]])
        Y = np.array([[1.0]])
        assert loss(net, X, Y, lam=0.5) == pytest.approx(1.0)

    def test_zero_weights(self):
        dims = NetDims(L=3, m=4, d_w=6, d=5)
        net = DeepNet(
            dims=dims,
            weights=[np.zeros(dims.layer_shape(ell)) for ell in (1, 2, 3)],
            mode="raw",
        )
        inst = gen_instance(4, 5, 2, 8, 1.0, seed=0)
        assert loss(net, inst.X, inst.Y, lam=0.0) == pytest.approx(
            0.5 * np.linalg.norm(inst.X) ** 2)

    def test_normalized_penalty_divides_fan_in(self):
        dims = NetDims(L=2, m=4, d_w=9, d=5)
        raw = init_fanin(dims, seed=1)
        norm = DeepNet(dims=dims, weights=[W.copy() for W in raw.weights],
                       mode="normalized")
        X = np.zeros((5, 3))
        Y = np.zeros((4, 3))
        lam = 0.8
        want_raw = 0.5 * lam * sum(np.vdot(W, W) for W in raw.weights)
        want_norm = 0.5 * lam * (
            np.vdot(raw.weights[0], raw.weights[0]) / 4
            + np.vdot(raw.weights[1], raw.weights[1]) / 9
        )
        assert loss(raw, X, Y, lam) == pytest.approx(want_raw, rel=1e-12)
        assert loss(norm, X, Y, lam) == pytest.approx(want_norm, rel=1e-12)

    def test_rejects_shape_mismatch(self):
        net = scalar_net([1.0, 1.0])
        with pytest.raises(ValueError):
            loss(net, np.zeros((2, 1)), np.zeros((1, 1)), lam=0.0)


class TestGradients:
    def test_scalar_hand_case(self):
        # d/dw of 0.5 (w2 w1 y - x)^2 at w=(1,1), y=1, x=2: both -1
        net = scalar_net([1.0, 1.0])
        g = gradients(net, np.array([[2.0]]), np.array([[1.0]]), lam=0.0)
        assert g[0][0, 0] == pytest.approx(-1.0)
        assert g[1][0, 0] == pytest.approx(-1.0)

    def test_interpolating_net_is_stationary(self):
        # with zero residual and no penalty, every gradient vanishes
        inst = gen_instance(4, 5, 2, 8, 1.0, seed=1)
        W = oracle_map(inst).W
        dims = NetDims(L=2, m=4, d_w=4, d=5)
        net = DeepNet(dims=dims, weights=[np.eye(4), W], mode="raw")
        g = gradients(net, inst.X, inst.Y, lam=0.0)
        for grad in g:
            assert np.linalg.norm(grad) <= 1e-10 * np.linalg.norm(inst.X)

    def test_regularizer_only_gradients(self):
        # zero data: gradient reduces to the exact penalty term per mode
        dims = NetDims(L=3, m=4, d_w=6, d=5)
        X = np.zeros((5, 3))
        Y = np.zeros((4, 3))
        lam = 0.7
        raw = init_fanin(dims, seed=2)
        for ell, g in enumerate(gradients(raw, X, Y, lam), start=1):
            assert np.allclose(g, lam * raw.weights[ell - 1], rtol=1e-14)
        norm = init_standard_normal(dims, seed=2)
        for ell, g in enumerate(gradients(norm, X, Y, lam), start=1):
            assert np.allclose(g, (lam / dims.fan_in(ell)) * norm.weights[ell - 1],
                               rtol=1e-14)

    def test_matches_finite_differences_linear(self):
        inst = gen_instance(4, 5, 2, 6, 1.0, seed=3)
        dims = NetDims(L=3, m=4, d_w=6, d=5)
        for mode, init in (("raw", init_fanin), ("normalized", init_standard_normal)):
            net = init(dims, seed=4)
            assert grad_check(net, inst, lam=1e-3) <= 1e-6, mode

    def test_matches_finite_differences_relu(self):
        inst = gen_uos(4, 5, 2, 2, 6, 1.0, seed=5)
        dims = NetDims(L=3, m=4, d_w=6, d=5)
        net = init_standard_normal(dims, seed=6, relu_at_penultimate=True)
        assert grad_check(net, inst, lam=1e-3) <= 1e-5

    def test_relu_dead_region_zero_gradient(self):
        # negative preactivation throughout: only the penalty survives
        net = scalar_net([1.0, 1.0], relu=True)
        net.weights[0][0, 0] = -1.0
        g = relu_gradients(net, np.array([[2.0]]), np.array([[1.0]]), lam=0.0)
        assert g[0][0, 0] == 0.0
        assert g[1][0, 0] == 0.0

    def test_relu_guard(self):
        net = scalar_net([1.0, 1.0])
        with pytest.raises(ValueError):
            relu_gradients(net, np.array([[2.0]]), np.array([[1.0]]), lam=0.0)


class TestHyperParams:
    def test_validation(self):
        with pytest.raises(ValueError):
            HyperParams(T=0)
        with pytest.raises(ValueError):
            HyperParams(T=1, C1=0.0)
        with pytest.raises(ValueError):
            HyperParams(T=1, log_stride=0)
        with pytest.raises(ValueError):
            HyperParams(T=1, eta=-1.0)
        with pytest.raises(ValueError):
            HyperParams(T=1, lam=-1.0)
        with pytest.raises(ValueError):
            HyperParams(T=1, gamma=1.5)
        HyperParams(T=1, eta=0.0, lam=0.0, gamma=0.0)

    def test_resolve_derived_step(self):
        inst = gen_instance(128, 256, 4, 50, 1.0, seed=0)
        hp = resolve_hyperparams(HyperParams(T=1, lam=1e-3), inst, L=3)
        assert hp.eta == pytest.approx(128.0 / 3.0, rel=1e-12)

    def test_resolve_prefactor(self):
        inst = gen_instance(128, 256, 4, 50, 1.0, seed=0)
        hp = resolve_hyperparams(HyperParams(T=1, lam=1e-3, prefactor=0.5),
                                 inst, L=3)
        assert hp.eta == pytest.approx(64.0 / 3.0, rel=1e-12)

    def test_lam_gamma_round_trip(self):
        inst = gen_instance(16, 32, 3, 20, 2.0, seed=1)
        a = resolve_hyperparams(HyperParams(T=1, lam=1e-3), inst, L=3)
        b = resolve_hyperparams(HyperParams(T=1, gamma=a.gamma), inst, L=3)
        assert b.lam == pytest.approx(1e-3, rel=1e-12)

    def test_resolve_requires_decay_level(self):
        inst = gen_instance(16, 32, 3, 20, 1.0, seed=1)
        with pytest.raises(ValueError):
            resolve_hyperparams(HyperParams(T=1), inst, L=3)

    def test_explicit_values_pass_through(self):
        inst = gen_instance(16, 32, 3, 20, 1.0, seed=1)
        hp = resolve_hyperparams(HyperParams(T=1, eta=0.1, lam=1e-4),
                                 inst, L=3)
        assert hp.eta == 0.1
        assert hp.lam == 1e-4


class TestDeriveHyperparams:
    def test_accuracy_cap_hand_value(self):
        inst = gen_instance(128, 256, 4, 50, 1.0, seed=0)
        rep = derive_hyperparams(inst, L=3, d_w=512, gamma=0.5)
        want = 1e-7 * 16.0 / (3.0 * math.sqrt(128.0))
        assert rep.gamma_cap == pytest.approx(want, rel=1e-12)
        assert rep.gamma_cap == pytest.approx(4.71405e-8, rel=1e-5)

    def test_horizon_identity(self):
        inst = gen_instance(16, 32, 3, 20, 2.5, seed=2)
        st = spec_stats(inst.X)
        gamma = 0.2
        rep = derive_hyperparams(inst, L=4, d_w=77, gamma=gamma)
        want = math.ceil(2 * 4 * st.kappa**2 * math.log(77) / gamma
                         * math.sqrt(32.0 / 16.0))
        assert rep.T_star == want

    def test_phase_bound_identity(self):
        # at the derived step size the bound collapses to 64 kappa^2 log(.)
        inst = gen_instance(16, 32, 3, 20, 2.5, seed=2)
        st = spec_stats(inst.X)
        rep = derive_hyperparams(inst, L=4, d_w=77, gamma=0.2)
        smin_sq = st.sigma_min_nonzero**2
        want = 64 * st.kappa**2 * math.log(4 * smin_sq / rep.lambda_star)
        assert rep.tau_ub == pytest.approx(want, rel=1e-12)

    def test_decay_formula(self):
        inst = gen_instance(16, 32, 3, 20, 1.0, seed=3)
        rep = derive_hyperparams(inst, L=3, d_w=64, gamma=0.1)
        assert rep.lambda_star == pytest.approx(
            0.1 * math.sqrt(16.0 / 32.0), rel=1e-12)
        assert rep.eta_star == pytest.approx(16.0 / 3.0, rel=1e-12)

    def test_rejections(self):
        inst = gen_instance(16, 32, 3, 20, 1.0, seed=3)
        with pytest.raises(ValueError):
            derive_hyperparams(inst, L=3, d_w=64, gamma=0.0)
        with pytest.raises(ValueError):
            derive_hyperparams(inst, L=3, d_w=64, gamma=1.5)
        with pytest.raises(ValueError):
            derive_hyperparams(inst, L=1, d_w=64, gamma=0.5)

    def test_width_note_mentions_thresholds(self):
        inst = gen_instance(16, 32, 3, 20, 1.0, seed=3)
        rep = derive_hyperparams(inst, L=3, d_w=64, gamma=0.5)
        assert str(16 * 2) in rep.width_required_note
        assert "d_w" in rep.width_required_note


class TestShrinkProduct:
    def test_hand_case(self):
        dims = NetDims(L=3, m=4, d_w=8, d=5)
        # (1 - 0.4/4)(1 - 0.4/8)^2 with eta = 1
        assert shrink_product(dims, 1.0, 0.4) == pytest.approx(
            0.9 * 0.95 * 0.95, rel=1e-14)

    def test_excluding_layer(self):
        dims = NetDims(L=3, m=4, d_w=8, d=5)
        assert shrink_product_excluding(dims, 1.0, 0.4, skip=1) == \
            pytest.approx(0.95 * 0.95, rel=1e-14)
        assert shrink_product_excluding(dims, 1.0, 0.4, skip=2) == \
            pytest.approx(0.9 * 0.95, rel=1e-14)

    def test_zero_decay_is_unit(self):
        dims = NetDims(L=4, m=3, d_w=6, d=5)
        assert shrink_product(dims, 0.3, 0.0) == 1.0

    def test_bounds_for_small_decay(self):
        dims = NetDims(L=5, m=8, d_w=32, d=16)
        for eta_lam in (1e-4, 1e-2, 0.5):
            c = shrink_product(dims, eta_lam, 1.0)
            assert 0.0 < c <= 1.0
            assert c <= shrink_product_excluding(dims, eta_lam, 1.0, skip=3)

    def test_skip_out_of_range(self):
        dims = NetDims(L=3, m=4, d_w=8, d=5)
        with pytest.raises(ValueError):
            shrink_product_excluding(dims, 1.0, 0.1, skip=0)
        with pytest.raises(ValueError):
            shrink_product_excluding(dims, 1.0, 0.1, skip=4)


class TestTrain:
    def test_zero_step_is_identity(self):
        inst = gen_instance(6, 9, 2, 10, 1.0, seed=4)
        dims = NetDims(L=3, m=6, d_w=8, d=9)
        net = init_fanin(dims, seed=5)
        before = [W.copy() for W in net.weights]
        trace = train(net, inst, HyperParams(T=5, eta=0.0, lam=0.5))
        assert trace.status == "ok"
        for Wb, Wa in zip(before, net.weights):
            assert np.array_equal(Wb, Wa)

    def test_record_cadence(self):
        inst = gen_instance(6, 9, 2, 10, 1.0, seed=4)
        dims = NetDims(L=3, m=6, d_w=8, d=9)
        net = init_standard_normal(dims, seed=6)
        trace = train(net, inst, HyperParams(T=25, lam=1e-3, log_stride=10))
        assert [r["t"] for r in trace.records] == [0, 10, 20, 25]
        for r in trace.records:
            assert set(r) >= {"t", "loss", "recon_norm", "recon_restricted",
                              "off_sub", "oracle_dist", "weight_norms"}
            assert len(r["weight_norms"]) == 3

    def test_loss_decreases_without_decay(self):
        inst = gen_instance(8, 16, 2, 20, 1.0, seed=7)
        dims = NetDims(L=3, m=8, d_w=64, d=16)
        net = init_standard_normal(dims, seed=8)
        trace = train(net, inst, HyperParams(T=200, lam=0.0, log_stride=1))
        losses = [r["loss"] for r in trace.records]
        assert len(losses) == 201
        # strictly decreasing until the residual hits rounding level
        floor = 1e-25 * losses[0]
        for a, b in zip(losses, losses[1:]):
            if a <= floor:
                break
            assert b < a
        assert losses[-1] <= floor

    def test_recon_norm_is_normalized_residual(self):
        inst = gen_instance(6, 9, 2, 10, 1.0, seed=9)
        dims = NetDims(L=2, m=6, d_w=8, d=9)
        net = init_standard_normal(dims, seed=10)
        trace = train(net, inst, HyperParams(T=1, lam=0.0, log_stride=1))
        F = end_to_end(net).F
        resid = np.linalg.norm(F @ inst.Y - inst.X)
        last = trace.records[-1]
        assert last["recon_restricted"] == pytest.approx(resid, rel=1e-9)
        assert last["recon_norm"] == pytest.approx(
            resid / np.linalg.norm(inst.X), rel=1e-9)

    def test_off_subspace_recursion_raw(self):
        # the first layer's complement block shrinks by exactly (1 - eta lam)
        inst = gen_instance(6, 9, 2, 10, 1.0, seed=11)
        _, Pperp = range_projectors(inst.Y)
        dims = NetDims(L=3, m=6, d_w=8, d=9)
        net = init_fanin(dims, seed=12)
        W1_perp0 = net.weights[0] @ Pperp
        snaps = {}

        def capture(t, live_net, rec):
            snaps[t] = live_net.weights[0] @ Pperp
            return None

        eta, lam = 0.05, 0.01
        train(net, inst, HyperParams(T=40, eta=eta, lam=lam, log_stride=10),
              hooks=(capture,))
        tol = 1e-9 * np.linalg.norm(net.weights[0])
        for t, block in snaps.items():
            factor = (1.0 - eta * lam) ** t
            assert np.linalg.norm(block - factor * W1_perp0) <= tol

    def test_off_subspace_recursion_normalized(self):
        # normalized mode shrinks layer 1 by (1 - eta lam / m) per step
        inst = gen_instance(6, 9, 2, 10, 1.0, seed=13)
        _, Pperp = range_projectors(inst.Y)
        dims = NetDims(L=3, m=6, d_w=8, d=9)
        net = init_standard_normal(dims, seed=14)
        W1_perp0 = net.weights[0] @ Pperp
        snaps = {}

        def capture(t, live_net, rec):
            snaps[t] = live_net.weights[0] @ Pperp
            return None

        eta, lam = 0.5, 0.12
        train(net, inst, HyperParams(T=40, eta=eta, lam=lam, log_stride=10),
              hooks=(capture,))
        tol = 1e-9 * np.linalg.norm(net.weights[0])
        for t, block in snaps.items():
            factor = (1.0 - eta * lam / 6.0) ** t
            assert np.linalg.norm(block - factor * W1_perp0) <= tol

    def test_no_decay_freezes_complement_block(self):
        inst = gen_instance(6, 9, 2, 10, 1.0, seed=15)
        _, Pperp = range_projectors(inst.Y)
        dims = NetDims(L=3, m=6, d_w=8, d=9)
        net = init_standard_normal(dims, seed=16)
        W1_perp0 = net.weights[0] @ Pperp
        train(net, inst, HyperParams(T=60, lam=0.0, log_stride=60))
        drift = np.linalg.norm(net.weights[0] @ Pperp - W1_perp0)
        assert drift <= 1e-9 * np.linalg.norm(net.weights[0])

    def test_stop_detection_with_huge_threshold(self):
        inst = gen_instance(6, 9, 2, 10, 1.0, seed=17)
        dims = NetDims(L=3, m=6, d_w=8, d=9)
        net = init_standard_normal(dims, seed=18)
        trace = train(net, inst,
                      HyperParams(T=5, lam=1e-3, C1=1e12, log_stride=1))
        assert trace.tau_detected == 0

    def test_no_stop_detection_at_zero_decay(self):
        inst = gen_instance(6, 9, 2, 10, 1.0, seed=17)
        dims = NetDims(L=3, m=6, d_w=8, d=9)
        net = init_standard_normal(dims, seed=18)
        trace = train(net, inst, HyperParams(T=5, lam=0.0, log_stride=1))
        assert trace.tau_detected is None

    def test_divergence_reported(self):
        inst = gen_instance(6, 9, 2, 10, 1.0, seed=19)
        dims = NetDims(L=3, m=6, d_w=8, d=9)
        net = init_fanin(dims, seed=20)
        trace = train(net, inst, HyperParams(T=500, eta=50.0, lam=0.0,
                                             log_stride=1))
        assert trace.status == "diverged"
        assert trace.diverged_at is not None
        assert trace.diverged_at <= 500
        # the blown-up iterate itself is never recorded
        assert all(r["t"] < trace.diverged_at for r in trace.records)

    def test_oracle_distance_tracks_final_map(self):
        inst = gen_instance(6, 9, 2, 10, 1.0, seed=21)
        dims = NetDims(L=2, m=6, d_w=8, d=9)
        net = init_standard_normal(dims, seed=22)
        trace = train(net, inst, HyperParams(T=10, lam=1e-3, log_stride=5))
        W_orc = oracle_map(inst).W
        F = end_to_end(net).F
        want = np.linalg.svd(F - W_orc, compute_uv=False)[0]
        assert trace.records[-1]["oracle_dist"] == pytest.approx(want, rel=1e-9)

    def test_relu_training_runs_and_improves(self):
        inst = gen_uos(6, 9, 2, 2, 12, 1.0, seed=23)
        dims = NetDims(L=3, m=6, d_w=16, d=9)
        net = init_standard_normal(dims, seed=24, relu_at_penultimate=True)
        trace = train(net, inst, HyperParams(T=100, lam=1e-4, log_stride=100))
        assert trace.status == "ok"
        assert trace.records[-1]["loss"] < trace.records[0]["loss"]
        assert math.isnan(trace.records[-1]["off_sub"])
        assert math.isnan(trace.records[-1]["oracle_dist"])

    def test_power_estimate_tracks_exact_off_sub(self):
        # intermediate records use warm-started power iteration; endpoints
        # use the full SVD, so the t = T record is the calibration point
        inst = gen_instance(8, 16, 2, 20, 1.0, seed=25)
        dims = NetDims(L=3, m=8, d_w=32, d=16)
        net = init_standard_normal(dims, seed=26)
        trace = train(net, inst, HyperParams(T=20, lam=1e-3, log_stride=5))
        _, Pperp = range_projectors(inst.Y)
        F = end_to_end(net).F
        exact = np.linalg.svd(F @ Pperp, compute_uv=False)[0]
        assert trace.records[-1]["off_sub"] == pytest.approx(exact, rel=1e-12)
        mid = trace.records[2]
        assert mid["off_sub"] > 0
