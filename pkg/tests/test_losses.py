from dataclasses import replace

import numpy as np
import pytest

from linlmp import (
    Branch,
    Bus,
    BusKind,
    FlowVector,
    Generator,
    Network,
    build_linear_admittance,
    build_loss_state,
    build_sensitivity,
    compute_fnd,
    compute_loss_factors,
    compute_losses,
    loss_diagnostics,
    net_injections,
    zero_loss_state,
)


def single_branch_net(r=0.02, x=0.1):
    return Network(
        buses=(
            Bus(1, BusKind.REFERENCE, 0, 0, 0, 0.01, 0.9, 1.1),
            Bus(2, BusKind.LOAD, 1.0, 0.0, 0, 0.01, 0.9, 1.1),
        ),
        branches=(Branch(1, 2, r, x, 0.0),),
        generators=(Generator(1, 0, 3, -1, 1, 2000, 100, 100),),
        base_mva=100.0,
    )


class TestComputeLosses:
    def test_single_branch(self):
        net = single_branch_net(r=0.02)
        flows = FlowVector(p_flow=np.array([0.5]), q_flow=np.array([0.0]))
        p_loss, q_loss = compute_losses(flows, net)
        assert p_loss == pytest.approx(0.005, abs=1e-15)
        assert q_loss == pytest.approx(0.025, abs=1e-15)

    def test_zero_resistance(self):
        net = single_branch_net(r=0.0)
        flows = FlowVector(p_flow=np.array([3.0]), q_flow=np.array([1.0]))
        p_loss, _ = compute_losses(flows, net)
        assert p_loss == 0.0

    def test_two_bus_converged_magnitudes(self, run2):
        # hand fixed point: flow ~ 1.005, so p_loss ~ 0.0101, q_loss ~ 0.101
        assert run2.loss.p_loss_total == pytest.approx(0.0101, abs=5e-4)
        assert run2.loss.q_loss_total == pytest.approx(0.101, abs=5e-3)

    def test_reactive_flows_never_enter(self, case2):
        bundle = build_sensitivity(case2)
        flows_a = FlowVector(p_flow=np.array([1.0]), q_flow=np.array([0.0]))
        flows_b = FlowVector(p_flow=np.array([1.0]), q_flow=np.array([9.9]))
        assert compute_losses(flows_a, case2) == compute_losses(flows_b, case2)


class TestLossFactors:
    def test_zero_flows(self, case2):
        bundle = build_sensitivity(case2)
        flows = FlowVector(p_flow=np.zeros(1), q_flow=np.zeros(1))
        lf_p, lf_q, df_p, df_q = compute_loss_factors(flows, bundle, case2)
        assert np.all(lf_p == 0.0) and np.all(lf_q == 0.0)
        assert np.all(df_p == 1.0) and np.all(df_q == 1.0)

    def test_hand_formula(self, case2):
        # with a single branch, lf_p[i] = 2 * flow * gsdf_pp[0, i] * r
        bundle = build_sensitivity(case2)
        flows = FlowVector(p_flow=np.array([1.0]), q_flow=np.zeros(1))
        lf_p, lf_q, df_p, _ = compute_loss_factors(flows, bundle, case2)
        expected = 2.0 * 1.0 * bundle.gsdf_pp[0] * 0.01
        np.testing.assert_allclose(lf_p, expected, atol=1e-15)
        np.testing.assert_allclose(df_p, 1.0 - expected, atol=1e-15)
        # about a 2% delivery premium at the load bus
        assert lf_p[1] == pytest.approx(-0.02, abs=2e-3)

    def test_reference_bus_factor_is_zero(self, run118_normal):
        ref = run118_normal.bundle.ref_bus
        assert run118_normal.loss.lf_p[ref] == 0.0

    def test_df_identity(self, run118_normal):
        loss = run118_normal.loss
        np.testing.assert_array_equal(loss.df_p, 1.0 - loss.lf_p)
        np.testing.assert_array_equal(loss.df_q, 1.0 - loss.lf_q)

    def test_finite_difference_consistency(self, run118_normal):
        # lf equals the central difference of the total-loss expression
        # under per-bus injection perturbations of 1e-4
        net = run118_normal.net
        bundle = run118_normal.bundle
        flows = run118_normal.loss.flows
        lf_p, lf_q, _, _ = compute_loss_factors(flows, bundle, net)
        r = np.array([br.r for br in net.branches])
        x = np.array([br.x for br in net.branches])
        eps = 1e-4
        base = flows.p_flow[:, None]
        fd_p = (((base + eps * bundle.gsdf_pp) ** 2
                 - (base - eps * bundle.gsdf_pp) ** 2).T @ r) / (2 * eps)
        fd_q = (((base + eps * bundle.gsdf_pq) ** 2
                 - (base - eps * bundle.gsdf_pq) ** 2).T @ x) / (2 * eps)
        assert np.max(np.abs(fd_p - lf_p)) < 1e-6
        assert np.max(np.abs(fd_q - lf_q)) < 1e-6


class TestFnd:
    def test_even_split(self):
        net = single_branch_net(r=0.02)
        flows = FlowVector(p_flow=np.array([0.5]), q_flow=np.zeros(1))
        fnd_p, fnd_q = compute_fnd(flows, net)
        assert fnd_p[0] == pytest.approx(0.0025, abs=1e-15)
        assert fnd_p[1] == pytest.approx(0.0025, abs=1e-15)

    def test_no_incident_loss(self, case3):
        flows = FlowVector(p_flow=np.array([1.0, 0.0, 0.0]), q_flow=np.zeros(3))
        fnd_p, _ = compute_fnd(flows, case3)
        assert fnd_p[2] == 0.0

    def test_conservation_118(self, run118_normal):
        net = run118_normal.net
        flows = run118_normal.loss.flows
        fnd_p, fnd_q = compute_fnd(flows, net)
        p_loss, q_loss = compute_losses(flows, net)
        assert abs(fnd_p.sum() - p_loss) < 1e-12
        assert abs(fnd_q.sum() - q_loss) < 1e-12


class TestNetInjections:
    def test_zero_fnd_plain_difference(self, case2):
        adm = build_linear_admittance(case2)
        loss = zero_loss_state(case2, adm)
        p_gen = np.array([1.5, 0.0])
        q_gen = np.array([0.3, 0.0])
        inj = net_injections(case2, p_gen, q_gen, loss)
        pd, qd = case2.demand_vectors()
        np.testing.assert_array_equal(inj.p, p_gen - pd)
        np.testing.assert_array_equal(inj.q, q_gen - qd)

    def test_two_bus_converged_injection(self, run2):
        # load bus carries its demand plus half the branch loss
        net = run2.net
        gbus = net.gen_bus_indices()
        p_gen = np.zeros(2)
        np.add.at(p_gen, gbus, run2.result.dispatch_p)
        inj = net_injections(net, p_gen, np.zeros(2), run2.loss)
        assert inj.p[1] == pytest.approx(-1.0 - 0.005, abs=5e-4)

    def test_all_zero(self, case2):
        adm = build_linear_admittance(case2)
        loss = zero_loss_state(case2, adm)
        zero_net = Network(
            buses=tuple(
                replace(b, p_demand=0.0, q_demand=0.0) for b in case2.buses
            ),
            branches=case2.branches,
            generators=case2.generators,
            base_mva=case2.base_mva,
        )
        inj = net_injections(zero_net, np.zeros(2), np.zeros(2), loss)
        assert np.all(inj.p == 0.0) and np.all(inj.q == 0.0)


class TestBalanceIdentity:
    def test_two_bus_delivery_balance(self, run2):
        # df . (G - D) + p_loss = 0 at the converged point
        net = run2.net
        pd, _ = net.demand_vectors()
        gbus = net.gen_bus_indices()
        p_gen = np.zeros(2)
        np.add.at(p_gen, gbus, run2.result.dispatch_p)
        residual = run2.loss.df_p @ (p_gen - pd) + run2.loss.p_loss_total
        assert abs(residual) < 1e-6


class TestMisc:
    def test_q_balance_constant(self, case118):
        adm = build_linear_admittance(case118)
        state = zero_loss_state(case118, adm)
        assert state.q_balance_constant == pytest.approx(
            -float(np.sum(adm.y_full.imag)), abs=1e-12
        )

    def test_zero_state_shape(self, case118):
        adm = build_linear_admittance(case118)
        state = zero_loss_state(case118, adm)
        assert state.p_loss_total == 0.0
        assert np.all(state.df_p == 1.0)
        assert np.all(state.fnd_q == 0.0)

    def test_diagnostics_reports_both_conventions(self, run2):
        diag = loss_diagnostics(run2.loss.flows, run2.net)
        assert diag["p_loss_active_only"] == pytest.approx(
            run2.loss.p_loss_total, abs=1e-12
        )
        assert diag["p_loss_with_reactive"] > diag["p_loss_active_only"]
