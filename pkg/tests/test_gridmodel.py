import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import least_squares, linear_sum_assignment

from hinftune.blocks import DroopInverter
from hinftune.exceptions import MultipleZeroModes, NonConvergence, NoZeroMode, UnmodeledBus
from hinftune.fixtures import demo_dae
from hinftune.gridmodel import (
    Branch,
    Network,
    OperatingPoint,
    StaticProsumer,
    build_coupled_system,
    linearize,
    power_flow_jacobian,
    power_flow_residual,
    power_injections,
    reduced_system,
    remove_zero_mode,
    solve_power_flow,
)
from hinftune.lti import StateSpace, freq_response, hinf_norm_bisect

from conftest import random_droop_dae


def two_bus():
    return Network.from_branches(2, [Branch(0, 1, 0.0, 0.1)])


def match_spectra(a, b):
    cost = np.abs(a[:, None] - b[None, :])
    r, c = linear_sum_assignment(cost)
    return float(np.max(cost[r, c]))


def random_network(rng, n, lossless=False):
    branches = [Branch(int(rng.integers(0, j)), j, 0.0 if lossless else rng.uniform(0.005, 0.05),
                       rng.uniform(0.05, 0.2)) for j in range(1, n)]
    return Network.from_branches(n, branches)


class TestNetwork:
    def test_lossless_line_admittance(self):
        net = two_bus()
        np.testing.assert_allclose(net.G_c, 0.0)
        np.testing.assert_allclose(net.B_s, [[-10, 10], [10, -10]])

    def test_disconnected_rejected(self):
        with pytest.raises(ValueError, match="connected"):
            Network(np.zeros((2, 2)), np.diag([1.0, 1.0]))

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError, match="symmetric"):
            Network(np.zeros((2, 2)), [[-1.0, 1.0], [2.0, -1.0]])


class TestPowerFlow:
    def test_flat_no_transfer(self):
        P, Q = power_injections(two_bus(), [1, 1], [0, 0])
        np.testing.assert_allclose(P, 0.0, atol=1e-15)
        np.testing.assert_allclose(Q, 0.0, atol=1e-15)

    def test_angle_difference(self):
        P, _ = power_injections(two_bus(), [1, 1], [0.1, 0.0])
        assert P[0] == pytest.approx(10 * np.sin(0.1), rel=1e-14)
        assert P[0] == pytest.approx(0.99833, abs=1e-5)

    def test_residual_zero_at_exact_injection(self):
        net = two_bus()
        P, Q = power_injections(net, [1, 1], [0.1, 0.0])
        assert np.max(np.abs(power_flow_residual(net, [1, 1], [0.1, 0.0], P, Q))) < 1e-14

    def test_zero_injections_flat_profile(self):
        op = solve_power_flow(random_network(np.random.default_rng(1), 5), np.zeros(5), np.zeros(5))
        np.testing.assert_allclose(op.V, 1.0, atol=1e-12)
        np.testing.assert_allclose(op.theta, 0.0, atol=1e-12)

    def test_two_bus_load(self):
        op = solve_power_flow(two_bus(), [0.0, -0.5], [0.0, 0.0], bus_types=["slack", "pv"])
        assert op.theta[0] - op.theta[1] == pytest.approx(np.arcsin(0.05), abs=1e-12)
        assert op.theta[0] - op.theta[1] == pytest.approx(0.05002, abs=1e-5)

    @given(st.integers(0, 2**32 - 1))
    def test_random_four_bus_residual(self, seed):
        rng = np.random.default_rng(seed)
        net = random_network(rng, 4)
        P = np.concatenate([[0.0], -rng.uniform(0, 0.3, 3)])
        Q = np.concatenate([[0.0], -rng.uniform(0, 0.1, 3)])
        op = solve_power_flow(net, P, Q)
        r = power_flow_residual(net, op.V, op.theta, op.P, op.Q)
        assert np.max(np.abs(r)) < 1e-10
        np.testing.assert_allclose(op.P[1:], P[1:], atol=1e-10)
        assert op.residual < 1e-10

    @given(st.integers(0, 2**32 - 1))
    def test_lossless_conservation(self, seed):
        rng = np.random.default_rng(seed)
        net = random_network(rng, 5, lossless=True)
        op = solve_power_flow(net, np.concatenate([[0.0], -rng.uniform(0, 0.3, 4)]), np.zeros(5))
        assert abs(np.sum(op.P)) < 1e-9

    def test_infeasible_loading(self):
        with pytest.raises(NonConvergence):
            solve_power_flow(two_bus(), [0.0, -20.0], [0.0, 0.0])

    def test_jacobian_finite_difference(self, rng):
        net = random_network(rng, 4)
        V = 1 + 0.05 * rng.standard_normal(4)
        th = 0.1 * rng.standard_normal(4)
        J = power_flow_jacobian(net, V, th)
        h = 1e-6
        fd = np.empty_like(J)
        for k in range(8):
            e = np.zeros(8)
            e[k] = h
            p = np.concatenate(power_injections(net, V + e[:4], th + e[4:]))
            m = np.concatenate(power_injections(net, V - e[:4], th - e[4:]))
            fd[:, k] = (p - m) / (2 * h)
        np.testing.assert_allclose(J, fd, rtol=1e-6, atol=1e-8)

    def test_meshed_three_bus_multistart(self):
        net = Network.from_branches(3, [Branch(0, 1, 0.01, 0.1), Branch(1, 2, 0.02, 0.08), Branch(0, 2, 0.01, 0.12)])
        P = np.array([0.0, -0.6, -0.4])
        Q = np.array([0.0, -0.2, -0.1])
        op = solve_power_flow(net, P, Q)

        def res(v):
            V = np.concatenate([[1.0], v[:2]])
            th = np.concatenate([[0.0], v[2:]])
            r = power_flow_residual(net, V, th, P, Q)
            return np.concatenate([r[1:3], r[4:6]])

        rng = np.random.default_rng(7)
        sols = []
        for _ in range(100):
            x0 = np.concatenate([rng.uniform(0.3, 1.3, 2), rng.uniform(-1.0, 1.0, 2)])
            r = least_squares(res, x0, xtol=1e-14, ftol=1e-14, gtol=1e-14)
            if np.max(np.abs(r.fun)) < 1e-9:
                sols.append(r.x)
        sols = np.array(sols)
        # high-voltage branch: the one with the largest minimum voltage
        hv = sols[np.argmax(np.min(sols[:, :2], axis=1))]
        np.testing.assert_allclose(op.V[1:], hv[:2], atol=1e-7)
        np.testing.assert_allclose(op.theta[1:], hv[2:], atol=1e-7)


class TestCoupledSystem:
    def test_single_inverter_three_states(self):
        net = two_bus()
        dae = build_coupled_system(net, {0: DroopInverter(0.02, 0.03, 0.1, 0.1)},
                                   [StaticProsumer(1, 0.2, 0.0, True)])
        assert dae.n_x == 3
        assert dae.n_z == 2

    def test_demo_dimensions(self):
        dae = demo_dae()
        assert dae.n_x == 6
        assert dae.n_z == 2 * 2  # two non-dynamic buses
        assert dae.param_names[:4] == ["inv1.K_P", "inv1.K_Q", "inv1.T_f", "inv1.T_v"]

    def test_equilibrium_residual(self):
        dae = demo_dae()
        op = dae.equilibrium()
        z = dae.z_of(op)
        w = np.zeros(dae.n_w)
        assert np.max(np.abs(dae.h(op.x0, z, w))) < 1e-10
        assert np.max(np.abs(dae.f(op.x0, z, w, op.K, op.omega_frame))) < 1e-10
        r = power_flow_residual(dae.net, op.V, op.theta, op.P, op.Q)
        assert np.max(np.abs(r)) < 1e-10

    def test_unmodeled_bus(self):
        with pytest.raises(UnmodeledBus):
            build_coupled_system(two_bus(), {5: DroopInverter(0.02, 0.03, 0.1, 0.1)},
                                 [StaticProsumer(1, 0.2, 0.0, True)])
        with pytest.raises(UnmodeledBus):
            build_coupled_system(two_bus(), {0: DroopInverter(0.02, 0.03, 0.1, 0.1)},
                                 [StaticProsumer(3, 0.2, 0.0, True)])

    def test_empty_disturbance(self):
        with pytest.raises(ValueError, match="disturbance"):
            build_coupled_system(two_bus(), {0: DroopInverter(0.02, 0.03, 0.1, 0.1)},
                                 [StaticProsumer(1, 0.2, 0.0, False)])

    def test_jacobians_finite_difference(self):
        dae = demo_dae()
        op = dae.equilibrium()
        x, z, w, K, wf = op.x0, dae.z_of(op), np.zeros(dae.n_w), op.K, op.omega_frame
        fx, fz, fw, ff, hx, hz, hw = dae.jacobians(x, z, w, K)

        def fd(fun, v, h=1e-6):
            cols = []
            for k in range(v.size):
                e = np.zeros(v.size)
                e[k] = h * max(1.0, abs(v[k]))
                cols.append((fun(v + e) - fun(v - e)) / (2 * e[k]))
            return np.column_stack(cols)

        def close(a, b):
            scale = max(np.max(np.abs(b)), 1.0)
            assert np.max(np.abs(a - b)) <= 1e-6 * scale

        close(fx, fd(lambda v: dae.f(v, z, w, K, wf), x))
        close(fz, fd(lambda v: dae.f(x, v, w, K, wf), z))
        close(fw, fd(lambda v: dae.f(x, z, v, K, wf), w))
        close(hx, fd(lambda v: dae.h(v, z, w), x))
        close(hz, fd(lambda v: dae.h(x, v, w), z))
        close(hw, fd(lambda v: dae.h(x, z, v), w))
        close(ff[:, None], fd(lambda v: dae.f(x, z, w, K, v[0]), np.array([wf])))


class TestLinearize:
    def test_one_zero_eigenvalue(self):
        dae = demo_dae()
        A = linearize(dae).evaluate(dae.K_nominal).A
        assert int(np.sum(np.abs(np.linalg.eigvals(A)) < 1e-8)) == 1

    def test_angle_shift_invariance(self):
        dae = demo_dae()
        op = dae.equilibrium()
        A0 = linearize(dae, op).evaluate(op.K).A
        sh = OperatingPoint(op.V, op.theta + 0.3, op.P, op.Q, x0=op.x0 + 0.3 * dae.theta_shift,
                            omega_frame=op.omega_frame, K=op.K)
        A1 = linearize(dae, sh).evaluate(op.K).A
        np.testing.assert_allclose(A1, A0, atol=1e-8 * np.max(np.abs(A0)))
        R0 = remove_zero_mode(StateSpace(A0, np.zeros((6, 1)), np.zeros((1, 6)), np.zeros((1, 1))),
                              dae.theta_shift).A
        R1 = remove_zero_mode(StateSpace(A1, np.zeros((6, 1)), np.zeros((1, 6)), np.zeros((1, 1))),
                              dae.theta_shift).A
        np.testing.assert_allclose(R1, R0, atol=1e-8 * np.max(np.abs(R0)))

    def test_linear_matches_nonlinear_dc(self):
        # steady-state frequency shift of a small load step equals the DC gain
        dae = demo_dae()
        op = dae.equilibrium()
        sys_ = reduced_system(dae, op).evaluate(op.K)
        dw = np.zeros(dae.n_w)
        dw[0] = 1e-4
        dae_shift = build_coupled_system(dae.net, dict(zip(dae.dyn_buses, dae.prosumers)),
                                         [StaticProsumer(s.bus, s.P_load + (1e-4 if k == 0 else 0), s.Q_load,
                                                         s.is_disturbance, s.channels, s.name)
                                          for k, s in enumerate(dae.static)])
        op2 = dae_shift.equilibrium()
        dc = freq_response(sys_, [0.0])[0] @ dw
        np.testing.assert_allclose(op2.omega_frame - op.omega_frame, dc[0], rtol=1e-3)


class TestZeroMode:
    def test_spectrum_preserved(self):
        dae = demo_dae()
        full = linearize(dae).evaluate(dae.K_nominal)
        red = remove_zero_mode(full, dae.theta_shift)
        lam = np.linalg.eigvals(full.A)
        lam = lam[np.abs(lam) >= 1e-8]
        assert red.n_states == 5
        assert match_spectra(lam, np.linalg.eigvals(red.A)) < 1e-8 * max(1.0, np.max(np.abs(lam)))

    def test_reduced_norm_finite(self):
        dae = demo_dae()
        full = linearize(dae).evaluate(dae.K_nominal)
        red = remove_zero_mode(full, dae.theta_shift)
        assert np.isfinite(hinf_norm_bisect(red).norm)
        assert not hinf_norm_bisect(full).stable

    def test_second_call_rejected(self):
        dae = demo_dae()
        red = reduced_system(dae).evaluate(dae.K_nominal)
        with pytest.raises(NoZeroMode):
            remove_zero_mode(red, dae.theta_shift)
        with pytest.raises(NoZeroMode):
            remove_zero_mode(StateSpace(-np.eye(6), np.zeros((6, 1)), np.zeros((1, 6)), np.zeros((1, 1))),
                             dae.theta_shift)

    def test_islanded_rejected(self):
        dae = demo_dae()
        A = linearize(dae).evaluate(dae.K_nominal).A
        A2 = np.block([[A, np.zeros_like(A)], [np.zeros_like(A), A]])
        s = StateSpace(A2, np.zeros((12, 1)), np.zeros((1, 12)), np.zeros((1, 1)))
        with pytest.raises(MultipleZeroModes):
            remove_zero_mode(s, np.concatenate([dae.theta_shift, dae.theta_shift]))

    @given(st.integers(0, 2**32 - 1))
    def test_random_networks(self, seed):
        dae = random_droop_dae(np.random.default_rng(seed))
        full = linearize(dae).evaluate(dae.K_nominal)
        lam = np.linalg.eigvals(full.A)
        assert int(np.sum(np.abs(lam) < 1e-8)) == 1
        red = remove_zero_mode(full, dae.theta_shift)
        rest = lam[np.abs(lam) >= 1e-8]
        assert match_spectra(rest, np.linalg.eigvals(red.A)) < 1e-8 * max(1.0, np.max(np.abs(rest)))


class TestPowerSharing:
    def test_dc_sharing_inverse_droop(self):
        net = Network.from_branches(3, [Branch(0, 2, 0.01, 0.05), Branch(1, 2, 0.01, 0.05)])
        invs = {0: DroopInverter(0.02, 0.03, 0.1, 0.1, name="a"), 1: DroopInverter(0.04, 0.03, 0.1, 0.1, name="b")}
        dae = build_coupled_system(net, invs, [StaticProsumer(2, 0.2, 0.05, True, ("P",), name="L")],
                                   outputs=("omega", "P"))
        sys_ = reduced_system(dae).evaluate(dae.K_nominal)
        g = freq_response(sys_, [0.0])[0].real[:, 0]
        dPa, dPb = g[2], g[3]
        assert dPa / dPb == pytest.approx(0.04 / 0.02, rel=1e-9)
        # the inverters pick up the load change plus the extra line losses
        assert dPa + dPb == pytest.approx(1.0, rel=1e-2)


def test_operating_point_csv(tmp_path):
    op = demo_dae().equilibrium()
    path = tmp_path / "op.csv"
    op.to_csv(path)
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert path.read_text().splitlines()[0] == "bus,V,theta,P,Q"
    np.testing.assert_array_equal(data[:, 1], op.V)
    np.testing.assert_array_equal(data[:, 2], op.theta)
