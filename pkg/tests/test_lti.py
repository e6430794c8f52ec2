import numpy as np
import pytest
from hypothesis import given, strategies as st

from hinftune.exceptions import NotHermitian, SingularAtFrequency, SizeCapExceeded
from hinftune.fixtures import pole_example_system, pole_example_transfer
from hinftune.lti import (
    StateSpace,
    brl_verify,
    eval_freq,
    freq_response,
    hinf_norm_bisect,
    hinf_norm_grid,
    is_detectable,
    is_stable,
    log_grid,
    phi_constraint,
    poles,
    realify_hermitian,
    sigma_max,
)

from conftest import random_stable
from oracles import brl_cvxopt, dense_sup, sigma_eig, tf_eval

# frozen outputs of the independent oracles in tests/oracles.py
POLE_SIGMA_087 = 3.79542302921645
POLE_NORM = 4.064794666737948
POLE_PEAK = 0.62168


def lag():
    return StateSpace([[-1.0]], [[1.0]], [[1.0]], [[0.0]])


class TestStateSpace:
    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            StateSpace(np.eye(2), np.ones((3, 1)), np.ones((1, 2)), np.zeros((1, 1)))

    def test_nonfinite(self):
        with pytest.raises(ValueError):
            StateSpace([[np.nan]], [[1.0]], [[1.0]], [[0.0]])

    def test_immutable(self):
        s = lag()
        with pytest.raises(ValueError):
            s.A[0, 0] = 3.0


class TestEvalFreq:
    def test_dc(self):
        assert eval_freq(lag(), 0.0).G[0, 0] == pytest.approx(1.0)

    def test_unit_frequency(self):
        assert eval_freq(lag(), 1.0).G[0, 0] == pytest.approx(0.5 - 0.5j)

    def test_pole_example_dc(self):
        G = eval_freq(pole_example_system(), 0.0).G
        assert G[0, 0] == pytest.approx(2 / 3, abs=1e-12)
        assert G[1, 1] == pytest.approx(2.0, abs=1e-12)

    def test_matches_closed_form(self):
        s = pole_example_system()
        for w in (0.1, 0.87, 5.0):
            assert np.allclose(eval_freq(s, w).G, pole_example_transfer(1j * w), atol=1e-12)

    def test_pole_on_axis(self):
        osc = StateSpace([[0.0, 1.0], [-1.0, 0.0]], [[0.0], [1.0]], [[1.0, 0.0]], [[0.0]])
        with pytest.raises(SingularAtFrequency):
            eval_freq(osc, 1.0)

    def test_batch_matches_pointwise(self, rng):
        s = random_stable(rng, 5, 2, 3, with_d=True)
        w = log_grid(1e-2, 1e2, 17)
        G = freq_response(s, w)
        for k, om in enumerate(w):
            assert np.allclose(G[k], tf_eval(s.A, s.B, s.C, s.D, 1j * om), atol=1e-10)


class TestSigmaMax:
    def test_scalar(self):
        assert sigma_max(np.array([[1 + 0j]])) == 1.0

    def test_identity(self):
        assert sigma_max(np.eye(2, dtype=complex)) == pytest.approx(1.0)

    def test_pole_examplegainst_eig_oracle(self):
        assert sigma_max(eval_freq(pole_example_system(), 0.87)) == pytest.approx(POLE_SIGMA_087, abs=1e-10)

    @given(st.integers(0, 2**32 - 1))
    def test_batch_equals_svd(self, seed):
        r = np.random.default_rng(seed)
        G = r.standard_normal((4, 3, 2)) + 1j * r.standard_normal((4, 3, 2))
        assert np.allclose(sigma_max(G), [sigma_eig(g) for g in G], rtol=1e-10)


class TestPoles:
    def test_diagonal(self):
        p = poles(StateSpace(np.diag([-1.0, -2.0]), np.ones((2, 1)), np.ones((1, 2)), [[0.0]]))
        assert sorted(p.poles.real) == [-2.0, -1.0]

    def test_complex_pair(self):
        p = poles(StateSpace([[0, 1], [-1, -1]], [[0], [1]], [[1, 0]], [[0]])).poles
        assert np.allclose(sorted(p, key=lambda z: z.imag), [-0.5 - 0.8660254j, -0.5 + 0.8660254j])

    def test_pole_example_locations(self):
        ps = poles(pole_example_system())
        expected = [-1, -2, -3, -1.5 + 0.8660254j, -1.5 - 0.8660254j, -0.5 + 0.8660254j, -0.5 - 0.8660254j]
        for e in expected:
            assert ps.contains(e, tol=1e-6)
        assert all(min(abs(p - np.array(expected))) < 1e-6 for p in ps)

    @given(st.integers(0, 2**32 - 1))
    def test_conjugate_closed(self, seed):
        s = random_stable(np.random.default_rng(seed), 6)
        p = poles(s).poles
        assert np.allclose(np.sort_complex(p), np.sort_complex(p.conj()))

    def test_continuity_second_order(self):
        # s^2 + 2 z s + 1: roots move continuously with z
        def roots(z):
            return np.sort_complex(poles(StateSpace([[0, 1], [-1, -2 * z]], [[0], [1]], [[1, 0]], [[0]])).poles)

        base = roots(0.3)
        steps = [1e-1, 1e-2, 1e-3, 1e-4]
        disp = [np.max(np.abs(roots(0.3 + h) - base)) for h in steps]
        assert all(a > b for a, b in zip(disp, disp[1:]))
        assert disp[-1] < 1e-3


class TestStability:
    def test_examples(self):
        assert is_stable(StateSpace([[-1.0]], [[1.0]], [[1.0]], [[0.0]]), 0.0)
        assert not is_stable(StateSpace([[0.1]], [[1.0]], [[1.0]], [[0.0]]), 0.0)
        assert not is_stable(StateSpace([[-0.01]], [[1.0]], [[1.0]], [[0.0]]), 0.02)

    def test_detectability_warning(self):
        # unobservable unstable mode
        s = StateSpace(np.diag([1.0, -1.0]), [[1.0], [1.0]], [[0.0, 1.0]], [[0.0]])
        with pytest.warns(RuntimeWarning):
            assert not is_detectable(s)
        assert is_detectable(lag())


class TestHinfNorm:
    def test_first_order(self):
        r = hinf_norm_bisect(lag())
        assert r.norm == pytest.approx(1.0, rel=1e-9)
        assert r.peak_omega == pytest.approx(0.0, abs=1e-6)
        assert r.stable and r.method == "bisection"

    def test_static(self):
        s = StateSpace(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), [[3.0]])
        assert hinf_norm_bisect(s).norm == pytest.approx(3.0)

    def test_unstable_reports_infinity(self):
        r = hinf_norm_bisect(StateSpace([[0.5]], [[1.0]], [[1.0]], [[0.0]]))
        assert not r.stable and r.norm == np.inf

    def test_pole_example_frozen(self):
        r = hinf_norm_bisect(pole_example_system())
        assert r.norm == pytest.approx(POLE_NORM, rel=1e-8)
        assert r.peak_omega == pytest.approx(POLE_PEAK, rel=1e-3)

    def test_pole_example_dense_grid(self):
        s = pole_example_system()
        g = hinf_norm_grid(s, log_grid(1e-3, 1e3, 100_000)).norm
        assert abs(g - hinf_norm_bisect(s).norm) <= 1e-4 * POLE_NORM

    def test_lightly_damped_peak(self):
        z = 1e-3
        s = StateSpace([[0, 1], [-1, -2 * z]], [[0], [1]], [[1, 0]], [[0]])
        # exact peak 1 / (2 z sqrt(1 - z^2))
        assert hinf_norm_bisect(s).norm == pytest.approx(1 / (2 * z * np.sqrt(1 - z * z)), rel=1e-8)

    def test_grid_examples(self):
        assert hinf_norm_grid(lag(), [0.0]).norm == pytest.approx(1.0)
        assert hinf_norm_grid(lag(), [1.0]).norm == pytest.approx(np.sqrt(0.5), abs=1e-4)

    @given(st.integers(0, 2**32 - 1), st.integers(1, 8))
    def test_grid_below_bisection(self, seed, n):
        r = np.random.default_rng(seed)
        s = random_stable(r, n, with_d=bool(seed % 2))
        g = hinf_norm_grid(s, np.concatenate([[0.0], log_grid(1e-3, 1e3, 300)])).norm
        assert g <= hinf_norm_bisect(s).norm * (1 + 1e-8)

    @given(st.integers(0, 2**32 - 1), st.integers(1, 6))
    def test_against_dense_oracle(self, seed, n):
        s = random_stable(np.random.default_rng(seed), n, with_d=True)
        ref, _ = dense_sup(s.A, s.B, s.C, s.D, num=4000)
        b = hinf_norm_bisect(s).norm
        assert b >= ref * (1 - 1e-7)
        assert abs(b - ref) <= 1e-6 * ref


class TestPhi:
    def test_zero(self):
        M = phi_constraint(np.array([[0.0]]), 1.0)
        assert np.allclose(M, np.eye(2))
        assert np.all(np.linalg.eigvalsh(M) > 0)

    def test_boundary(self):
        ev = np.linalg.eigvalsh(phi_constraint(np.array([[1.0]]), 1.0))
        assert np.allclose(ev, [0.0, 2.0])

    def test_pole_example_definiteness(self):
        resp = eval_freq(pole_example_system(), 0.5)
        s = sigma_max(resp)
        assert np.min(np.linalg.eigvalsh(phi_constraint(resp, s + 0.1))) > 0
        assert np.min(np.linalg.eigvalsh(phi_constraint(resp, s - 0.1))) < 0

    @given(st.integers(0, 2**32 - 1), st.floats(0.1, 10.0))
    def test_schur_equivalence(self, seed, gamma):
        r = np.random.default_rng(seed)
        G = r.standard_normal((2, 3)) + 1j * r.standard_normal((2, 3))
        s = sigma_eig(G)
        if abs(s - gamma) < 1e-9:
            return
        pd = np.min(np.linalg.eigvalsh(phi_constraint(G, gamma))) > 0
        assert pd == (s < gamma)


class TestRealify:
    def test_scalar(self):
        assert np.allclose(realify_hermitian(np.array([[1.0]])), np.eye(2))

    def test_spectrum_doubles(self):
        R = realify_hermitian(np.array([[1, 1j], [-1j, 1]]))
        assert np.allclose(np.sort(np.linalg.eigvalsh(R)), [0, 0, 2, 2], atol=1e-12)

    def test_rejects_non_hermitian(self):
        with pytest.raises(NotHermitian):
            realify_hermitian(np.array([[1, 1j], [1j, 1]]))

    @given(st.integers(0, 2**32 - 1), st.integers(1, 5))
    def test_random_spectrum(self, seed, n):
        r = np.random.default_rng(seed)
        X = r.standard_normal((n, n)) + 1j * r.standard_normal((n, n))
        M = X + X.conj().T
        ev = np.linalg.eigvalsh(M)
        assert np.allclose(np.sort(np.linalg.eigvalsh(realify_hermitian(M))), np.sort(np.repeat(ev, 2)), atol=1e-10)


class TestBRL:
    def test_first_order(self):
        assert brl_verify(lag(), 1.1)
        assert not brl_verify(lag(), 0.9)

    def test_size_cap(self, rng):
        with pytest.raises(SizeCapExceeded):
            brl_verify(random_stable(rng, 13), 1.0)

    def test_random_six_state(self, rng):
        s = random_stable(rng, 6, 2, 2)
        g = hinf_norm_bisect(s).norm
        assert brl_verify(s, 1.01 * g)
        assert not brl_verify(s, 0.99 * g)

    def test_matches_external_solver(self, rng):
        for _ in range(3):
            s = random_stable(rng, 4, 2, 2, with_d=True)
            g = hinf_norm_bisect(s).norm
            for f in (0.98, 1.02):
                assert brl_verify(s, f * g) == brl_cvxopt(s.A, s.B, s.C, s.D, f * g)


def test_pole_approach_growth():
    # pole pair at -delta +- j: sigma at w = 1 grows as delta shrinks
    vals = []
    for d in (1e-1, 1e-2, 1e-3):
        s = StateSpace([[-d, 1.0], [-1.0, -d]], [[0.0], [1.0]], [[1.0, 0.0]], [[0.0]])
        vals.append(sigma_max(eval_freq(s, 1.0)))
    assert vals[0] < vals[1] < vals[2]
    assert vals[2] > 100 * vals[0]
