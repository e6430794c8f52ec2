"""End-to-end acceptance campaign.

Each test prints one ``ACCEPTANCE <n> PASS|FAIL`` line with its runtime,
and fails if the tolerance or the time budget is missed.
"""

import os
import time
from contextlib import contextmanager

import numpy as np
import pytest

from hinftune.cli import EXIT_OK, main
from hinftune.exceptions import InitialUnstable
from hinftune.fixtures import POLE_EXAMPLE_POLES, pole_example_system, demo_dae, demo_param_system
from hinftune.gridmodel import linearize, remove_zero_mode
from hinftune.lti import StateSpace, brl_verify, eval_freq, hinf_norm_bisect, is_stable, phi_constraint, poles, \
    sigma_max
from hinftune.paramsys import ParamSystem
from hinftune.sim import SimScenario, response_metrics, simulate_nonlinear, step_response_linear
from hinftune.subproblem import AffineResponseModel, SubproblemSpec, solve_subproblem
from hinftune.tuner import StructuredHinfTuner, TuneConfig, safeguard_check, tune

from conftest import random_block_system, random_droop_dae, random_stable
from oracles import dense_sup, lattice_minimax, sigma_eig

CONFIGS = os.path.abspath(os.path.join(os.path.dirname(__file__), os.pardir, "configs"))


@contextmanager
def criterion(n, title, budget, capsys):
    """Time the block and print one PASS/FAIL line whatever happens."""
    t0 = time.perf_counter()
    ok = False
    try:
        yield
        ok = True
    finally:
        dt = time.perf_counter() - t0
        ok = ok and dt < budget
        with capsys.disabled():
            print(f"\nACCEPTANCE {n:>2} {'PASS' if ok else 'FAIL'}  {title}  ({dt:.1f} s, budget {budget:g} s)")
    assert dt < budget, f"criterion {n} took {dt:.1f} s (budget {budget} s)"


def test_01_hinf_oracle(capsys):
    rng = np.random.default_rng(1)
    with criterion(1, "bisection vs dense grid, 200 systems", 60, capsys):
        worst = 0.0
        for _ in range(200):
            s = random_stable(rng, int(rng.integers(1, 11)), with_d=bool(rng.integers(0, 2)))
            b = hinf_norm_bisect(s).norm
            ref, _ = dense_sup(s.A, s.B, s.C, s.D)
            worst = max(worst, abs(b - ref) / ref)
        assert worst < 1e-3


def test_02_phi_equivalence(capsys):
    rng = np.random.default_rng(2)
    with criterion(2, "Phi definiteness vs sigma_max < gamma, 100 triples", 5, capsys):
        checked = 0
        while checked < 100:
            s = random_stable(rng, int(rng.integers(1, 8)), with_d=True)
            w = 10 ** rng.uniform(-2, 2)
            resp = eval_freq(s, w)
            sv = sigma_eig(resp.G)
            gamma = sv * rng.uniform(0.5, 1.5)
            if abs(sv - gamma) < 1e-9:
                continue
            pd = np.min(np.linalg.eigvalsh(phi_constraint(resp, gamma))) > 0
            assert pd == (sv < gamma)
            checked += 1


def test_03_brl_crosscheck(capsys):
    rng = np.random.default_rng(3)
    with criterion(3, "bounded-real LMI vs bisection threshold, 50 systems", 120, capsys):
        for _ in range(50):
            s = random_stable(rng, int(rng.integers(1, 9)), shift=0.1)
            nrm = hinf_norm_bisect(s).norm
            assert brl_verify(s, 1.01 * nrm)
            assert not brl_verify(s, 0.99 * nrm)


def test_04_pole_example_fixture(capsys):
    with criterion(4, "fixture poles and sigma growth toward each pole", 10, capsys):
        sys_ = pole_example_system()
        got = poles(sys_).poles
        for p in POLE_EXAMPLE_POLES:
            assert np.min(np.abs(got - p)) < 1e-6
        for g in got:
            assert np.min(np.abs(POLE_EXAMPLE_POLES - g)) < 1e-6

        def sig(s):
            G = sys_.C @ np.linalg.solve(s * np.eye(sys_.n_states) - sys_.A, sys_.B) + sys_.D
            return sigma_max(G)

        lattice = [complex(a, b) for a in np.linspace(-2, 0, 21) for b in np.linspace(0, 2, 21)]
        targets = [p for p in POLE_EXAMPLE_POLES if -2 <= p.real <= 0 and 0 <= p.imag <= 2]
        assert len(targets) == 4
        rays = 0
        for p in targets:
            # inside half the distance to the nearest other pole, this pole dominates
            rho = 0.5 * min(abs(q - p) for q in POLE_EXAMPLE_POLES if abs(q - p) > 1e-9)
            for z in lattice:
                d = abs(z - p)
                if d < 1e-9:
                    continue
                u = (z - p) / d
                vals = [sig(p + r * u) for r in np.geomspace(min(d, rho), 1e-6, 30)]
                assert np.all(np.diff(vals) > 0), (p, z)
                rays += 1
        assert rays == 4 * len(lattice) - 2


def test_05_safeguard_campaign(capsys):
    rng = np.random.default_rng(5)
    with criterion(5, "100 random tuning runs keep the safeguard", 900, capsys):
        sizes = set()
        for _ in range(100):
            ps, K0 = random_block_system(rng)
            sizes.add(ps.n_params)
            rep = tune(ps, K0, TuneConfig(0.2 * (ps.K_max - ps.K_min), k_max=15))
            prev = rep.norm0
            for r in rep.iterations:
                if r.accepted:
                    assert r.stable and is_stable(ps.evaluate(r.K))
                    assert r.norm < prev
                    prev = r.norm
            assert safeguard_check(rep)
        assert min(sizes) == 2 and max(sizes) == 8


def test_06_unstable_start(capsys):
    rng = np.random.default_rng(6)
    with criterion(6, "20 unstable starts raise InitialUnstable", 10, capsys):
        for _ in range(20):
            n = int(rng.integers(1, 6))
            base = random_stable(rng, n, 1, 1, shift=0.2)
            a = -np.max(np.linalg.eigvals(base.A).real)
            A0, B0, C0, D0 = base.A, base.B, base.C, base.D

            def fn(K, A0=A0, B0=B0, C0=C0, D0=D0):
                return StateSpace(A0 + K[0] * np.eye(A0.shape[0]), B0, C0 * K[1], D0)

            ps = ParamSystem(fn, ["shift", "g"], [0.0, 0.5], [a + 2.0, 2.0])
            K0 = [rng.uniform(a + 0.1, a + 2.0), 1.0]
            with pytest.raises(InitialUnstable):
                tune(ps, K0, TuneConfig([0.5, 0.5]))


def test_07_demo_analog(capsys):
    with criterion(7, "demo norm and oscillation energy reduced 2x", 300, capsys):
        ps = demo_param_system()
        est = StructuredHinfTuner().fit(ps)
        rep = est.report_
        assert rep.norm0 / est.norm_ >= 2.0
        assert safeguard_check(rep)
        assert all(is_stable(ps.evaluate(r.K)) for r in rep.iterations if r.accepted)
        dae = demo_dae()
        sc = SimScenario([0.6, 0, 0, 0], 8.0, 1e-3, 0.1)
        energy = []
        for K in (ps.K_nominal, est.K_opt_):
            tr = simulate_nonlinear(dae, dae.equilibrium(K), sc, K)
            energy.append(sum(response_metrics(tr, f"{n}.P", sc.step_time)["osc_energy"] for n in ("inv1", "inv6")))
        assert energy[0] / energy[1] >= 2.0


def test_08_linearization_validity(capsys):
    with criterion(8, "nonlinear vs linear at a 1% step", 60, capsys):
        dae = demo_dae()
        op = dae.equilibrium()
        ps = demo_param_system()
        sc = SimScenario([0.01, 0, 0, 0], 3.0, 1e-3, 0.1)
        nl = simulate_nonlinear(dae, op, sc)
        lin = step_response_linear(ps.evaluate(op.K), sc, ps.output_names)
        err = max(np.max(np.abs(nl[c] - lin[c])) for c in ps.output_names)
        ref = max(np.max(np.abs(lin[c])) for c in ps.output_names)
        assert err / ref < 0.02


def test_09_zero_mode_contract(capsys):
    from scipy.optimize import linear_sum_assignment

    rng = np.random.default_rng(9)
    with criterion(9, "one zero mode and preserved spectrum, 20 networks", 60, capsys):
        for _ in range(20):
            dae = random_droop_dae(rng)
            full = linearize(dae).evaluate(dae.K_nominal)
            lam = np.linalg.eigvals(full.A)
            small = np.abs(lam) < 1e-8
            assert np.sum(small) == 1
            red = remove_zero_mode(full, dae.theta_shift)
            mu = np.linalg.eigvals(red.A)
            rest = lam[~small]
            D = np.abs(rest[:, None] - mu[None, :])
            r, c = linear_sum_assignment(D)
            assert np.max(D[r, c]) < 1e-8 * max(1.0, np.max(np.abs(rest)))


def test_10_subproblem_exactness(capsys):
    rng = np.random.default_rng(10)
    with criterion(10, "subproblem gamma vs lattice minimax, 50 models", 120, capsys):
        for _ in range(50):
            p = int(rng.integers(1, 4))
            N = int(rng.integers(1, 6))
            ny, nw = int(rng.integers(1, 3)), int(rng.integers(1, 3))
            base = rng.standard_normal((N, ny, nw)) + 1j * rng.standard_normal((N, ny, nw))
            sens = rng.standard_normal((N, p, ny, nw)) + 1j * rng.standard_normal((N, p, ny, nw))
            m = AffineResponseModel(np.linspace(0.1, 10, N), base, sens, np.zeros(p))
            lo, hi = -np.ones(p), np.ones(p)
            pts = 41
            sol = solve_subproblem(SubproblemSpec(m, lo, hi, 2 * np.ones(p)))
            ref, _ = lattice_minimax(base, sens, lo, hi, points=pts)
            # the lattice is within half a cell of any point; sigma is Lipschitz in K
            L = np.sum([np.max(np.linalg.norm(sens[:, i], 2, axis=(1, 2))) for i in range(p)])
            res = L * (hi[0] - lo[0]) / (pts - 1) / 2
            assert ref - res - 1e-6 <= sol.gamma <= ref + 1e-6


def test_11_determinism(tmp_path, capsys):
    with criterion(11, "two demo tune runs are byte-identical", 600, capsys):
        cfg = os.path.join(CONFIGS, "demo.yaml")
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["tune", "--config", cfg, "--out-dir", str(a)]) == EXIT_OK
        assert main(["tune", "--config", cfg, "--out-dir", str(b)]) == EXIT_OK
        files = sorted(f for f in os.listdir(a) if f != "manifest.json")
        assert files == sorted(f for f in os.listdir(b) if f != "manifest.json")
        assert "tuned_parameters.yaml" in files and "tune_report.csv" in files
        for f in files:
            assert (a / f).read_bytes() == (b / f).read_bytes(), f
