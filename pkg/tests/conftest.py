import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hinftune.lti import StateSpace

settings.register_profile(
    "default", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def random_stable(rng, n, ny=None, nw=None, shift=0.05, with_d=False):
    """Random stable system with spectral abscissa at most ``-shift``."""
    ny = ny or int(rng.integers(1, 4))
    nw = nw or int(rng.integers(1, 4))
    A = rng.standard_normal((n, n))
    a = np.max(np.linalg.eigvals(A).real)
    A = A - (a + shift + rng.uniform(0, 1)) * np.eye(n)
    B = rng.standard_normal((n, nw))
    C = rng.standard_normal((ny, n))
    D = rng.standard_normal((ny, nw)) if with_d else np.zeros((ny, nw))
    return StateSpace(A, B, C, D)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def demo_tuned():
    """Tuned demo (computed once per session)."""
    from hinftune.fixtures import demo_dae, demo_param_system
    from hinftune.tuner import StructuredHinfTuner

    ps = demo_param_system()
    est = StructuredHinfTuner().fit(ps)
    return ps, est, demo_dae()


def random_droop_dae(rng, n_buses=None, outputs=("omega",)):
    """Random connected network with 2-3 droop inverters and light constant-power loads."""
    from hinftune.blocks import DroopInverter
    from hinftune.gridmodel import Branch, Network, StaticProsumer, build_coupled_system

    n = n_buses or int(rng.integers(3, 7))
    branches = []
    for j in range(1, n):
        i = int(rng.integers(0, j))
        branches.append(Branch(i, j, rng.uniform(0.002, 0.02), rng.uniform(0.01, 0.05)))
    for _ in range(int(rng.integers(0, 3))):
        i, j = sorted(rng.choice(n, 2, replace=False))
        branches.append(Branch(int(i), int(j), rng.uniform(0.002, 0.02), rng.uniform(0.01, 0.05)))
    n_inv = int(rng.integers(2, min(3, n - 1) + 1))
    inv_buses = sorted(int(b) for b in rng.choice(n, n_inv, replace=False))
    inverters = {
        b: DroopInverter(rng.uniform(0.01, 0.05), rng.uniform(0.01, 0.05), rng.uniform(0.05, 0.5),
                         rng.uniform(0.05, 0.5), name=f"inv{b}")
        for b in inv_buses
    }
    loads = [StaticProsumer(b, rng.uniform(0.05, 0.2), rng.uniform(0.0, 0.05), True, ("P",), name=f"load{b}")
             for b in range(n) if b not in inverters]
    return build_coupled_system(Network.from_branches(n, branches), inverters, loads, outputs=outputs)


def random_block_system(rng, n_params=None):
    """Random stable plant under a tunable feedback chain; returns (ParamSystem, K0).

    The disturbance enters at the plant input and the plant output is
    measured.  The controller is a gain, up to three lead-lags and an
    optional washout, giving 2 to 8 tunable parameters.
    """
    from hinftune.blocks import BlockDiagram, assemble, gain, lead_lag, transfer_function, washout
    from hinftune.lti import is_stable

    p = n_params or int(rng.integers(2, 9))
    n_ll = (p - 1) // 2
    use_wo = (p - 1) % 2 == 1
    while True:
        n = int(rng.integers(1, 4))
        poles = -rng.uniform(0.2, 3.0, n)
        den = np.poly(poles)
        num = rng.uniform(0.5, 2.0) * np.atleast_1d(np.poly(-rng.uniform(0.5, 5.0, int(rng.integers(0, n)))))
        ctrl = [gain("k", rng.uniform(0.1, 1.0), tunable=("K",))]
        bounds = {"k.K": (0.0, 3.0)}
        for j in range(n_ll):
            ctrl.append(lead_lag(f"ll{j}", rng.uniform(0.1, 1.0), rng.uniform(0.05, 0.5),
                                 tunable=("T_num", "T_den")))
            bounds[f"ll{j}.T_num"] = (0.0, 2.0)
            bounds[f"ll{j}.T_den"] = (0.02, 1.0)
        if use_wo:
            ctrl.append(washout("wo", 1.0, rng.uniform(1.0, 10.0), tunable=("T_w",)))
            bounds["wo.T_w"] = (0.5, 20.0)
        blocks = [transfer_function("plant", num, den)] + ctrl
        conns = [("w", "plant", 1.0), (ctrl[-1].name, "plant", -1.0), ("plant", ctrl[0].name, 1.0)]
        conns += [(a.name, b.name, 1.0) for a, b in zip(ctrl[:-1], ctrl[1:])]
        ps = assemble(BlockDiagram(blocks, conns, ["w"], {"y": "plant"}, bounds))
        K0 = ps.K_nominal
        if is_stable(ps.evaluate(K0), margin=1e-3):
            return ps, K0
