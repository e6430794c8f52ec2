"""Time-domain verification: linear step responses and nonlinear DAE runs.

All trajectories report deviations from the initial operating point, so
linear and nonlinear runs share one convention.  Integration is classical
fixed-step RK4; the disturbance is piecewise constant and switches on at
``step_time`` (rounded to the time grid).
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import NoSteadyState
from .lti import StateSpace

__all__ = [
    "SimScenario",
    "Trajectory",
    "step_response_linear",
    "simulate_nonlinear",
    "response_metrics",
]


@dataclass
class SimScenario:
    """Step disturbance on ``w`` (pu) applied at ``step_time`` (s)."""

    step: np.ndarray
    horizon: float
    dt: float = 1e-3
    step_time: float = 0.0

    def __post_init__(self):
        self.step = np.atleast_1d(np.asarray(self.step, float))
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.horizon >= 10 * self.dt:
            raise ValueError("horizon must span at least 10 steps")
        if not 0 <= self.step_time < self.horizon:
            raise ValueError("step_time must lie inside the horizon")

    @property
    def n_steps(self):
        return int(round(self.horizon / self.dt))

    @property
    def time(self):
        return np.arange(self.n_steps + 1) * self.dt

    @property
    def step_index(self):
        return int(round(self.step_time / self.dt))


@dataclass
class Trajectory:
    time: np.ndarray
    signals: dict

    def __post_init__(self):
        self.time = np.asarray(self.time, float)
        for k, v in self.signals.items():
            v = np.asarray(v, float)
            if v.shape != self.time.shape:
                raise ValueError(f"channel {k!r} does not match the time base")
            self.signals[k] = v

    def __getitem__(self, name):
        return self.signals[name]

    @property
    def channels(self):
        return list(self.signals)

    def to_csv(self, path):
        """Header ``time,<channels...>``, one row per sample, ``repr`` floats."""
        names = self.channels
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(["time"] + names) + "\n")
            cols = [self.time] + [self.signals[n] for n in names]
            for row in zip(*cols):
                fh.write(",".join(repr(float(v)) for v in row) + "\n")

    @classmethod
    def from_csv(cls, path):
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], {n: data[:, i + 1] for i, n in enumerate(header[1:])})


def _rk4_maps(A, B, h):
    """RK4 one-step maps for ``x' = Ax + Bw`` with ``w`` constant over the step."""
    n = A.shape[0]
    I = np.eye(n)
    hA = h * A
    hA2 = hA @ hA
    hA3 = hA2 @ hA
    Phi = I + hA + hA2 / 2 + hA3 / 6 + hA3 @ hA / 24
    Gam = h * (I + hA / 2 + hA2 / 6 + hA3 / 24) @ B
    return Phi, Gam


def step_response_linear(sys, scen, names=None):
    """RK4 response of ``sys`` to the scenario's step, from zero initial state.

    Parameters
    ----------
    sys : StateSpace
    scen : SimScenario
    names : sequence of str, optional
        Output channel names (``y0, y1, ...`` by default).
    """
    if scen.step.size != sys.n_inputs:
        raise ValueError("step size does not match the number of inputs")
    names = list(names) if names is not None else [f"y{i}" for i in range(sys.n_outputs)]
    N = scen.n_steps
    k0 = scen.step_index
    Y = np.zeros((N + 1, sys.n_outputs))
    x = np.zeros(sys.n_states)
    Phi, Gam = _rk4_maps(sys.A, sys.B, scen.dt)
    gw = Gam @ scen.step
    dw = sys.D @ scen.step
    for k in range(N + 1):
        on = k >= k0
        Y[k] = sys.C @ x + (dw if on else 0.0)
        x = Phi @ x + (gw if on else 0.0)
    return Trajectory(scen.time, {n: Y[:, i] for i, n in enumerate(names)})


def simulate_nonlinear(dae, op, scen, K=None, limit=True):
    """RK4 integration of the coupled DAE with a Newton network solve at every stage.

    Returns deviations from ``op`` of each prosumer's ``omega``, ``P``,
    ``Q`` and terminal ``V`` (channels ``<name>.omega`` and so on).

    Raises
    ------
    AlgebraicNewtonFailure
        If the network equations cannot be solved mid-transient.
    """
    K = op.K if K is None else np.asarray(K, float)
    if scen.step.size != dae.n_w:
        raise ValueError("step size does not match the number of disturbance inputs")
    N = scen.n_steps
    k0 = scen.step_index
    h = scen.dt
    x = op.x0.copy()
    z = dae.z_of(op)
    wf = op.omega_frame
    P0, Q0 = dae.prosumer_powers(x, z, np.zeros(dae.n_w))
    V0 = np.array([p.terminal(xi)[0] for p, xi in zip(dae.prosumers, dae._xs(x))])
    om_idx = [int(a + np.flatnonzero(p.frequency_row)[0]) for p, a in zip(dae.prosumers, dae.offsets[:-1])]
    om0 = x[om_idx]
    names = [p.name for p in dae.prosumers]
    out = {f"{n}.{c}": np.zeros(N + 1) for c in ("omega", "P", "Q", "V") for n in names}

    def deriv(xs, zs, w):
        zs = dae.solve_algebraic(xs, w, zs)
        return dae.f(xs, zs, w, K, wf, limit), zs

    def record(k, xs, zs, w):
        P, Q = dae.prosumer_powers(xs, zs, w)
        for i, n in enumerate(names):
            out[f"{n}.omega"][k] = xs[om_idx[i]] - om0[i]
            out[f"{n}.P"][k] = P[i] - P0[i]
            out[f"{n}.Q"][k] = Q[i] - Q0[i]
            out[f"{n}.V"][k] = dae.prosumers[i].terminal(dae._xs(xs)[i])[0] - V0[i]

    zero = np.zeros(dae.n_w)
    for k in range(N + 1):
        w = scen.step if k >= k0 else zero
        z = dae.solve_algebraic(x, w, z)
        record(k, x, z, w)
        if k == N:
            break
        k1, z1 = deriv(x, z, w)
        k2, z2 = deriv(x + 0.5 * h * k1, z1, w)
        k3, z3 = deriv(x + 0.5 * h * k2, z2, w)
        k4, _ = deriv(x + h * k3, z3, w)
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return Trajectory(scen.time, out)


def response_metrics(traj, channel, step_time=0.0, initial=None, final=None, band=0.02):
    """Overshoot, settling time and oscillation energy of one channel.

    Parameters
    ----------
    traj : Trajectory
    channel : str
    step_time : float
        Time of the step; settling time is measured from it.
    initial, final : float, optional
        Pre-step and final values; default to the first and last samples.
    band : float
        Relative settling band.

    Returns
    -------
    dict
        ``overshoot`` is ``(peak - final) / |final - initial|`` in the step
        direction (0 if the response never passes ``final``);
        ``settling_time`` is the last exit from the band;
        ``osc_energy`` is ``sum (y - final)^2 dt`` from the first peak on.

    Raises
    ------
    NoSteadyState
        If the last 10 % of the trajectory leaves the band.
    """
    t = traj.time
    y = traj[channel]
    y0 = y[0] if initial is None else float(initial)
    yf = y[-1] if final is None else float(final)
    span = abs(yf - y0)
    dt = t[1] - t[0]
    tail = y[int(0.9 * y.size):]
    tol = band * span if span > 0 else band * max(np.max(np.abs(y - yf)), 1e-300)
    if span > 0 and np.max(np.abs(tail - yf)) > tol:
        raise NoSteadyState(f"channel {channel!r} has not settled within the horizon")
    after = t >= step_time
    ya, ta = y[after], t[after]
    sgn = np.sign(yf - y0) if span > 0 else 1.0
    excess = sgn * (ya - yf)
    overshoot = max(float(np.max(excess)) / span, 0.0) if span > 0 else 0.0
    outside = np.flatnonzero(np.abs(ya - yf) > tol)
    settling = float(ta[outside[-1] + 1] - step_time) if outside.size and outside[-1] + 1 < ta.size else 0.0
    if outside.size and outside[-1] + 1 >= ta.size:
        settling = float(ta[-1] - step_time)
    # first peak: first local extremum of the deviation from the final value
    d = sgn * (ya - y0)
    peaks = np.flatnonzero((d[1:-1] >= d[:-2]) & (d[1:-1] > d[2:])) + 1
    first = int(peaks[0]) if peaks.size else 0
    energy = float(np.sum((ya[first:] - yf) ** 2) * dt)
    return {"overshoot": float(overshoot), "settling_time": settling, "osc_energy": energy}
