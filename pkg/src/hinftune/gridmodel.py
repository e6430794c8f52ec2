"""Algebraic network model, coupled prosumer DAE, linearization and reduction.

Conventions
-----------
* Bus admittance ``Y = G_c + j B_s``; a series branch with impedance
  ``r + jx`` contributes ``-1/(r + jx)`` off the diagonal, so a lossless
  line has ``B_s[i, j] = +1/x``.
* Injections ``P, Q`` follow the polar power flow equations with
  ``Delta theta_ij = theta_i - theta_j``.
* Static prosumers are constant-power loads; positive ``P_load`` draws
  power from the bus.  Disturbance inputs ``w`` are deviations of selected
  load powers.
* Dynamic prosumer angles live in a frame rotating at ``omega_frame`` (pu),
  the steady-state frequency of the operating point.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    AlgebraicNewtonFailure,
    MultipleZeroModes,
    NonConvergence,
    NoZeroMode,
    SingularAlgebraicJacobian,
    UnmodeledBus,
)
from .lti import StateSpace
from .paramsys import ParamSystem

__all__ = [
    "Branch",
    "Network",
    "StaticProsumer",
    "SwingGenerator",
    "OperatingPoint",
    "CoupledDAE",
    "power_injections",
    "power_flow_residual",
    "power_flow_jacobian",
    "solve_power_flow",
    "build_coupled_system",
    "linearize",
    "remove_zero_mode",
    "reduced_system",
]

ZERO_EIG_TOL = 1e-8


@dataclass(frozen=True)
class Branch:
    """Series R-X branch with optional total shunt susceptance (line or transformer)."""

    from_bus: int
    to_bus: int
    r: float
    x: float
    b_shunt: float = 0.0


class Network:
    """Bus admittance data ``G_c, B_s`` of a connected grid.

    Parameters
    ----------
    G_c, B_s : array_like, shape (N, N)
        Symmetric conductance and susceptance matrices (pu).
    """

    def __init__(self, G_c, B_s):
        G = np.array(G_c, dtype=float)
        B = np.array(B_s, dtype=float)
        n = G.shape[0]
        if G.shape != (n, n) or B.shape != (n, n):
            raise ValueError("G_c and B_s must be square and of equal size")
        if not (np.allclose(G, G.T, atol=1e-12) and np.allclose(B, B.T, atol=1e-12)):
            raise ValueError("G_c and B_s must be symmetric")
        if not (np.all(np.isfinite(G)) and np.all(np.isfinite(B))):
            raise ValueError("admittance entries must be finite")
        adj = (np.abs(G) + np.abs(B)) > 0
        np.fill_diagonal(adj, False)
        seen = {0}
        stack = [0]
        while stack:
            i = stack.pop()
            for j in np.flatnonzero(adj[i]):
                if j not in seen:
                    seen.add(int(j))
                    stack.append(int(j))
        if len(seen) != n:
            raise ValueError("network graph is not connected")
        G.setflags(write=False)
        B.setflags(write=False)
        self.G_c, self.B_s = G, B

    @classmethod
    def from_branches(cls, n_buses, branches, shunts=None):
        """Build the admittance matrix from series branches and bus shunts ``{bus: g + jb}``."""
        Y = np.zeros((n_buses, n_buses), dtype=complex)
        for br in branches:
            i, j = br.from_bus, br.to_bus
            if i == j or not (0 <= i < n_buses and 0 <= j < n_buses):
                raise ValueError(f"invalid branch {br}")
            if br.r == 0 and br.x == 0:
                raise ValueError("branch impedance must be nonzero")
            y = 1.0 / complex(br.r, br.x)
            Y[i, i] += y + 0.5j * br.b_shunt
            Y[j, j] += y + 0.5j * br.b_shunt
            Y[i, j] -= y
            Y[j, i] -= y
        for bus, ysh in (shunts or {}).items():
            Y[bus, bus] += ysh
        return cls(Y.real, Y.imag)

    @property
    def n_buses(self):
        return self.G_c.shape[0]

    @property
    def Y(self):
        return self.G_c + 1j * self.B_s


def power_injections(net, V, theta):
    """Injected ``(P, Q)`` per bus."""
    Vc = np.asarray(V, float) * np.exp(1j * np.asarray(theta, float))
    S = Vc * np.conj(net.Y @ Vc)
    return S.real, S.imag


def power_flow_residual(net, V, theta, P, Q):
    """Stacked mismatches ``P_calc - P`` and ``Q_calc - Q``."""
    Pc, Qc = power_injections(net, V, theta)
    return np.concatenate([Pc - np.asarray(P, float), Qc - np.asarray(Q, float)])


def power_flow_jacobian(net, V, theta):
    """Derivatives of ``(P, Q)`` with respect to ``(V, theta)``.

    Returns
    -------
    ndarray, shape (2N, 2N)
        Rows ``(P, Q)``, columns ``(V, theta)``.
    """
    V = np.asarray(V, float)
    Vc = V * np.exp(1j * np.asarray(theta, float))
    Y = net.Y
    I = Y @ Vc
    dS_dth = 1j * np.diag(Vc) @ np.conj(np.diag(I) - Y @ np.diag(Vc))
    E = Vc / V
    dS_dV = np.diag(Vc) @ np.conj(Y @ np.diag(E)) + np.diag(np.conj(I) * E)
    return np.block([[dS_dV.real, dS_dth.real], [dS_dV.imag, dS_dth.imag]])


@dataclass
class OperatingPoint:
    """Steady state of the network (and of the prosumers, when present)."""

    V: np.ndarray
    theta: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    x0: np.ndarray = None
    omega_frame: float = 1.0
    K: np.ndarray = None
    residual: float = 0.0

    def to_csv(self, path):
        rows = ["bus,V,theta,P,Q"]
        for i in range(len(self.V)):
            rows.append(",".join([str(i)] + [repr(float(a[i])) for a in (self.V, self.theta, self.P, self.Q)]))
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(rows) + "\n")


def solve_power_flow(net, P, Q, slack_bus=0, bus_types=None, V_set=None, tol=1e-10, max_iter=50):
    """Newton-Raphson power flow from a flat start.

    Parameters
    ----------
    net : Network
    P, Q : array_like
        Specified injections (ignored where the bus type frees them).
    slack_bus : int
        Reference bus with fixed ``V`` and ``theta = 0``.
    bus_types : sequence of {"slack", "pv", "pq"}, optional
        Defaults to PQ everywhere except the slack bus.
    V_set : array_like, optional
        Voltage magnitudes of slack and PV buses (default 1).

    Raises
    ------
    NonConvergence
        If the mismatch does not fall below ``tol`` within ``max_iter``
        iterations.
    """
    n = net.n_buses
    P = np.asarray(P, float).reshape(n)
    Q = np.asarray(Q, float).reshape(n)
    if bus_types is None:
        bus_types = ["pq"] * n
        bus_types[slack_bus] = "slack"
    bus_types = list(bus_types)
    if bus_types.count("slack") != 1 or bus_types[slack_bus] != "slack":
        raise ValueError("exactly one slack bus is required")
    V = np.ones(n) if V_set is None else np.array(V_set, float)
    theta = np.zeros(n)
    th_idx = [i for i in range(n) if bus_types[i] != "slack"]
    v_idx = [i for i in range(n) if bus_types[i] == "pq"]
    p_rows = th_idx
    q_rows = v_idx
    for _ in range(max_iter + 1):
        Pc, Qc = power_injections(net, V, theta)
        mis = np.concatenate([(Pc - P)[p_rows], (Qc - Q)[q_rows]])
        if np.max(np.abs(mis), initial=0.0) < tol:
            return OperatingPoint(V, theta, Pc, Qc, residual=float(np.max(np.abs(mis), initial=0.0)))
        J = power_flow_jacobian(net, V, theta)
        rows = p_rows + [n + i for i in q_rows]
        cols = [n + i for i in th_idx] + v_idx
        dx = np.linalg.solve(J[np.ix_(rows, cols)], -mis)
        theta[th_idx] += dx[: len(th_idx)]
        V[v_idx] += dx[len(th_idx):]
    raise NonConvergence(f"power flow did not converge in {max_iter} iterations (mismatch {np.max(np.abs(mis)):.3e})")


@dataclass
class StaticProsumer:
    """Constant-power load at a bus; selected channels form the disturbance input."""

    bus: int
    P_load: float = 0.0
    Q_load: float = 0.0
    is_disturbance: bool = False
    channels: tuple = ("P",)
    name: str = ""


class SwingGenerator:
    """Classical swing-equation machine with constant voltage behind the bus.

    States ``(delta, omega)`` followed by the governor states.  The
    governor diagram maps speed deviation ``omega - 1`` to a mechanical
    power change; its tunables are the generator's parameters.
    """

    def __init__(self, H, D, P_m, E=1.0, governor=None, omega_base=2 * np.pi * 50.0, name="gen"):
        if H <= 0:
            raise ValueError("inertia constant H must be positive")
        self.H, self.D, self.P_m, self.E = float(H), float(D), float(P_m), float(E)
        self.omega_base = omega_base
        self.name = name
        self.governor = governor
        self._n_gov = 0 if governor is None else governor.state_space().n_states
        self.n_states = 2 + self._n_gov
        self.param_names = tuple(governor.param_names) if governor is not None else ()
        self.params = governor.nominal if governor is not None else np.zeros(0)
        self.bounds = dict(governor.bounds) if governor is not None else {}
        self.theta_shift = np.zeros(self.n_states)
        self.theta_shift[0] = 1.0
        self.frequency_row = np.zeros(self.n_states)
        self.frequency_row[1] = 1.0

    def initial_state(self):
        return np.concatenate([[0.0, 1.0], np.zeros(self._n_gov)])

    def _gov(self, K):
        return self.governor.state_space(K) if self.governor is not None else None

    def rhs(self, x, P, Q, K, omega_frame, limit=False):
        dw = x[1] - 1.0
        xg = x[2:]
        dx = np.zeros(self.n_states)
        if self.governor is None:
            pm = 0.0
        elif limit:
            grhs, gout = self.governor.nonlinear(K)
            pm = gout(xg, [dw])[0]
            dx[2:] = grhs(xg, [dw])
        else:
            g = self._gov(K)
            pm = (g.C @ xg + g.D[:, 0] * dw)[0]
            dx[2:] = g.A @ xg + g.B[:, 0] * dw
        dx[0] = self.omega_base * (x[1] - omega_frame)
        dx[1] = (self.P_m + pm - P - self.D * dw) / (2 * self.H)
        return dx

    def jacobians(self, x, P, Q, K):
        n = self.n_states
        fx = np.zeros((n, n))
        fx[0, 1] = self.omega_base
        fx[1, 1] = -self.D / (2 * self.H)
        if self.governor is not None:
            g = self._gov(K)
            fx[1, 1] += g.D[0, 0] / (2 * self.H)
            fx[1, 2:] = g.C[0] / (2 * self.H)
            fx[2:, 1] = g.B[:, 0]
            fx[2:, 2:] = g.A
        fP = np.zeros(n)
        fP[1] = -1.0 / (2 * self.H)
        fQ = np.zeros(n)
        fw = np.zeros(n)
        fw[0] = -self.omega_base
        return fx, fP, fQ, fw

    def terminal(self, x):
        return self.E, x[0]

    def terminal_jacobian(self, x):
        J = np.zeros((2, self.n_states))
        J[1, 0] = 1.0
        return J


def _local_params(p):
    return np.asarray(getattr(p, "params"), dtype=float)


class CoupledDAE:
    """Dynamic prosumers coupled through the algebraic power flow.

    Use :func:`build_coupled_system` to construct.  Differential states are
    the stacked prosumer states; algebraic unknowns are ``(V, theta)`` of
    buses without a dynamic prosumer.
    """

    def __init__(self, net, dynamic, static, disturbances, outputs=("omega",)):
        self.net = net
        self.dynamic = dict(sorted(dynamic.items()))
        self.static = list(static)
        self.disturbances = list(disturbances)
        self.outputs = tuple(outputs)
        n = net.n_buses
        self.dyn_buses = list(self.dynamic)
        self.prosumers = [self.dynamic[b] for b in self.dyn_buses]
        self.alg_buses = [i for i in range(n) if i not in self.dynamic]
        sizes = [p.n_states for p in self.prosumers]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        self.n_x = int(self.offsets[-1])
        self.n_z = 2 * len(self.alg_buses)
        self.n_w = len(self.disturbances)
        names, lo, hi, nom = [], [], [], []
        self.param_offsets = [0]
        for p in self.prosumers:
            for k, v in zip(p.param_names, _local_params(p)):
                names.append(f"{p.name}.{k}")
                lo.append(p.bounds[k][0])
                hi.append(p.bounds[k][1])
                nom.append(v)
            self.param_offsets.append(len(names))
        self.param_names = names
        self.K_min = np.array(lo, float)
        self.K_max = np.array(hi, float)
        self.K_nominal = np.array(nom, float)
        self.theta_shift = np.concatenate([p.theta_shift for p in self.prosumers])
        self.theta_ref = int(self.offsets[0] + np.flatnonzero(self.prosumers[0].theta_shift)[0])

    # helpers ---------------------------------------------------------------
    def _split_K(self, K):
        return [K[a:b] for a, b in zip(self.param_offsets[:-1], self.param_offsets[1:])]

    def _xs(self, x):
        return [x[a:b] for a, b in zip(self.offsets[:-1], self.offsets[1:])]

    def load_vectors(self, w=None):
        """Per-bus load ``(P, Q)`` including disturbance deviations ``w``."""
        n = self.net.n_buses
        PL = np.zeros(n)
        QL = np.zeros(n)
        for s in self.static:
            PL[s.bus] += s.P_load
            QL[s.bus] += s.Q_load
        if w is not None:
            for (k, ch), wk in zip(self.disturbances, np.atleast_1d(w)):
                (PL if ch == "P" else QL)[self.static[k].bus] += wk
        return PL, QL

    def _disturbance_matrix(self):
        n = self.net.n_buses
        L = np.zeros((2 * n, self.n_w))
        for c, (k, ch) in enumerate(self.disturbances):
            bus = self.static[k].bus
            L[bus if ch == "P" else n + bus, c] = 1.0
        return L

    def bus_phasors(self, x, z):
        n = self.net.n_buses
        V = np.empty(n)
        th = np.empty(n)
        for b, p, xi in zip(self.dyn_buses, self.prosumers, self._xs(x)):
            V[b], th[b] = p.terminal(xi)
        m = len(self.alg_buses)
        V[self.alg_buses] = z[:m]
        th[self.alg_buses] = z[m:]
        return V, th

    def prosumer_powers(self, x, z, w=None):
        """Active and reactive infeed of each dynamic prosumer."""
        V, th = self.bus_phasors(x, z)
        P, Q = power_injections(self.net, V, th)
        PL, QL = self.load_vectors(w)
        return (P + PL)[self.dyn_buses], (Q + QL)[self.dyn_buses]

    def f(self, x, z, w, K, omega_frame, limit=False):
        V, th = self.bus_phasors(x, z)
        P, Q = power_injections(self.net, V, th)
        PL, QL = self.load_vectors(w)
        out = np.empty(self.n_x)
        for b, p, xi, Ki, a, c in zip(self.dyn_buses, self.prosumers, self._xs(x), self._split_K(K),
                                      self.offsets[:-1], self.offsets[1:]):
            out[a:c] = p.rhs(xi, P[b] + PL[b], Q[b] + QL[b], Ki, omega_frame, limit)
        return out

    def h(self, x, z, w):
        V, th = self.bus_phasors(x, z)
        P, Q = power_injections(self.net, V, th)
        PL, QL = self.load_vectors(w)
        a = self.alg_buses
        return np.concatenate([(P + PL)[a], (Q + QL)[a]])

    def _injection_sensitivities(self, x, z):
        """Derivatives of bus injections ``(P, Q)`` with respect to ``x`` and ``z``."""
        n = self.net.n_buses
        V, th = self.bus_phasors(x, z)
        J = power_flow_jacobian(self.net, V, th)
        Mx = np.zeros((2 * n, self.n_x))
        for b, p, xi, a, c in zip(self.dyn_buses, self.prosumers, self._xs(x), self.offsets[:-1], self.offsets[1:]):
            T = p.terminal_jacobian(xi)
            Mx[b, a:c] = T[0]
            Mx[n + b, a:c] = T[1]
        m = len(self.alg_buses)
        Mz = np.zeros((2 * n, self.n_z))
        for k, b in enumerate(self.alg_buses):
            Mz[b, k] = 1.0
            Mz[n + b, m + k] = 1.0
        return J @ Mx, J @ Mz

    def jacobians(self, x, z, w, K):
        """Analytic ``f_x, f_z, f_w, f_frame, h_x, h_z, h_w`` at a point."""
        n = self.net.n_buses
        V, th = self.bus_phasors(x, z)
        P, Q = power_injections(self.net, V, th)
        PL, QL = self.load_vectors(w)
        Js_x, Js_z = self._injection_sensitivities(x, z)
        Lw = self._disturbance_matrix()
        fx = np.zeros((self.n_x, self.n_x))
        fz = np.zeros((self.n_x, self.n_z))
        fw = np.zeros((self.n_x, self.n_w))
        ff = np.zeros(self.n_x)
        for b, p, xi, Ki, a, c in zip(self.dyn_buses, self.prosumers, self._xs(x), self._split_K(K),
                                      self.offsets[:-1], self.offsets[1:]):
            lx, lP, lQ, lf = p.jacobians(xi, P[b] + PL[b], Q[b] + QL[b], Ki)
            rows = np.outer(lP, Js_x[b]) + np.outer(lQ, Js_x[n + b])
            fx[a:c] += rows
            fx[a:c, a:c] += lx
            fz[a:c] = np.outer(lP, Js_z[b]) + np.outer(lQ, Js_z[n + b])
            fw[a:c] = np.outer(lP, Lw[b]) + np.outer(lQ, Lw[n + b])
            ff[a:c] = lf
        sel = list(self.alg_buses) + [n + b for b in self.alg_buses]
        hx = Js_x[sel]
        hz = Js_z[sel]
        hw = Lw[sel]
        return fx, fz, fw, ff, hx, hz, hw

    def output_matrices(self, x, z, w, K):
        """Linear output map ``y = C_x dx + C_z dz + D_w dw`` for the selected channels."""
        n = self.net.n_buses
        Cx, Cz, Dw = [], [], []
        if "omega" in self.outputs:
            for p, a, c in zip(self.prosumers, self.offsets[:-1], self.offsets[1:]):
                row = np.zeros(self.n_x)
                row[a:c] = p.frequency_row
                Cx.append(row)
                Cz.append(np.zeros(self.n_z))
                Dw.append(np.zeros(self.n_w))
        if "P" in self.outputs:
            Js_x, Js_z = self._injection_sensitivities(x, z)
            Lw = self._disturbance_matrix()
            for b in self.dyn_buses:
                Cx.append(Js_x[b])
                Cz.append(Js_z[b])
                Dw.append(Lw[b])
        return np.array(Cx).reshape(-1, self.n_x), np.array(Cz).reshape(-1, self.n_z), np.array(Dw).reshape(-1, self.n_w)

    # steady state ----------------------------------------------------------
    def _alg_jacobian(self, x, z):
        n = self.net.n_buses
        V, th = self.bus_phasors(x, z)
        J = power_flow_jacobian(self.net, V, th)
        sel = list(self.alg_buses) + [n + b for b in self.alg_buses]
        return J[np.ix_(sel, sel)]

    def solve_algebraic(self, x, w, z0, tol=1e-10, max_iter=20):
        """Newton solve of the network equations for fixed prosumer states."""
        z = np.array(z0, float)
        for _ in range(max_iter + 1):
            r = self.h(x, z, w)
            if np.max(np.abs(r), initial=0.0) < tol:
                return z
            hz = self._alg_jacobian(x, z)
            try:
                z = z - np.linalg.solve(hz, r)
            except np.linalg.LinAlgError as exc:
                raise AlgebraicNewtonFailure("singular network Jacobian") from exc
            if not np.all(np.isfinite(z)):
                break
        raise AlgebraicNewtonFailure(f"network equations did not converge (residual {np.max(np.abs(r)):.3e})")

    def equilibrium(self, K=None, guess=None, tol=1e-10, max_iter=50):
        """Steady state with common frequency and the reference angle fixed at 0.

        Raises
        ------
        NonConvergence
        """
        K = self.K_nominal if K is None else np.asarray(K, float)
        if guess is not None and guess.x0 is not None:
            x = guess.x0.copy()
            V, th = guess.V, guess.theta
            z = np.concatenate([V[self.alg_buses], th[self.alg_buses]])
            wf = guess.omega_frame
        else:
            x = np.concatenate([p.initial_state() for p in self.prosumers])
            m = len(self.alg_buses)
            z = np.concatenate([np.ones(m), np.zeros(m)])
            wf = 1.0
        x[self.theta_ref] = 0.0
        keep = [i for i in range(self.n_x + self.n_z + 1) if i != self.theta_ref]
        w0 = np.zeros(self.n_w)
        for _ in range(max_iter + 1):
            F = np.concatenate([self.f(x, z, w0, K, wf), self.h(x, z, w0)])
            res = np.max(np.abs(F))
            if res < tol:
                V, th = self.bus_phasors(x, z)
                P, Q = power_injections(self.net, V, th)
                return OperatingPoint(V, th, P, Q, x0=x.copy(), omega_frame=float(wf), K=K.copy(), residual=float(res))
            fx, fz, _, ff, hx, hz, _ = self.jacobians(x, z, w0, K)
            Jf = np.block([[fx, fz, ff[:, None]], [hx, hz, np.zeros((self.n_z, 1))]])[:, keep]
            try:
                d = np.linalg.solve(Jf, -F)
            except np.linalg.LinAlgError as exc:
                raise NonConvergence("singular steady-state Jacobian") from exc
            full = np.zeros(self.n_x + self.n_z + 1)
            full[keep] = d
            x = x + full[: self.n_x]
            z = z + full[self.n_x: self.n_x + self.n_z]
            wf = wf + full[-1]
            if not np.all(np.isfinite(full)):
                break
        raise NonConvergence(f"steady state not found (residual {res:.3e})")

    def z_of(self, op):
        return np.concatenate([op.V[self.alg_buses], op.theta[self.alg_buses]])


def build_coupled_system(net, prosumers, static=(), disturbance_selection=None, outputs=("omega",)):
    """Couple dynamic prosumers ``{bus: prosumer}`` and static loads through ``net``.

    Parameters
    ----------
    disturbance_selection : list of (static index, "P" | "Q"), optional
        Defaults to the declared channels of every static prosumer flagged
        as a disturbance.

    Raises
    ------
    UnmodeledBus
        If a prosumer or load references a bus outside the network.
    """
    n = net.n_buses
    prosumers = dict(prosumers)
    if not prosumers:
        raise UnmodeledBus("at least one dynamic prosumer is required")
    for b in prosumers:
        if not 0 <= b < n:
            raise UnmodeledBus(f"dynamic prosumer at unknown bus {b}")
    for s in static:
        if not 0 <= s.bus < n:
            raise UnmodeledBus(f"static prosumer at unknown bus {s.bus}")
    names = [p.name for p in prosumers.values()]
    if len(set(names)) != len(names):
        raise ValueError("dynamic prosumer names must be unique")
    if disturbance_selection is None:
        disturbance_selection = [(k, ch) for k, s in enumerate(static) if s.is_disturbance for ch in s.channels]
    disturbance_selection = [(int(k), str(ch)) for k, ch in disturbance_selection]
    if not disturbance_selection:
        raise ValueError("disturbance selection must not be empty")
    for k, ch in disturbance_selection:
        if not 0 <= k < len(static) or ch not in ("P", "Q"):
            raise ValueError(f"invalid disturbance channel {(k, ch)}")
    for ch in outputs:
        if ch not in ("omega", "P"):
            raise ValueError(f"unknown output channel {ch!r}")
    return CoupledDAE(net, prosumers, static, disturbance_selection, outputs)


def _tilde(dae, op, K):
    x, z, w = op.x0, dae.z_of(op), np.zeros(dae.n_w)
    fx, fz, fw, _, hx, hz, hw = dae.jacobians(x, z, w, K)
    if dae.n_z:
        if np.linalg.cond(hz) > 1e12:
            raise SingularAlgebraicJacobian("algebraic Jacobian is singular at the operating point")
        Sx = np.linalg.solve(hz, hx)
        Sw = np.linalg.solve(hz, hw)
    else:
        Sx = np.zeros((0, dae.n_x))
        Sw = np.zeros((0, dae.n_w))
    A = fx - fz @ Sx
    B = fw - fz @ Sw
    Cx, Cz, Dw = dae.output_matrices(x, z, w, K)
    C = Cx - Cz @ Sx
    D = Dw - Cz @ Sw
    return StateSpace(A, B, C, D)


def linearize(dae, op=None):
    """ParamSystem ``K -> (A~, B~, C~, D~)`` with the algebraic variables eliminated.

    The operating point is re-solved for every ``K`` (warm started from
    ``op``), since droop gains move the steady state.
    """
    base = op if op is not None else dae.equilibrium()

    def fn(K):
        if base.K is not None and np.array_equal(K, base.K):
            pt = base
        else:
            pt = dae.equilibrium(K, guess=base)
        return _tilde(dae, pt, K)

    return ParamSystem(fn, dae.param_names, dae.K_min, dae.K_max, dae.K_nominal,
                       output_names=_output_names(dae), input_names=_input_names(dae))


def _output_names(dae):
    out = []
    if "omega" in dae.outputs:
        out += [f"{p.name}.omega" for p in dae.prosumers]
    if "P" in dae.outputs:
        out += [f"{p.name}.P" for p in dae.prosumers]
    return out


def _input_names(dae):
    return [f"{dae.static[k].name or 'load%d' % k}.{ch}" for k, ch in dae.disturbances]


def zero_mode_basis(shift):
    """Orthonormal basis ``Q`` of the complement of ``shift``."""
    v = np.asarray(shift, float)
    v = v / np.linalg.norm(v)
    Qf, _ = np.linalg.qr(np.column_stack([v, np.eye(v.size)]))
    Q = Qf[:, 1: v.size]
    # fix column signs for reproducibility
    s = np.sign(Q[np.argmax(np.abs(Q), axis=0), np.arange(Q.shape[1])])
    return Q * s


def _count_zero(A):
    if A.shape[0] == 0:
        return 0
    return int(np.sum(np.abs(np.linalg.eigvals(A)) < ZERO_EIG_TOL))


def remove_zero_mode(sys, shift):
    """Project out the phase-invariance mode.

    ``shift`` is the state direction of a uniform angle offset (a right
    null vector of ``A~``).  Returns ``(Q^T A~ Q, Q^T B~, C~ Q, D~)``.

    Raises
    ------
    NoZeroMode
        If ``A~`` has no near-zero eigenvalue (e.g. already reduced).
    MultipleZeroModes
        If it has more than one (islanded sub-networks).
    """
    if isinstance(sys, ParamSystem):
        def fn(K):
            return remove_zero_mode(sys.evaluate(K), shift)
        return ParamSystem(fn, sys.param_names, sys.K_min, sys.K_max, sys.K_nominal,
                           sys.output_names, sys.input_names)
    shift = np.asarray(shift, float)
    if shift.size != sys.n_states:
        raise NoZeroMode("shift vector does not match the state dimension (already reduced?)")
    nz = _count_zero(sys.A)
    if nz == 0:
        raise NoZeroMode("no eigenvalue near zero")
    if nz > 1:
        raise MultipleZeroModes(f"{nz} eigenvalues near zero")
    Q = zero_mode_basis(shift)
    return StateSpace(Q.T @ sys.A @ Q, Q.T @ sys.B, sys.C @ Q, sys.D)


def reduced_system(dae, op=None):
    """ParamSystem of the reduced linear model used for tuning."""
    return remove_zero_mode(linearize(dae, op), dae.theta_shift)
