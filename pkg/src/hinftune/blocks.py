"""SISO transfer-function blocks and block-diagram composition.

A :class:`BlockDiagram` is a signal graph: every block has one input,
formed as a weighted sum of external inputs and block outputs, and one
output.  :func:`assemble` turns a diagram into a
:class:`~hinftune.paramsys.ParamSystem` over the declared tunable
parameters.  Limiters are identity in the linear model; the nonlinear
evaluator (:meth:`BlockDiagram.nonlinear`) applies them.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import IllPosedLoop
from .lti import StateSpace
from .paramsys import ParamSystem

__all__ = [
    "Block",
    "BlockDiagram",
    "DroopInverter",
    "block_to_ss",
    "assemble",
    "droop_inverter_model",
    "gain",
    "inverse_gain",
    "integrator",
    "lag",
    "lead_lag",
    "washout",
    "notch",
    "limiter",
    "exciter",
    "rate_feedback",
    "transfer_function",
    "series",
    "compose",
    "exac4",
    "ieee_avr",
    "pss1a",
    "simple_pss",
    "tgov1",
]

KIND_PARAMS = {
    "gain": ("K",),
    "inverse_gain": ("R",),
    "integrator": ("K",),
    "first_order_lag": ("K", "T"),
    "lead_lag": ("T_num", "T_den"),
    "washout": ("K", "T_w"),
    "notch": ("A_1", "A_2"),
    "limiter": ("min", "max"),
    "exciter": ("K_e", "T_e"),
    "rate_feedback": ("K", "T"),
    "tf": ("num", "den"),
}
_N_STATES = {
    "gain": 0, "inverse_gain": 0, "integrator": 1, "first_order_lag": 1, "lead_lag": 1,
    "washout": 1, "notch": 2, "limiter": 0, "exciter": 1, "rate_feedback": 1,
}
_FEEDTHROUGH = {"gain", "inverse_gain", "lead_lag", "washout", "limiter", "rate_feedback"}


@dataclass
class Block:
    """One SISO block.

    ``labels`` renames parameters in the assembled parameter vector (for
    example ``{"K": "K_A"}``); unlabeled tunables are named
    ``"<block name>.<param>"``.
    """

    name: str
    kind: str
    params: dict
    tunable: tuple = ()
    labels: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KIND_PARAMS:
            raise ValueError(f"unknown block kind {self.kind!r}")
        missing = set(KIND_PARAMS[self.kind]) - set(self.params)
        if missing:
            raise ValueError(f"block {self.name!r} is missing parameters {sorted(missing)}")
        extra = set(self.params) - set(KIND_PARAMS[self.kind])
        if extra:
            raise ValueError(f"block {self.name!r} has unknown parameters {sorted(extra)}")
        self.tunable = tuple(self.tunable)
        for t in self.tunable:
            if t not in self.params:
                raise ValueError(f"tunable tag {t!r} is not a parameter of block {self.name!r}")
            if self.kind in ("tf", "limiter"):
                raise ValueError(f"{self.kind} blocks have no tunable parameters")
        _realize(self.kind, self.params)  # validates values

    @property
    def n_states(self):
        if self.kind == "tf":
            return len(np.trim_zeros(np.atleast_1d(self.params["den"]), "f")) - 1
        return _N_STATES[self.kind]

    def full_name(self, param):
        return self.labels.get(param, f"{self.name}.{param}")


def _check_positive(kind, **vals):
    for k, v in vals.items():
        if not v > 0:
            raise ValueError(f"{kind}: {k} must be positive, got {v}")


def _realize(kind, p):
    """(A, B, C, D) arrays for one block with parameter values ``p``."""
    z = np.zeros
    if kind == "gain":
        return z((0, 0)), z((0, 1)), z((1, 0)), np.array([[p["K"]]], float)
    if kind == "inverse_gain":
        _check_positive(kind, R=p["R"])
        return z((0, 0)), z((0, 1)), z((1, 0)), np.array([[1.0 / p["R"]]])
    if kind == "limiter":
        if not p["min"] < p["max"]:
            raise ValueError("limiter: min must be below max")
        return z((0, 0)), z((0, 1)), z((1, 0)), np.ones((1, 1))
    if kind == "integrator":
        return z((1, 1)), np.array([[p["K"]]], float), np.ones((1, 1)), z((1, 1))
    if kind == "first_order_lag":
        K, T = p["K"], p["T"]
        _check_positive(kind, T=T)
        return np.array([[-1.0 / T]]), np.array([[K / T]]), np.ones((1, 1)), z((1, 1))
    if kind == "lead_lag":
        Tn, Td = p["T_num"], p["T_den"]
        _check_positive(kind, T_den=Td)
        if Tn < 0:
            raise ValueError("lead_lag: T_num must be non-negative")
        return np.array([[-1.0 / Td]]), np.array([[1.0 / Td]]), np.array([[1.0 - Tn / Td]]), np.array([[Tn / Td]])
    if kind == "washout":
        K, Tw = p["K"], p["T_w"]
        _check_positive(kind, T_w=Tw)
        return np.array([[-1.0 / Tw]]), np.array([[1.0 / Tw]]), np.array([[-K]], float), np.array([[K]], float)
    if kind == "rate_feedback":
        K, T = p["K"], p["T"]
        _check_positive(kind, T=T)
        return np.array([[-1.0 / T]]), np.array([[1.0 / T]]), np.array([[-K / T]]), np.array([[K / T]])
    if kind == "exciter":
        Ke, Te = p["K_e"], p["T_e"]
        _check_positive(kind, T_e=Te)
        return np.array([[-Ke / Te]]), np.array([[1.0 / Te]]), np.ones((1, 1)), z((1, 1))
    if kind == "notch":
        A1, A2 = p["A_1"], p["A_2"]
        _check_positive(kind, A_2=A2)
        if A1 < 0:
            raise ValueError("notch: A_1 must be non-negative")
        A = np.array([[0.0, 1.0], [-1.0 / A2, -A1 / A2]])
        return A, np.array([[0.0], [1.0 / A2]]), np.array([[1.0, 0.0]]), z((1, 1))
    if kind == "tf":
        return _tf_realize(p["num"], p["den"])
    raise ValueError(kind)


def _tf_realize(num, den):
    """Controllable canonical form of a proper SISO transfer function."""
    num = np.trim_zeros(np.atleast_1d(np.asarray(num, float)), "f")
    den = np.trim_zeros(np.atleast_1d(np.asarray(den, float)), "f")
    if den.size == 0:
        raise ValueError("tf: zero denominator")
    if num.size > den.size:
        raise ValueError("tf: improper transfer function")
    num = num / den[0]
    den = den / den[0]
    n = den.size - 1
    if num.size == 0:
        num = np.zeros(1)
    num = np.concatenate([np.zeros(n + 1 - num.size), num])
    D = num[0]
    if n == 0:
        return np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), np.array([[D]])
    A = np.zeros((n, n))
    A[:-1, 1:] = np.eye(n - 1)
    A[-1, :] = -den[1:][::-1]
    B = np.zeros((n, 1))
    B[-1, 0] = 1.0
    C = (num[1:] - D * den[1:])[::-1].reshape(1, n)
    return A, B, C, np.array([[D]])


def block_to_ss(b):
    """State-space realization of a single block (limiters as identity)."""
    return StateSpace(*_realize(b.kind, b.params))


# convenience constructors --------------------------------------------------

def gain(name, K, tunable=(), labels=None):
    return Block(name, "gain", {"K": K}, tunable, labels or {})


def inverse_gain(name, R, tunable=(), labels=None):
    return Block(name, "inverse_gain", {"R": R}, tunable, labels or {})


def integrator(name, K=1.0, tunable=(), labels=None):
    return Block(name, "integrator", {"K": K}, tunable, labels or {})


def lag(name, K, T, tunable=(), labels=None):
    return Block(name, "first_order_lag", {"K": K, "T": T}, tunable, labels or {})


def lead_lag(name, T_num, T_den, tunable=(), labels=None):
    return Block(name, "lead_lag", {"T_num": T_num, "T_den": T_den}, tunable, labels or {})


def washout(name, K, T_w, tunable=(), labels=None):
    return Block(name, "washout", {"K": K, "T_w": T_w}, tunable, labels or {})


def notch(name, A_1, A_2, tunable=(), labels=None):
    return Block(name, "notch", {"A_1": A_1, "A_2": A_2}, tunable, labels or {})


def limiter(name, vmin, vmax):
    return Block(name, "limiter", {"min": vmin, "max": vmax})


def exciter(name, K_e, T_e, tunable=(), labels=None):
    return Block(name, "exciter", {"K_e": K_e, "T_e": T_e}, tunable, labels or {})


def rate_feedback(name, K, T, tunable=(), labels=None):
    return Block(name, "rate_feedback", {"K": K, "T": T}, tunable, labels or {})


def transfer_function(name, num, den):
    return Block(name, "tf", {"num": list(num), "den": list(den)})


# diagrams ------------------------------------------------------------------

def _as_terms(spec):
    if isinstance(spec, str):
        return [(spec, 1.0)]
    return [(s, float(g)) for s, g in spec]


class BlockDiagram:
    """Signal graph of SISO blocks.

    Parameters
    ----------
    blocks : list of Block
        Declaration order fixes the state and parameter ordering.
    connections : list of (source, block, gain)
        ``source`` is an input name or a block name; the input of ``block``
        is the weighted sum of all its incoming connections.
    inputs : list of str
    outputs : dict
        Output name -> source name, or list of ``(source, gain)`` terms.
    bounds : dict
        Box bounds ``(lo, hi)`` for every tunable parameter, keyed by its
        full name.
    """

    def __init__(self, blocks, connections, inputs, outputs, bounds=None):
        self.blocks = list(blocks)
        names = [b.name for b in self.blocks]
        if len(set(names)) != len(names):
            raise ValueError("duplicate block names")
        self.inputs = list(inputs)
        if set(self.inputs) & set(names):
            raise ValueError("input names collide with block names")
        self.connections = [(s, d, float(g)) for s, d, g in connections]
        for s, d, _ in self.connections:
            if s not in names and s not in self.inputs:
                raise ValueError(f"unknown signal source {s!r}")
            if d not in names:
                raise ValueError(f"unknown destination block {d!r}")
        self.outputs = {k: _as_terms(v) for k, v in dict(outputs).items()}
        for terms in self.outputs.values():
            for s, _ in terms:
                if s not in names and s not in self.inputs:
                    raise ValueError(f"unknown output source {s!r}")
        self.bounds = {k: (float(lo), float(hi)) for k, (lo, hi) in (bounds or {}).items()}
        for name in self.param_names:
            if name not in self.bounds:
                raise ValueError(f"tunable parameter {name!r} has no bounds")
            lo, hi = self.bounds[name]
            if lo > hi:
                raise ValueError(f"bounds of {name!r} are reversed")

    @property
    def param_names(self):
        out = []
        for b in self.blocks:
            out.extend(b.full_name(t) for t in b.tunable)
        return out

    @property
    def nominal(self):
        return np.array([b.params[t] for b in self.blocks for t in b.tunable], dtype=float)

    def _param_sets(self, K):
        K = np.asarray(K, dtype=float)
        sets = []
        i = 0
        for b in self.blocks:
            p = dict(b.params)
            for t in b.tunable:
                p[t] = float(K[i])
                i += 1
            sets.append(p)
        return sets

    def _interconnection(self):
        idx = {b.name: k for k, b in enumerate(self.blocks)}
        inp = {w: k for k, w in enumerate(self.inputs)}
        nb, nw = len(self.blocks), len(self.inputs)
        F = np.zeros((nb, nb))
        E = np.zeros((nb, nw))
        for s, d, g in self.connections:
            if s in idx:
                F[idx[d], idx[s]] += g
            else:
                E[idx[d], inp[s]] += g
        ny = len(self.outputs)
        H = np.zeros((ny, nb))
        J = np.zeros((ny, nw))
        for r, terms in enumerate(self.outputs.values()):
            for s, g in terms:
                if s in idx:
                    H[r, idx[s]] += g
                else:
                    J[r, inp[s]] += g
        return F, E, H, J

    def state_space(self, K=None):
        """Composed linear model at parameter vector ``K`` (nominal if None)."""
        K = self.nominal if K is None else K
        reals = [_realize(b.kind, p) for b, p in zip(self.blocks, self._param_sets(K))]
        nb = len(self.blocks)
        ns = [r[0].shape[0] for r in reals]
        nx = sum(ns)
        Ab = np.zeros((nx, nx))
        Bb = np.zeros((nx, nb))
        Cb = np.zeros((nb, nx))
        Db = np.zeros((nb, nb))
        o = 0
        for k, (A, B, C, D) in enumerate(reals):
            n = ns[k]
            Ab[o:o + n, o:o + n] = A
            Bb[o:o + n, k] = B[:, 0]
            Cb[k, o:o + n] = C[0]
            Db[k, k] = D[0, 0]
            o += n
        F, E, H, J = self._interconnection()
        L = np.eye(nb) - Db @ F
        if np.linalg.cond(L) > 1e12:
            raise IllPosedLoop("delay-free algebraic loop with unit loop gain")
        Linv = np.linalg.inv(L)
        A = Ab + Bb @ F @ Linv @ Cb
        B = Bb @ F @ Linv @ Db @ E + Bb @ E
        C = H @ Linv @ Cb
        D = H @ Linv @ Db @ E + J
        return StateSpace(A, B, C, D)

    def nonlinear(self, K=None):
        """Return ``(rhs, out)`` callables applying limiters.

        ``rhs(x, w) -> dx`` and ``out(x, w) -> y``.  Requires that no
        algebraic loop passes through direct-feedthrough blocks.
        """
        K = self.nominal if K is None else K
        reals = [_realize(b.kind, p) for b, p in zip(self.blocks, self._param_sets(K))]
        sets = self._param_sets(K)
        F, E, H, J = self._interconnection()
        nb = len(self.blocks)
        ft = [b.kind in _FEEDTHROUGH or (b.kind == "tf" and abs(reals[k][3][0, 0]) > 0)
              for k, b in enumerate(self.blocks)]
        order, done = [], [not f for f in ft]
        while len(order) < sum(ft):
            progressed = False
            for k in range(nb):
                if done[k]:
                    continue
                deps = [j for j in range(nb) if F[k, j] != 0 and ft[j] and j != k]
                if F[k, k] != 0:
                    raise IllPosedLoop("algebraic self-loop cannot be evaluated nonlinearly")
                if all(done[j] for j in deps):
                    order.append(k)
                    done[k] = True
                    progressed = True
            if not progressed:
                raise IllPosedLoop("algebraic loop through feedthrough blocks")
        offs = np.cumsum([0] + [r[0].shape[0] for r in reals])

        def outputs_of(x, w):
            yb = np.zeros(nb)
            for k in range(nb):
                if not ft[k]:
                    A, B, C, D = reals[k]
                    yb[k] = (C @ x[offs[k]:offs[k + 1]])[0] if C.size else 0.0
            for k in order:
                A, B, C, D = reals[k]
                u = F[k] @ yb + E[k] @ w
                v = (C @ x[offs[k]:offs[k + 1]])[0] if C.size else 0.0
                v += D[0, 0] * u
                if self.blocks[k].kind == "limiter":
                    v = min(max(v, sets[k]["min"]), sets[k]["max"])
                yb[k] = v
            return yb

        def rhs(x, w):
            x = np.asarray(x, float)
            w = np.atleast_1d(np.asarray(w, float))
            yb = outputs_of(x, w)
            dx = np.zeros_like(x)
            for k in range(nb):
                A, B, C, D = reals[k]
                if A.shape[0]:
                    u = F[k] @ yb + E[k] @ w
                    dx[offs[k]:offs[k + 1]] = A @ x[offs[k]:offs[k + 1]] + B[:, 0] * u
            return dx

        def out(x, w):
            w = np.atleast_1d(np.asarray(w, float))
            return H @ outputs_of(np.asarray(x, float), w) + J @ w

        return rhs, out


def assemble(diag):
    """ParamSystem over the diagram's tunable parameters (declaration order)."""
    names = diag.param_names
    lo = np.array([diag.bounds[n][0] for n in names])
    hi = np.array([diag.bounds[n][1] for n in names])
    diag.state_space(diag.nominal)  # well-posedness at the nominal point
    return ParamSystem(diag.state_space, names, lo, hi, diag.nominal,
                       output_names=list(diag.outputs), input_names=list(diag.inputs))


def series(blocks, input_name="u", output_name="y", bounds=None):
    """Diagram of a plain cascade ``input -> blocks[0] -> ... -> blocks[-1]``."""
    blocks = list(blocks)
    conns = [(input_name, blocks[0].name, 1.0)]
    conns += [(a.name, b.name, 1.0) for a, b in zip(blocks[:-1], blocks[1:])]
    return BlockDiagram(blocks, conns, [input_name], {output_name: blocks[-1].name}, bounds)


def compose(parts, blocks=(), connections=(), inputs=(), outputs=None, bounds=None):
    """Flatten sub-diagrams and extra blocks into one diagram.

    Blocks of ``parts[prefix]`` are renamed ``"<prefix>.<name>"``; parameter
    labels are kept, so library parameter names survive.  Each sub-diagram
    input ``u`` becomes a unit gain block ``"<prefix>.<u>"`` that can be a
    connection destination, and each output ``y`` a unit gain block
    ``"<prefix>.<y>"`` that can be a source.

    Parameters
    ----------
    parts : dict
        ``{prefix: BlockDiagram}``.
    blocks, connections, inputs, outputs :
        Extra top-level items, as in :class:`BlockDiagram`.
    bounds : dict, optional
        Overrides of the merged sub-diagram bounds.
    """
    flat, conns, merged = [], [], {}
    for prefix, d in parts.items():
        ren = {b.name: f"{prefix}.{b.name}" for b in d.blocks}
        for u in d.inputs:
            ren[u] = f"{prefix}.{u}"
            flat.append(gain(ren[u], 1.0))
        for b in d.blocks:
            flat.append(Block(ren[b.name], b.kind, dict(b.params), b.tunable, dict(b.labels)))
        conns += [(ren[s], ren[t], g) for s, t, g in d.connections]
        for y, terms in d.outputs.items():
            name = f"{prefix}.{y}"
            flat.append(gain(name, 1.0))
            conns += [(ren[s], name, g) for s, g in terms]
        merged.update(d.bounds)
    merged.update(bounds or {})
    flat += list(blocks)
    conns += [tuple(c) for c in connections]
    return BlockDiagram(flat, conns, list(inputs), dict(outputs or {}), merged)


# standard controller diagrams ----------------------------------------------

def exac4(T_r=0.02, T_C=1.0, T_B=10.0, K_A=200.0, T_A=0.02, V_min=-5.0, V_max=5.0, bounds=None):
    """EXAC4-style AVR: transducer, lead-lag, amplifier, limiter.  ``K_A`` tunable."""
    blocks = [
        lag("transducer", 1.0, T_r),
        lead_lag("gain_reduction", T_C, T_B),
        lag("amplifier", K_A, T_A, tunable=("K",), labels={"K": "K_A"}),
        limiter("limit", V_min, V_max),
    ]
    conns = [
        ("V_t", "transducer", 1.0),
        ("V_ref", "gain_reduction", 1.0),
        ("transducer", "gain_reduction", -1.0),
        ("gain_reduction", "amplifier", 1.0),
        ("amplifier", "limit", 1.0),
    ]
    return BlockDiagram(blocks, conns, ["V_t", "V_ref"], {"E_fd": "limit"},
                        bounds or {"K_A": (10.0, 1000.0)})


def ieee_avr(T_r=0.02, T_C=1.0, T_B=10.0, K_A=200.0, T_A=0.02, K_e=1.0, T_e=0.5,
             K_fd=0.03, T_fd=1.0, V_min=-5.0, V_max=5.0, bounds=None):
    """AVR with exciter and rate feedback; ``K_A``, ``K_fd``, ``T_fd`` tunable."""
    blocks = [
        lag("transducer", 1.0, T_r),
        lead_lag("gain_reduction", T_C, T_B),
        lag("amplifier", K_A, T_A, tunable=("K",), labels={"K": "K_A"}),
        limiter("limit", V_min, V_max),
        exciter("exciter", K_e, T_e),
        rate_feedback("damping", K_fd, T_fd, tunable=("K", "T"), labels={"K": "K_fd", "T": "T_fd"}),
    ]
    conns = [
        ("V_t", "transducer", 1.0),
        ("V_ref", "gain_reduction", 1.0),
        ("transducer", "gain_reduction", -1.0),
        ("damping", "gain_reduction", -1.0),
        ("gain_reduction", "amplifier", 1.0),
        ("amplifier", "limit", 1.0),
        ("limit", "exciter", 1.0),
        ("exciter", "damping", 1.0),
    ]
    default = {"K_A": (10.0, 1000.0), "K_fd": (0.001, 1.0), "T_fd": (0.05, 10.0)}
    return BlockDiagram(blocks, conns, ["V_t", "V_ref"], {"E_fd": "exciter"}, bounds or default)


def simple_pss(K_S=10.0, T_w=10.0, T_1=0.5, T_2=0.05, T_3=0.5, T_4=0.05, T_s=0.02,
               V_min=-0.1, V_max=0.1, bounds=None):
    """Gain, washout, two lead-lags and sensor lag; all but ``T_s`` tunable."""
    blocks = [
        gain("gain", K_S, tunable=("K",), labels={"K": "K_S"}),
        washout("washout", 1.0, T_w, tunable=("T_w",), labels={"T_w": "T_w"}),
        lead_lag("lead1", T_1, T_2, tunable=("T_num", "T_den"), labels={"T_num": "T_1", "T_den": "T_2"}),
        lead_lag("lead2", T_3, T_4, tunable=("T_num", "T_den"), labels={"T_num": "T_3", "T_den": "T_4"}),
        lag("sensor", 1.0, T_s),
        limiter("limit", V_min, V_max),
    ]
    diag_bounds = bounds or {
        "K_S": (0.1, 100.0), "T_w": (1.0, 100.0), "T_1": (0.01, 5.0), "T_2": (0.01, 5.0),
        "T_3": (0.01, 5.0), "T_4": (0.01, 5.0),
    }
    return series(blocks, "speed", "V_s", diag_bounds)


def pss1a(K_S=10.0, T_w=10.0, T_1=0.5, T_2=0.05, T_3=0.5, T_4=0.05, T_s=0.02, A_1=0.02, A_2=0.001,
          V_min=-0.1, V_max=0.1, bounds=None):
    """IEEE PSS1A-style chain with sensor lag and second-order filter."""
    blocks = [
        lag("sensor", 1.0, T_s),
        notch("filter", A_1, A_2, tunable=("A_1", "A_2"), labels={"A_1": "A_1", "A_2": "A_2"}),
        gain("gain", K_S, tunable=("K",), labels={"K": "K_S"}),
        washout("washout", 1.0, T_w, tunable=("T_w",), labels={"T_w": "T_w"}),
        lead_lag("lead1", T_1, T_2, tunable=("T_num", "T_den"), labels={"T_num": "T_1", "T_den": "T_2"}),
        lead_lag("lead2", T_3, T_4, tunable=("T_num", "T_den"), labels={"T_num": "T_3", "T_den": "T_4"}),
        limiter("limit", V_min, V_max),
    ]
    diag_bounds = bounds or {
        "A_1": (0.005, 0.1), "A_2": (1e-4, 0.1),
        "K_S": (0.1, 100.0), "T_w": (1.0, 100.0), "T_1": (0.01, 5.0), "T_2": (0.01, 5.0),
        "T_3": (0.01, 5.0), "T_4": (0.01, 5.0),
    }
    return series(blocks, "speed", "V_s", diag_bounds)


def tgov1(R_p=0.05, T_1=0.5, T_2=3.0, T_3=10.0, D_t=0.0, V_min=-1.0, V_max=1.0, bounds=None):
    """TGOV1-style governor from speed deviation to mechanical power change; ``R_p`` tunable."""
    blocks = [
        inverse_gain("droop", R_p, tunable=("R",), labels={"R": "R_p"}),
        lag("valve", 1.0, T_1),
        limiter("limit", V_min, V_max),
        lead_lag("turbine", T_2, T_3),
        gain("damping", D_t),
    ]
    conns = [
        ("speed", "droop", -1.0),
        ("droop", "valve", 1.0),
        ("valve", "limit", 1.0),
        ("limit", "turbine", 1.0),
        ("speed", "damping", 1.0),
    ]
    return BlockDiagram(blocks, conns, ["speed"], {"P_m": [("turbine", 1.0), ("damping", -1.0)]},
                        bounds or {"R_p": (0.01, 0.2)})


# droop inverters -----------------------------------------------------------

DROOP_PARAMS = ("K_P", "K_Q", "T_f", "T_v")
MIN_FILTER_TIME = 0.05


@dataclass
class DroopInverter:
    """Grid-forming inverter with frequency and voltage droop.

    Gains in pu on the inverter rating, time constants in s.
    """

    K_P: float
    K_Q: float
    T_f: float
    T_v: float
    omega_c: float = 1.0
    V_c: float = 1.0
    rating: float = 55e3
    omega_base: float = 2 * np.pi * 50.0
    name: str = "inv"
    bounds: dict = None
    omega_set_limits: tuple = None
    V_set_limits: tuple = None

    def __post_init__(self):
        if not (self.K_P > 0 and self.K_Q > 0):
            raise ValueError("droop gains must be positive")
        if self.T_f < MIN_FILTER_TIME or self.T_v < MIN_FILTER_TIME:
            raise ValueError(f"filter time constants must be at least {MIN_FILTER_TIME} s")
        if self.bounds is None:
            self.bounds = {
                "K_P": (0.005, 0.05), "K_Q": (0.005, 0.05),
                "T_f": (MIN_FILTER_TIME, 1.0), "T_v": (MIN_FILTER_TIME, 1.0),
            }
        for k in DROOP_PARAMS:
            lo, hi = self.bounds[k]
            if k in ("T_f", "T_v") and lo < MIN_FILTER_TIME:
                raise ValueError(f"lower bound of {k} must be at least {MIN_FILTER_TIME} s")

    @property
    def params(self):
        return np.array([self.K_P, self.K_Q, self.T_f, self.T_v], dtype=float)

    def omega_set(self, P, K_P=None):
        """Frequency setpoint ``omega_c - K_P P`` (pu)."""
        return self.omega_c - (self.K_P if K_P is None else K_P) * P

    def V_set(self, Q, K_Q=None):
        """Voltage setpoint ``V_c - K_Q Q`` (pu)."""
        return self.V_c - (self.K_Q if K_Q is None else K_Q) * Q

    # prosumer interface used by the grid model; states are (omega, theta, V)
    n_states = 3
    param_names = DROOP_PARAMS
    theta_shift = np.array([0.0, 1.0, 0.0])
    frequency_row = np.array([1.0, 0.0, 0.0])

    def initial_state(self):
        return np.array([self.omega_c, 0.0, self.V_c])

    def rhs(self, x, P, Q, K, omega_frame, limit=False):
        """State derivative for measured infeed ``(P, Q)`` and local parameters ``K``."""
        K_P, K_Q, T_f, T_v = K
        w_set = self.omega_c - K_P * P
        v_set = self.V_c - K_Q * Q
        if limit and self.omega_set_limits is not None:
            w_set = min(max(w_set, self.omega_set_limits[0]), self.omega_set_limits[1])
        if limit and self.V_set_limits is not None:
            v_set = min(max(v_set, self.V_set_limits[0]), self.V_set_limits[1])
        return np.array([
            (w_set - x[0]) / T_f,
            self.omega_base * (x[0] - omega_frame),
            (v_set - x[2]) / T_v,
        ])

    def jacobians(self, x, P, Q, K):
        """``(df/dx, df/dP, df/dQ, df/domega_frame)`` of :meth:`rhs` without limiters."""
        K_P, K_Q, T_f, T_v = K
        fx = np.array([[-1.0 / T_f, 0, 0], [self.omega_base, 0, 0], [0, 0, -1.0 / T_v]])
        fP = np.array([-K_P / T_f, 0.0, 0.0])
        fQ = np.array([0.0, 0.0, -K_Q / T_v])
        fw = np.array([0.0, -self.omega_base, 0.0])
        return fx, fP, fQ, fw

    def terminal(self, x):
        """Terminal voltage magnitude and angle."""
        return x[2], x[1]

    def terminal_jacobian(self, x):
        return np.array([[0, 0, 1.0], [0, 1.0, 0]])


def droop_inverter_model(inv):
    """Linear 3-state prosumer model around any operating point.

    States ``(omega, theta, V)`` (deviations), inputs ``(P_p, Q_p)``,
    outputs ``(theta, V, omega)``; parameters ``(K_P, K_Q, T_f, T_v)``.
    """
    def fn(K):
        fx, fP, fQ, _ = inv.jacobians(None, 0.0, 0.0, K)
        B = np.column_stack([fP, fQ])
        C = np.array([[0, 1.0, 0], [0, 0, 1.0], [1.0, 0, 0]])
        return StateSpace(fx, B, C, np.zeros((3, 2)))

    lo = [inv.bounds[k][0] for k in DROOP_PARAMS]
    hi = [inv.bounds[k][1] for k in DROOP_PARAMS]
    names = [f"{inv.name}.{k}" for k in DROOP_PARAMS]
    return ParamSystem(fn, names, lo, hi, inv.params, output_names=["theta", "V", "omega"],
                       input_names=["P_p", "Q_p"])
