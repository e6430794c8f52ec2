"""Linearized minimax subproblem over sampled frequencies.

Around an anchor ``K_a`` the response at each sampled frequency is
approximated by ``G_L(K) = G(K_a) + sum_i (K_i - K_a,i) dG/dK_i`` and the
convex program

    minimize gamma  s.t.  [[gamma I, G_L], [G_L^*, gamma I]] >= 0  for all samples,
                          K in box,  |K - K_a| <= Delta K

is solved with :func:`hinftune.sdp.solve_lmi` after realification.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import check_frequency_grid, check_positive_vector, check_vector
from .exceptions import SingularAtFrequency
from .lti import sigma_max
from .sdp import LMIBlock, solve_lmi

_SNAP_TOL = 1e-5

__all__ = [
    "AffineResponseModel",
    "SubproblemSpec",
    "SubproblemSolution",
    "linearize_response",
    "solve_subproblem",
    "dump_subproblem_csv",
]


@dataclass
class AffineResponseModel:
    """First-order model of ``G(K, j omega)`` on a frequency grid.

    Attributes
    ----------
    omega : ndarray, shape (N,)
    base : ndarray, shape (N, ny, nw)
        Response at the anchor.
    sens : ndarray, shape (N, p, ny, nw)
        Partial derivatives with respect to each parameter.
    anchor : ndarray, shape (p,)
    """

    omega: np.ndarray
    base: np.ndarray
    sens: np.ndarray
    anchor: np.ndarray

    def __post_init__(self):
        self.omega = np.asarray(self.omega, float).reshape(-1)
        self.base = np.asarray(self.base, complex)
        self.sens = np.asarray(self.sens, complex)
        self.anchor = np.asarray(self.anchor, float).reshape(-1)
        N, p = self.omega.size, self.anchor.size
        if self.base.ndim != 3 or self.base.shape[0] != N:
            raise ValueError("base must have shape (N, ny, nw)")
        if self.sens.shape != (N, p) + self.base.shape[1:]:
            raise ValueError("sens must have shape (N, p, ny, nw)")
        if not (np.all(np.isfinite(self.base)) and np.all(np.isfinite(self.sens))):
            raise ValueError("affine model contains non-finite entries")

    def evaluate(self, K):
        d = np.asarray(K, float) - self.anchor
        return self.base + np.einsum("p,npij->nij", d, self.sens)

    def sigma(self, K):
        """Largest singular value of ``G_L(K)`` at each sample."""
        return sigma_max(self.evaluate(K))


def _state_space_derivatives(sys, K):
    K = np.asarray(K, float)
    lo = getattr(sys, "K_min", np.full(K.size, -np.inf))
    hi = getattr(sys, "K_max", np.full(K.size, np.inf))

    def mats(Kx):
        s = sys.evaluate(Kx)
        return np.array([s.A, s.B, s.C, s.D], dtype=object)

    out = []
    for i in range(K.size):
        h = max(1e-6 * abs(K[i]), 1e-8)

        def at(t):
            Kx = K.copy()
            Kx[i] += t
            return mats(Kx)

        if K[i] - h >= lo[i] and K[i] + h <= hi[i]:
            d = (at(h) - at(-h)) / (2 * h)
        else:
            # second-order one-sided stencil keeps the evaluation inside the box
            sgn = 1.0 if K[i] - h < lo[i] else -1.0
            d = sgn * (-3 * at(0.0) + 4 * at(sgn * h) - at(2 * sgn * h)) / (2 * h)
        out.append(tuple(d))
    return out


def linearize_response(sys, K_anchor, grid):
    """Anchor response and parameter sensitivities on ``grid``.

    Derivatives of the state-space matrices come from central differences
    with step ``max(1e-6 |K_i|, 1e-8)`` (one-sided at a box edge) and are propagated through the
    resolvent ``R = (j omega I - A)^-1``::

        dG = C R dA R B + C R dB + dC R B + dD

    Raises
    ------
    SingularAtFrequency
        If a grid point lies on an eigenvalue of ``A``.
    """
    K = check_vector(K_anchor, "K_anchor", sys.n_params)
    w = check_frequency_grid(grid)
    s0 = sys.evaluate(K)
    derivs = _state_space_derivatives(sys, K)
    n = s0.n_states
    N, p = w.size, K.size
    if n == 0:
        base = np.broadcast_to(s0.D.astype(complex), (N,) + s0.D.shape).copy()
        sens = np.stack([np.broadcast_to(d[3].astype(complex), (N,) + s0.D.shape) for d in derivs], axis=1) \
            if p else np.zeros((N, 0) + s0.D.shape, complex)
        return AffineResponseModel(w, base, sens, K)
    lam = np.linalg.eigvals(s0.A)
    scale = np.maximum(np.linalg.norm(s0.A, 1) + w, 1.0)
    dist = np.min(np.abs(1j * w[:, None] - lam[None, :]), axis=1)
    bad = dist <= 100 * np.finfo(float).eps * scale
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        raise SingularAtFrequency(float(w[k]), np.inf)
    M = 1j * w[:, None, None] * np.eye(n) - s0.A
    RB = np.linalg.solve(M, np.broadcast_to(s0.B.astype(complex), (N,) + s0.B.shape))
    CR = np.swapaxes(np.linalg.solve(np.swapaxes(M, 1, 2),
                                     np.broadcast_to(s0.C.T.astype(complex), (N,) + s0.C.T.shape)), 1, 2)
    base = s0.C @ RB + s0.D
    sens = np.empty((N, p) + base.shape[1:], complex)
    for i, (dA, dB, dC, dD) in enumerate(derivs):
        sens[:, i] = CR @ dA @ RB + CR @ dB + dC @ RB + dD
    return AffineResponseModel(w, base, sens, K)


@dataclass
class SubproblemSpec:
    """Data of one linearized subproblem.

    ``model`` may be a single :class:`AffineResponseModel` or a list of
    them sharing the parameter vector (one per scenario).
    """

    model: object
    K_min: np.ndarray
    K_max: np.ndarray
    delta_k: np.ndarray
    tol: float = 1e-7
    max_iter: int = 200

    def __post_init__(self):
        models = self.models
        if not models:
            raise ValueError("at least one affine model is required")
        p = models[0].anchor.size
        for m in models[1:]:
            if m.anchor.size != p or not np.array_equal(m.anchor, models[0].anchor):
                raise ValueError("all scenario models must share the anchor")
        self.K_min = check_vector(self.K_min, "K_min", p)
        self.K_max = check_vector(self.K_max, "K_max", p)
        self.delta_k = check_positive_vector(self.delta_k, "delta_k", p)
        a = models[0].anchor
        if np.any(a < self.K_min - 1e-12) or np.any(a > self.K_max + 1e-12):
            raise ValueError("anchor lies outside the parameter box")

    @property
    def models(self):
        return list(self.model) if isinstance(self.model, (list, tuple)) else [self.model]

    @property
    def anchor(self):
        return self.models[0].anchor


@dataclass
class SubproblemSolution:
    K_next: np.ndarray
    gamma: float
    status: str  # "optimal" or "max_iter"
    iterations: int = 0
    gamma_anchor: float = np.nan


def _realify_blocks(G0, Gs):
    """LMI data of ``[[gamma I, G], [G^*, gamma I]] >= 0`` at one sample.

    Variables are ``(gamma, u_1, ..., u_q)`` with ``G = G0 + sum u_j Gs[j]``.
    """
    ny, nw = G0.shape
    m = ny + nw

    def herm(G, g):
        H = np.zeros((m, m), complex)
        H[:ny, :ny] = g * np.eye(ny)
        H[ny:, ny:] = g * np.eye(nw)
        H[:ny, ny:] = G
        H[ny:, :ny] = G.conj().T
        return np.block([[H.real, -H.imag], [H.imag, H.real]])

    F0 = herm(G0, 0.0)
    F = np.empty((1 + len(Gs), 2 * m, 2 * m))
    F[0] = np.eye(2 * m)
    for j, Gj in enumerate(Gs):
        F[1 + j] = herm(Gj, 0.0)
    return LMIBlock(F0, F)


def solve_subproblem(spec):
    """Minimize the sampled bound of the affine model inside box and trust region.

    Returns
    -------
    SubproblemSolution
        ``gamma`` is the exact sampled maximum of ``sigma_max(G_L)`` at
        ``K_next`` (never below the solver's bound), so it certifies the
        sampled constraints at the returned point.
    """
    models = spec.models
    anchor = spec.anchor
    lo = np.maximum(spec.K_min, anchor - spec.delta_k)
    hi = np.minimum(spec.K_max, anchor + spec.delta_k)
    lo = np.minimum(lo, anchor)
    hi = np.maximum(hi, anchor)
    center = 0.5 * (lo + hi)
    radius = 0.5 * (hi - lo)
    free = np.flatnonzero(radius > 0)
    gamma_anchor = max(float(np.max(m.sigma(anchor))) for m in models)
    if free.size == 0:
        return SubproblemSolution(anchor.copy(), gamma_anchor, "optimal", 0, gamma_anchor)
    scale = gamma_anchor if gamma_anchor > 0 else 1.0
    blocks = []
    for m in models:
        G0 = m.evaluate(center) / scale
        Gu = m.sens[:, free] * (radius[free] / scale)[None, :, None, None]
        for k in range(m.omega.size):
            blocks.append(_realify_blocks(G0[k], list(Gu[k])))
    q = free.size
    c = np.zeros(1 + q)
    c[0] = 1.0
    Gc = np.zeros((2 * q, 1 + q))
    Gc[:q, 1:] = -np.eye(q)
    Gc[q:, 1:] = np.eye(q)
    res = solve_lmi(c, blocks, Gc, np.ones(2 * q), tol=spec.tol, feas_tol=max(spec.tol, 1e-8),
                    max_iter=spec.max_iter)
    u = np.clip(res.x[1:], -1.0, 1.0) if np.all(np.isfinite(res.x)) else np.zeros(q)
    K = center.copy()
    K[free] += radius[free] * u
    K = np.clip(K, lo, hi)
    g_exact = max(float(np.max(m.sigma(K))) for m in models)
    # interior-point iterates stop just short of active bounds; snap if no worse
    near = np.abs(u) > 1.0 - _SNAP_TOL
    if np.any(near):
        Ks = K.copy()
        Ks[free[near]] = np.where(u[near] > 0, hi[free[near]], lo[free[near]])
        g_snap = max(float(np.max(m.sigma(Ks))) for m in models)
        if g_snap <= g_exact:
            K, g_exact = Ks, g_snap
    g_solver = float(res.x[0]) * scale if np.isfinite(res.x[0]) else np.inf
    gamma = max(g_exact, g_solver) if res.status == "optimal" else g_exact
    if g_exact > gamma_anchor:
        # fall back to the always-feasible anchor
        return SubproblemSolution(anchor.copy(), gamma_anchor, res.status, res.iterations, gamma_anchor)
    return SubproblemSolution(K, gamma, res.status, res.iterations, gamma_anchor)


def dump_subproblem_csv(spec, path):
    """Write subproblem data for external cross-checks.

    Columns ``scenario,omega,param,row,col,re,im``; ``param = -1`` rows hold
    the anchor response, other rows the sensitivities.  Box and trust
    region follow as ``bound`` rows with ``re = lo`` and ``im = hi``.
    """
    def f(v):
        return repr(float(v))

    lines = ["scenario,omega,param,row,col,re,im"]
    for s, m in enumerate(spec.models):
        for k, w in enumerate(m.omega):
            for r in range(m.base.shape[1]):
                for c in range(m.base.shape[2]):
                    v = m.base[k, r, c]
                    lines.append(f"{s},{f(w)},-1,{r},{c},{f(v.real)},{f(v.imag)}")
                    for i in range(m.anchor.size):
                        v = m.sens[k, i, r, c]
                        lines.append(f"{s},{f(w)},{i},{r},{c},{f(v.real)},{f(v.imag)}")
    lo = np.maximum(spec.K_min, spec.anchor - spec.delta_k)
    hi = np.minimum(spec.K_max, spec.anchor + spec.delta_k)
    for i in range(spec.anchor.size):
        lines.append(f"bound,,{i},,,{f(lo[i])},{f(hi[i])}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
