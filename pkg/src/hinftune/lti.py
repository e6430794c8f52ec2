"""Dense continuous-time state-space systems and H-infinity machinery."""

import warnings
from dataclasses import dataclass

import numpy as np

from ._validation import as_real_matrix, check_frequency_grid
from .exceptions import EigenFailure, NotHermitian, SingularAtFrequency, SizeCapExceeded

__all__ = [
    "StateSpace",
    "FreqResponse",
    "PoleSet",
    "HinfResult",
    "eval_freq",
    "freq_response",
    "sigma_max",
    "poles",
    "is_stable",
    "is_detectable",
    "hinf_norm_bisect",
    "hinf_norm_grid",
    "phi_constraint",
    "realify_hermitian",
    "brl_verify",
    "log_grid",
    "realize_columns",
]

_EPS = np.finfo(float).eps
# jwI - A is treated as singular above this condition number
_COND_LIMIT = 1.0 / (100.0 * _EPS)
SAFEGUARD_MARGIN = 1e-8
_AXIS_RTOL = 1e3 * np.finfo(float).eps
# eigenvector conditioning up to which batched responses use the modal form
_MODAL_COND_LIMIT = 1e6


def _frozen(M):
    M = np.array(M, dtype=float, copy=True)
    M.setflags(write=False)
    return M


@dataclass(frozen=True, eq=False)
class StateSpace:
    """Continuous-time LTI system ``x' = Ax + Bw, y = Cx + Dw``.

    Arrays are copied and made read-only on construction.  ``D`` defaults
    to zeros.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray = None

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        if A.size == 0:
            A = np.zeros((0, 0))
        A = as_real_matrix(A, "A") if A.size else A
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError(f"A must be square, got {A.shape}")
        B = np.asarray(self.B, dtype=float)
        C = np.asarray(self.C, dtype=float)
        if self.D is None:
            if n == 0:
                raise ValueError("D is required for a static system")
            B = as_real_matrix(B, "B", (n, None))
            C = as_real_matrix(C, "C", (None, n))
            D = np.zeros((C.shape[0], B.shape[1]))
        else:
            D = np.asarray(self.D, dtype=float)
            D = D.reshape(1, 1) if D.ndim == 0 else D
            D = as_real_matrix(D, "D")
            ny, nw = D.shape
            B = np.zeros((n, nw)) if B.size == 0 else as_real_matrix(B, "B", (n, nw))
            C = np.zeros((ny, n)) if C.size == 0 else as_real_matrix(C, "C", (ny, n))
        if D.shape != (C.shape[0], B.shape[1]):
            raise ValueError(f"D has shape {D.shape}, expected {(C.shape[0], B.shape[1])}")
        object.__setattr__(self, "A", _frozen(A))
        object.__setattr__(self, "B", _frozen(B))
        object.__setattr__(self, "C", _frozen(C))
        object.__setattr__(self, "D", _frozen(D))

    @property
    def n_states(self):
        return self.A.shape[0]

    @property
    def n_inputs(self):
        return self.B.shape[1]

    @property
    def n_outputs(self):
        return self.C.shape[0]

    def dc_gain(self):
        """``D - C A^{-1} B`` (requires nonsingular A)."""
        if self.n_states == 0:
            return self.D.copy()
        return self.D - self.C @ np.linalg.solve(self.A, self.B)

    def __repr__(self):
        return f"StateSpace(n_states={self.n_states}, n_inputs={self.n_inputs}, n_outputs={self.n_outputs})"


@dataclass(frozen=True)
class FreqResponse:
    omega: float
    G: np.ndarray


@dataclass(frozen=True)
class PoleSet:
    """Poles of a realization, sorted by (real, imag)."""

    poles: np.ndarray

    def __len__(self):
        return len(self.poles)

    def __iter__(self):
        return iter(self.poles)

    def distinct(self, tol=1e-6):
        """List of ``(pole, multiplicity)`` pairs, clustering within ``tol``."""
        out = []
        for p in self.poles:
            for k, (q, mult) in enumerate(out):
                if abs(p - q) <= tol * max(1.0, abs(q)):
                    out[k] = (q, mult + 1)
                    break
            else:
                out.append((p, 1))
        return out

    def contains(self, value, tol=1e-6):
        return bool(np.any(np.abs(self.poles - value) <= tol))


@dataclass(frozen=True)
class HinfResult:
    norm: float
    peak_omega: float
    stable: bool
    method: str


def log_grid(start, stop, num):
    """Log-spaced frequency grid on ``[start, stop]`` rad/s."""
    return np.logspace(np.log10(start), np.log10(stop), int(num))


def eval_freq(sys, omega):
    """Frequency response ``C (jwI - A)^{-1} B + D`` at a single frequency.

    Raises
    ------
    SingularAtFrequency
        If ``jwI - A`` has condition number above ``1/(100 eps)``.
    """
    omega = float(omega)
    n = sys.n_states
    if n == 0:
        return FreqResponse(omega, sys.D.astype(complex))
    M = 1j * omega * np.eye(n) - sys.A
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise SingularAtFrequency(omega, cond)
    G = sys.C @ np.linalg.solve(M, sys.B) + sys.D
    return FreqResponse(omega, G)


def freq_response(sys, omegas):
    """Batched frequency response, shape ``(N, n_y, n_w)``.

    Points where ``jwI - A`` is numerically singular come back as ``inf``.
    The singularity screen uses the distance from ``jw`` to the spectrum of
    ``A`` (a lower bound proxy for the condition test of :func:`eval_freq`).
    """
    omegas = np.atleast_1d(np.asarray(omegas, dtype=float))
    n = sys.n_states
    N = omegas.size
    if n == 0:
        return np.broadcast_to(sys.D.astype(complex), (N,) + sys.D.shape).copy()
    s = 1j * omegas
    eigs, V = np.linalg.eig(sys.A)
    scale = np.linalg.norm(sys.A, 2) + np.abs(omegas)
    dist = np.min(np.abs(s[:, None] - eigs[None, :]), axis=1)
    singular = dist <= 100.0 * _EPS * np.maximum(scale, 1.0)
    if np.linalg.cond(V) < _MODAL_COND_LIMIT:
        # modal form: G = (CV) diag(1/(s - lam)) (V^-1 B) + D
        CV = sys.C @ V
        VB = np.linalg.solve(V, sys.B)
        with np.errstate(divide="ignore", invalid="ignore"):
            R = 1.0 / (s[:, None] - eigs[None, :])
        R[singular] = 0.0
        G = np.einsum("ki,ai,ib->kab", R, CV, VB, optimize=True) + sys.D[None]
    else:
        M = s[:, None, None] * np.eye(n)[None] - sys.A[None]
        M[singular] = np.eye(n)
        X = np.linalg.solve(M, np.broadcast_to(sys.B.astype(complex), (N,) + sys.B.shape))
        G = sys.C[None] @ X + sys.D[None]
    G[singular] = np.inf
    return G


def sigma_max(resp):
    """Largest singular value of a matrix, a FreqResponse, or a batch ``(N, p, q)``."""
    G = resp.G if isinstance(resp, FreqResponse) else np.asarray(resp)
    if G.ndim == 2:
        if G.size == 0:
            return 0.0
        return float(np.linalg.norm(G, 2))
    if G.shape[1] == 0 or G.shape[2] == 0:
        return np.zeros(G.shape[0])
    bad = ~np.all(np.isfinite(G), axis=(1, 2))
    G = np.where(bad[:, None, None], 0.0, G)
    if min(G.shape[1:]) == 1:
        out = np.sqrt(np.sum(np.abs(G) ** 2, axis=(1, 2)))
    else:
        if G.shape[1] >= G.shape[2]:
            W = np.conj(np.swapaxes(G, 1, 2)) @ G
        else:
            W = G @ np.conj(np.swapaxes(G, 1, 2))
        out = np.sqrt(np.maximum(np.linalg.eigvalsh(W)[:, -1], 0.0))
    out[bad] = np.inf
    return out


def poles(sys):
    """Eigenvalues of ``A`` (a superset of the transfer-matrix poles)."""
    if sys.n_states == 0:
        return PoleSet(np.zeros(0, dtype=complex))
    try:
        ev = np.linalg.eigvals(sys.A)
    except np.linalg.LinAlgError as exc:
        raise EigenFailure(str(exc)) from exc
    ev = np.asarray(ev, dtype=complex)
    order = np.lexsort((ev.imag, np.round(ev.real, 12)))
    return PoleSet(ev[order])


def spectral_abscissa(sys):
    if sys.n_states == 0:
        return -np.inf
    return float(np.max(poles(sys).poles.real))


def is_stable(sys, margin=0.0):
    """True iff every eigenvalue of ``A`` has real part below ``-margin``."""
    if margin < 0:
        raise ValueError("margin must be non-negative")
    return spectral_abscissa(sys) < -margin


def is_detectable(sys, rtol=1e-8, warn=True):
    """PBH detectability test on every eigenvalue with non-negative real part."""
    n = sys.n_states
    ok = True
    for lam in poles(sys).poles:
        if lam.real < 0:
            continue
        M = np.vstack([lam * np.eye(n) - sys.A, sys.C])
        sv = np.linalg.svd(M, compute_uv=False)
        if sv[-1] <= rtol * max(sv[0], 1.0):
            ok = False
            break
    if not ok and warn:
        warnings.warn("system is not detectable; H-infinity results may be misleading", RuntimeWarning)
    return ok


def _hamiltonian(sys, gamma):
    A, B, C, D = sys.A, sys.B, sys.C, sys.D
    R = D.T @ D - gamma ** 2 * np.eye(D.shape[1])
    S = D @ D.T - gamma ** 2 * np.eye(D.shape[0])
    Rinv = np.linalg.inv(R)
    Sinv = np.linalg.inv(S)
    top_left = A - B @ Rinv @ D.T @ C
    return np.block([
        [top_left, -gamma * B @ Rinv @ B.T],
        [gamma * C.T @ Sinv @ C, -top_left.T],
    ])


def _imag_axis_freqs(sys, gamma):
    H = _hamiltonian(sys, gamma)
    ev = np.linalg.eigvals(H)
    tol = 1e-8 * max(1.0, np.linalg.norm(H, 1))
    w = np.sort(np.abs(ev[np.abs(ev.real) <= tol].imag))
    return w


def _candidates_around(w):
    """Sample points for sigma evaluation given imaginary-axis crossings."""
    if w.size == 0:
        return w
    mids = 0.5 * (w[:-1] + w[1:])
    return np.concatenate([w, mids])


def hinf_norm_bisect(sys, tol=1e-9):
    """H-infinity norm via Hamiltonian-eigenvalue bisection.

    The bracket starts at ``[lo, 10 lo]`` where ``lo`` is the largest
    singular value over ``D``, a 64-point log grid and the modal
    frequencies; the upper end is verified (and widened) with the
    Hamiltonian test.  Each time the Hamiltonian has imaginary-axis
    eigenvalues, ``sigma_max`` is evaluated at those frequencies and their
    midpoints, which raises ``lo`` to an attained value (two-step
    acceleration); otherwise the interval is bisected geometrically.

    Unstable systems yield ``HinfResult(norm=inf, stable=False)``.
    """
    n = sys.n_states
    dnorm = sigma_max(sys.D)
    if n == 0:
        return HinfResult(dnorm, 0.0, True, "bisection")
    ev = np.linalg.eigvals(sys.A)
    # poles within rounding distance of the axis make the norm unbounded
    if np.max(ev.real) >= -_AXIS_RTOL * max(np.linalg.norm(sys.A, 1), 1.0):
        return HinfResult(np.inf, np.nan, False, "bisection")
    mags = np.abs(ev)
    wmin = max(float(np.min(mags)) / 10.0, 1e-6)
    wmax = max(float(np.max(mags)) * 10.0, 10 * wmin)
    cands = np.unique(np.concatenate([[0.0], log_grid(wmin, wmax, 64), np.abs(ev.imag), mags]))
    vals = sigma_max(freq_response(sys, cands))
    k = int(np.argmax(vals))
    lo, peak = float(vals[k]), float(cands[k])
    if dnorm > lo:
        lo, peak = dnorm, np.inf
    if lo == 0.0:
        return HinfResult(0.0, 0.0, True, "bisection")

    def raise_lower(gamma):
        """Returns True if imaginary-axis eigenvalues confirm sigma >= gamma somewhere."""
        nonlocal lo, peak
        w = _imag_axis_freqs(sys, gamma)
        if w.size == 0:
            return False
        pts = _candidates_around(w)
        sv = sigma_max(freq_response(sys, pts))
        j = int(np.argmax(sv))
        if sv[j] > lo:
            lo, peak = float(sv[j]), float(pts[j])
        return sv[j] >= gamma * (1.0 - 1e-6)

    hi = 10.0 * lo
    while raise_lower(hi):
        hi = 10.0 * max(hi, lo)
        if hi > 1e300:
            return HinfResult(np.inf, peak, True, "bisection")

    for _ in range(200):
        if hi <= lo * (1.0 + 2.0 * tol):
            break
        gamma = min(lo * (1.0 + 2.0 * tol), hi)
        if not raise_lower(gamma):
            hi = gamma
            continue
        if hi <= lo * (1.0 + 2.0 * tol):
            break
        gamma = np.sqrt(lo * hi)
        if not raise_lower(gamma):
            hi = gamma
    return HinfResult(lo, peak, True, "bisection")


def hinf_norm_grid(sys, grid):
    """Maximum of ``sigma_max(G(jw))`` over the grid.

    Usable on unstable systems as a diagnostic; ``stable`` reports the
    eigenvalue test.  Singular grid points contribute ``+inf``.
    """
    grid = check_frequency_grid(grid)
    vals = sigma_max(freq_response(sys, grid))
    k = int(np.argmax(vals))
    return HinfResult(float(vals[k]), float(grid[k]), is_stable(sys), "grid")


def phi_constraint(resp, gamma):
    """Hermitian matrix ``[[gamma I, G], [G^*, gamma I]]``.

    Positive definite iff ``sigma_max(G) < gamma``.
    """
    G = resp.G if isinstance(resp, FreqResponse) else np.asarray(resp, dtype=complex)
    G = np.atleast_2d(G)
    gamma = float(gamma)
    if not np.isfinite(gamma):
        raise ValueError("gamma must be finite")
    p, q = G.shape
    return np.block([
        [gamma * np.eye(p), G],
        [G.conj().T, gamma * np.eye(q)],
    ]).astype(complex)


def realify_hermitian(M, tol=1e-10):
    """Real symmetric embedding ``[[X, -Y], [Y, X]]`` of ``M = X + jY``.

    Every eigenvalue of ``M`` appears twice in the result, so definiteness
    is preserved.
    """
    M = np.atleast_2d(np.asarray(M, dtype=complex))
    if M.shape[0] != M.shape[1]:
        raise NotHermitian("matrix is not square")
    err = np.max(np.abs(M - M.conj().T)) if M.size else 0.0
    if err > tol * max(1.0, np.max(np.abs(M)) if M.size else 1.0):
        raise NotHermitian(f"matrix is not Hermitian (deviation {err:.3e})")
    M = 0.5 * (M + M.conj().T)
    X, Y = M.real, M.imag
    return np.block([[X, -Y], [Y, X]])


def _sym_basis(n):
    E = []
    for i in range(n):
        for j in range(i, n):
            M = np.zeros((n, n))
            M[i, j] = M[j, i] = 1.0
            E.append(M)
    return np.array(E)


def brl_verify(sys, gamma, max_states=12, threshold=1e-7):
    """Bounded-real-lemma check: stable with ``||G||_inf < gamma``?

    Decides feasibility of the strict LMI in ``P`` by maximizing a uniform
    margin ``t`` (``P >= tI`` and ``-L(P) >= tI``) with the interior-point
    kernel of :mod:`hinftune.sdp`; feasible iff ``t* > threshold`` after
    normalizing the system to ``gamma = 1``.  Intended as an independent
    oracle on small systems only.
    """
    from .sdp import LMIBlock, solve_lmi

    n = sys.n_states
    if n > max_states:
        raise SizeCapExceeded(f"brl_verify is limited to {max_states} states, got {n}")
    gamma = float(gamma)
    if gamma <= 0:
        return False
    # normalize to unit level: ||G||<gamma  <=>  ||G/gamma||<1
    A = sys.A
    B = sys.B / np.sqrt(gamma)
    C = sys.C / np.sqrt(gamma)
    D = sys.D / gamma
    nw, ny = B.shape[1], C.shape[0]
    if n == 0:
        return sigma_max(D) < 1.0
    # balance the state coordinates a little to keep P well scaled
    E = _sym_basis(n)
    m = E.shape[0]
    N = n + nw + ny
    # -L(P) - tI >= 0, variables (P-coeffs..., t); objective maximize t
    F0 = np.zeros((N, N))
    F0[n:n + nw, n:n + nw] = np.eye(nw)
    F0[n + nw:, n + nw:] = np.eye(ny)
    F0[n + nw:, n:n + nw] = -D
    F0[n:n + nw, n + nw:] = -D.T
    F0[n + nw:, :n] = -C
    F0[:n, n + nw:] = -C.T
    F = np.zeros((m + 1, N, N))
    for k in range(m):
        P = E[k]
        F[k, :n, :n] = -(A.T @ P + P @ A)
        F[k, :n, n:n + nw] = -P @ B
        F[k, n:n + nw, :n] = -B.T @ P
    F[m] = -np.eye(N)
    blk1 = LMIBlock(F0, F)
    G0 = np.zeros((n, n))
    Gp = np.zeros((m + 1, n, n))
    Gp[:m] = E
    Gp[m] = -np.eye(n)
    blk2 = LMIBlock(G0, Gp)
    c = np.zeros(m + 1)
    c[m] = -1.0
    # t <= 1 keeps the problem bounded
    Glp = np.zeros((1, m + 1))
    Glp[0, m] = -1.0
    res = solve_lmi(c, [blk1, blk2], Glp, [1.0], tol=1e-10, feas_tol=1e-10)
    t = res.x[m]
    return bool(t > threshold)


def _lcm_roots(dens, tol=1e-7):
    """Roots of the least common multiple of monic polynomials, with multiplicity."""
    clusters = []  # [root, max multiplicity]
    for d in dens:
        local = []
        for r in np.roots(d):
            for c in local:
                if abs(c[0] - r) < tol:
                    c[1] += 1
                    break
            else:
                local.append([r, 1])
        for r, m in local:
            for c in clusters:
                if abs(c[0] - r) < tol:
                    c[1] = max(c[1], m)
                    break
            else:
                clusters.append([r, m])
    return [r for r, m in clusters for _ in range(m)]


def realize_columns(num, den):
    """State-space realization of a proper transfer matrix, one input column at a time.

    Each column gets a controllable canonical block whose characteristic
    polynomial is the least common multiple of the column's denominators.

    Parameters
    ----------
    num, den : nested lists
        ``num[i][j]`` and ``den[i][j]`` are polynomial coefficients (highest
        power first) of entry ``(i, j)``.
    """
    ny, nu = len(num), len(num[0])
    if len(den) != ny or any(len(r) != nu for r in list(num) + list(den)):
        raise ValueError("num and den must be rectangular and of equal shape")
    As, Bs, Cs = [], [], []
    D = np.zeros((ny, nu))
    for j in range(nu):
        dens = []
        for i in range(ny):
            d = np.trim_zeros(np.asarray(den[i][j], float), "f")
            if d.size == 0:
                raise ValueError(f"entry ({i}, {j}) has a zero denominator")
            dens.append(d / d[0])
        lcm = np.real(np.poly(_lcm_roots(dens))) if any(d.size > 1 for d in dens) else np.ones(1)
        n = lcm.size - 1
        C = np.zeros((ny, n))
        for i in range(ny):
            nm = np.trim_zeros(np.asarray(num[i][j], float), "f") / np.trim_zeros(np.asarray(den[i][j], float), "f")[0]
            if nm.size > dens[i].size:
                raise ValueError(f"entry ({i}, {j}) is improper")
            q, r = np.polydiv(nm, dens[i]) if nm.size else (np.zeros(1), np.zeros(1))
            D[i, j] = q[-1] if nm.size == dens[i].size else 0.0
            cofactor, rem = np.polydiv(lcm, dens[i])
            if np.max(np.abs(rem)) > 1e-6 * max(1.0, np.max(np.abs(lcm))):
                raise ValueError(f"denominator of entry ({i}, {j}) does not divide the column multiple")
            c = np.polymul(r, cofactor)[::-1][:n]
            C[i, : c.size] = c
        A = np.zeros((n, n))
        if n:
            A[:-1, 1:] = np.eye(n - 1)
            A[-1] = -lcm[1:][::-1]
        B = np.zeros((n, 1))
        if n:
            B[-1, 0] = 1.0
        As.append(A)
        Bs.append(B)
        Cs.append(C)
    nx = sum(a.shape[0] for a in As)
    A = np.zeros((nx, nx))
    B = np.zeros((nx, nu))
    o = 0
    for j, (a, b) in enumerate(zip(As, Bs)):
        k = a.shape[0]
        A[o:o + k, o:o + k] = a
        B[o:o + k, j] = b[:, 0]
        o += k
    return StateSpace(A, B, np.hstack(Cs) if nx else np.zeros((ny, 0)), D)
