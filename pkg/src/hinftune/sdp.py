"""Small dense semidefinite programming kernel.

Solves problems in linear-matrix-inequality form::

    minimize    c @ x
    subject to  F0_b + sum_i x_i F_ib  >= 0     (PSD, for every block b)
                g0 + G @ x             >= 0     (componentwise)

by an infeasible-start primal-dual interior-point method (HKM search
direction, Mehrotra predictor-corrector).  Block structure is kept explicit
so that many small blocks (one per sampled frequency) stay cheap; all
blocks are dense real symmetric matrices.

Internally the problem is the dual of the standard-form SDP::

    (P)  min <C, X>   s.t. <A_i, X> = b_i,  X >= 0
    (D)  max b @ y    s.t. C - sum_i y_i A_i = S >= 0

with ``y = x``, ``b = -c``, ``C = F0`` and ``A_i = -F_i``.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = ["LMIBlock", "SDPResult", "solve_lmi"]


@dataclass
class LMIBlock:
    """One symmetric block ``F0 + sum_i x_i F[i] >= 0``.

    ``F`` has shape ``(m, n, n)``; ``F0`` has shape ``(n, n)``.
    """

    F0: np.ndarray
    F: np.ndarray

    def __post_init__(self):
        self.F0 = np.asarray(self.F0, dtype=float)
        self.F = np.asarray(self.F, dtype=float)
        n = self.F0.shape[0]
        if self.F0.shape != (n, n) or self.F.ndim != 3 or self.F.shape[1:] != (n, n):
            raise ValueError("inconsistent LMI block dimensions")
        self.F0 = 0.5 * (self.F0 + self.F0.T)
        self.F = 0.5 * (self.F + np.swapaxes(self.F, 1, 2))


@dataclass
class SDPResult:
    x: np.ndarray
    status: str  # "optimal" or "max_iter"
    iterations: int
    primal_objective: float
    dual_objective: float
    gap: float
    primal_infeasibility: float
    dual_infeasibility: float
    slacks: list = field(default_factory=list, repr=False)


def _chol_inv(S):
    L = np.linalg.cholesky(S)
    Linv = np.linalg.inv(L)
    return Linv.T @ Linv


def _max_step(X, dX):
    """Largest a with X + a dX >= 0 (inf if dX keeps X PSD for all a >= 0)."""
    L = np.linalg.cholesky(X)
    Linv = np.linalg.inv(L)
    W = Linv @ dX @ Linv.T
    lam = np.linalg.eigvalsh(0.5 * (W + W.T))[0]
    return np.inf if lam >= 0 else -1.0 / lam


def _max_step_lp(x, dx):
    neg = dx < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-x[neg] / dx[neg]))


def solve_lmi(c, blocks, G=None, g0=None, tol=1e-7, feas_tol=1e-8, max_iter=200):
    """Minimize ``c @ x`` subject to LMI blocks and linear inequalities.

    Parameters
    ----------
    c : array_like, shape (m,)
        Objective vector.
    blocks : list of LMIBlock
        Semidefinite constraints.
    G, g0 : array_like, optional
        Linear inequalities ``g0 + G @ x >= 0`` with ``G`` of shape (p, m).
    tol : float
        Relative duality-gap tolerance.
    feas_tol : float
        Relative primal/dual residual tolerance.
    max_iter : int
        Interior-point iteration cap.

    Returns
    -------
    SDPResult
        ``status`` is ``"optimal"`` when all tolerances were met, else
        ``"max_iter"`` (the last iterate is returned).
    """
    c = np.asarray(c, dtype=float).reshape(-1)
    m = c.size
    b = -c
    Cs = [blk.F0 for blk in blocks]
    As = [-blk.F for blk in blocks]
    for A in As:
        if A.shape[0] != m:
            raise ValueError("LMI block has wrong number of coefficient matrices")
    if G is not None:
        Gm = np.asarray(G, dtype=float).reshape(-1, m)
        c_lp = np.asarray(g0, dtype=float).reshape(-1)
        A_lp = -Gm  # rows k: coefficients a_k of y
    else:
        c_lp = np.zeros(0)
        A_lp = np.zeros((0, m))
    n_tot = sum(C.shape[0] for C in Cs) + c_lp.size

    norm_C = np.sqrt(sum(np.sum(C ** 2) for C in Cs) + np.sum(c_lp ** 2))
    norm_b = np.linalg.norm(b)
    normA = np.sqrt(sum(np.sum(A ** 2, axis=(1, 2)) for A in As) + np.sum(A_lp ** 2, axis=0)) if m else np.zeros(0)

    # SDPT3-style starting point
    xi = max(10.0, np.sqrt(n_tot), float(np.max((1.0 + np.abs(b)) / (1.0 + normA))) * n_tot if m else 10.0)
    eta = max(10.0, np.sqrt(n_tot), float(np.max(normA)) if m else 0.0, norm_C)
    Xs = [xi * np.eye(C.shape[0]) for C in Cs]
    Ss = [eta * np.eye(C.shape[0]) for C in Cs]
    x_lp = xi * np.ones(c_lp.size)
    s_lp = eta * np.ones(c_lp.size)
    y = np.zeros(m)

    def residuals(Xs, x_lp, Ss, s_lp, y):
        rp = b.copy()
        for A, X in zip(As, Xs):
            rp -= np.einsum("iab,ab->i", A, X)
        rp -= A_lp.T @ x_lp
        Rd = [C - S - np.einsum("i,iab->ab", y, A) for C, S, A in zip(Cs, Ss, As)]
        rd_lp = c_lp - s_lp - A_lp @ y
        return rp, Rd, rd_lp

    status = "max_iter"
    it = 0
    pobj = dobj = np.nan
    gap = pinf = dinf = np.inf
    for it in range(1, max_iter + 1):
        rp, Rd, rd_lp = residuals(Xs, x_lp, Ss, s_lp, y)
        comp = sum(np.sum(X * S) for X, S in zip(Xs, Ss)) + x_lp @ s_lp
        mu = comp / n_tot
        pobj = sum(np.sum(C * X) for C, X in zip(Cs, Xs)) + c_lp @ x_lp
        dobj = b @ y
        gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        pinf = np.linalg.norm(rp) / (1.0 + norm_b)
        dinf = np.sqrt(sum(np.sum(R ** 2) for R in Rd) + np.sum(rd_lp ** 2)) / (1.0 + norm_C)
        if gap < tol and comp / (1.0 + abs(pobj) + abs(dobj)) < tol and pinf < feas_tol and dinf < feas_tol:
            status = "optimal"
            break

        try:
            Sinvs = [_chol_inv(S) for S in Ss]
        except np.linalg.LinAlgError:
            break
        # Schur complement matrix
        M = np.zeros((m, m))
        XASs = []
        for A, X, Sinv in zip(As, Xs, Sinvs):
            P = X @ A @ Sinv  # (m, n, n)
            XASs.append(P)
            M += np.einsum("iab,jba->ij", A, P)
        d_lp = x_lp / s_lp
        M += (A_lp.T * d_lp) @ A_lp
        M = 0.5 * (M + M.T)
        try:
            Mfac = np.linalg.cholesky(M + 1e-14 * np.trace(M) / max(m, 1) * np.eye(m))
        except np.linalg.LinAlgError:
            break

        def direction(Rcs, rc_lp):
            rhs = rp.copy()
            for A, X, Sinv, Rc, R in zip(As, Xs, Sinvs, Rcs, Rd):
                T = (Rc - X @ R) @ Sinv
                rhs -= np.einsum("iab,ab->i", A, T)
            rhs -= A_lp.T @ ((rc_lp - x_lp * rd_lp) / s_lp)
            dy = np.linalg.solve(Mfac.T, np.linalg.solve(Mfac, rhs))
            dSs = [R - np.einsum("i,iab->ab", dy, A) for R, A in zip(Rd, As)]
            dXs = []
            for Rc, X, dS, Sinv in zip(Rcs, Xs, dSs, Sinvs):
                dX = (Rc - X @ dS) @ Sinv
                dXs.append(0.5 * (dX + dX.T))
            ds_lp = rd_lp - A_lp @ dy
            dx_lp = (rc_lp - x_lp * ds_lp) / s_lp
            return dXs, dx_lp, dy, dSs, ds_lp

        def steps(dXs, dx_lp, dSs, ds_lp):
            ap = min([_max_step(X, dX) for X, dX in zip(Xs, dXs)] + [_max_step_lp(x_lp, dx_lp)])
            ad = min([_max_step(S, dS) for S, dS in zip(Ss, dSs)] + [_max_step_lp(s_lp, ds_lp)])
            return ap, ad

        try:
            # predictor
            Rcs = [-X @ S for X, S in zip(Xs, Ss)]
            dXa, dxa, dya, dSa, dsa = direction(Rcs, -x_lp * s_lp)
            ap, ad = steps(dXa, dxa, dSa, dsa)
            ap, ad = min(1.0, ap), min(1.0, ad)
            mu_aff = (
                sum(np.sum((X + ap * dX) * (S + ad * dS)) for X, dX, S, dS in zip(Xs, dXa, Ss, dSa))
                + (x_lp + ap * dxa) @ (s_lp + ad * dsa)
            ) / n_tot
            sigma = min(1.0, max(0.0, (mu_aff / mu) ** 3)) if mu > 0 else 0.0
            # corrector
            Rcs = [sigma * mu * np.eye(X.shape[0]) - X @ S - dX @ dS for X, S, dX, dS in zip(Xs, Ss, dXa, dSa)]
            rc_lp = sigma * mu - x_lp * s_lp - dxa * dsa
            dXs, dx_lp, dy, dSs, ds_lp = direction(Rcs, rc_lp)
            ap, ad = steps(dXs, dx_lp, dSs, ds_lp)
        except np.linalg.LinAlgError:
            break
        ap = min(1.0, 0.95 * ap)
        ad = min(1.0, 0.95 * ad)
        Xs = [X + ap * dX for X, dX in zip(Xs, dXs)]
        x_lp = x_lp + ap * dx_lp
        Ss = [S + ad * dS for S, dS in zip(Ss, dSs)]
        s_lp = s_lp + ad * ds_lp
        y = y + ad * dy

    slacks = [C - np.einsum("i,iab->ab", y, A) for C, A in zip(Cs, As)]
    return SDPResult(
        x=y,
        status=status,
        iterations=it,
        primal_objective=-float(dobj) if np.isfinite(dobj) else np.nan,
        dual_objective=-float(pobj) if np.isfinite(pobj) else np.nan,
        gap=float(gap),
        primal_infeasibility=float(dinf),
        dual_infeasibility=float(pinf),
        slacks=slacks,
    )
