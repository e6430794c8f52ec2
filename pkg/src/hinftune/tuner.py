"""Iterative structured H-infinity tuning with stability safeguards.

Each outer iteration linearizes the frequency response around the current
parameters, solves the sampled convex subproblem inside a trust region and
accepts the candidate only if it is exponentially stable and its true
H-infinity norm (Hamiltonian bisection) strictly decreases.  Rejections
shrink the trust region by ``alpha``, add critical frequencies to the grid
and keep the previous parameters.
"""

from dataclasses import dataclass, field
import io
import logging

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_frequency_grid, check_positive_vector, check_vector
from .exceptions import InitialUnstable, NoProgress
from .lti import SAFEGUARD_MARGIN, hinf_norm_bisect, hinf_norm_grid, log_grid, poles
from .paramsys import ParamSystem
from .subproblem import SubproblemSpec, linearize_response, solve_subproblem

__all__ = [
    "TuneConfig",
    "IterationRecord",
    "TuneReport",
    "ScenarioSet",
    "default_grid",
    "tune",
    "tune_multi",
    "refine_grid",
    "safeguard_check",
    "StructuredHinfTuner",
]

log = logging.getLogger(__name__)

_DEDUP_RTOL = 1e-6
_NO_PROGRESS_WINDOW = 10
_NO_PROGRESS_RATIO = 1e-9


def default_grid():
    """DC plus 40 log-spaced points on [1e-2, 1e3] rad/s."""
    return np.concatenate([[0.0], log_grid(1e-2, 1e3, 40)])


@dataclass
class TuneConfig:
    """Settings of the outer loop.

    Parameters
    ----------
    delta_k0 : array_like
        Initial trust-region half-widths, one per parameter.
    alpha : float
        Trust-region shrink factor after a rejected iterate.
    k_max : int
        Cap on outer iterations (accepted plus rejected).
    grid0 : array_like, optional
        Initial frequency grid (rad/s); :func:`default_grid` if omitted.
    conv_tol : float
        Relative norm improvement regarded as stagnation.
    n_conv : int
        Consecutive stagnating accepted iterations that end the run.
    validation_grid : array_like, optional
        Dense grid on which a grid-sup diagnostic is reported.
    margin : float
        Stability margin (1/s) of the acceptance test.
    """

    delta_k0: np.ndarray
    alpha: float = 0.7
    k_max: int = 50
    grid0: np.ndarray = None
    conv_tol: float = 1e-4
    n_conv: int = 3
    validation_grid: np.ndarray = None
    margin: float = SAFEGUARD_MARGIN
    hinf_tol: float = 1e-9
    sub_tol: float = 1e-7
    sub_max_iter: int = 200

    def __post_init__(self):
        self.delta_k0 = check_positive_vector(self.delta_k0, "delta_k0")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if int(self.k_max) < 1:
            raise ValueError("k_max must be at least 1")
        self.k_max = int(self.k_max)
        self.grid0 = default_grid() if self.grid0 is None else check_frequency_grid(self.grid0, "grid0")
        if self.validation_grid is not None:
            self.validation_grid = check_frequency_grid(self.validation_grid, "validation_grid")
        if self.conv_tol < 0 or self.n_conv < 1:
            raise ValueError("conv_tol must be non-negative and n_conv positive")


@dataclass
class IterationRecord:
    k: int
    K: np.ndarray
    gamma_sub: float
    norm: float
    stable: bool
    accepted: bool
    shrink: bool
    trust_scale: float
    grid_size: int
    grid_added: tuple
    peak_omega: float
    sub_status: str = "optimal"
    grid_norm: float = np.nan


@dataclass
class TuneReport:
    param_names: tuple
    K0: np.ndarray
    norm0: float
    iterations: list = field(default_factory=list)
    K_opt: np.ndarray = None
    norm_opt: float = np.nan
    converged: bool = False
    message: str = ""
    grids: list = field(default_factory=list)
    grid_size0: int = 0

    @property
    def accepted(self):
        return [r for r in self.iterations if r.accepted]

    def to_csv(self):
        """Per-iteration trace; row ``k = 0`` is the initial point."""
        names = list(self.param_names)
        cols = ["k", "accepted", "stable", "shrink", "gamma_sub", "norm", "grid_norm", "peak_omega",
                "trust_scale", "grid_size", "grid_added", "sub_status"] + [f"K[{n}]" for n in names]
        buf = io.StringIO()
        buf.write(",".join(cols) + "\n")
        g0 = self.grid_size0

        def fmt(v):
            return repr(float(v))

        row0 = ["0", "1", "1", "0", "", fmt(self.norm0), "", "", fmt(1.0), str(g0), "", ""]
        buf.write(",".join(row0 + [fmt(v) for v in self.K0]) + "\n")
        for r in self.iterations:
            row = [str(r.k), str(int(r.accepted)), str(int(r.stable)), str(int(r.shrink)), fmt(r.gamma_sub),
                   fmt(r.norm), "" if np.isnan(r.grid_norm) else fmt(r.grid_norm), fmt(r.peak_omega),
                   fmt(r.trust_scale), str(r.grid_size), ";".join(repr(float(w)) for w in r.grid_added),
                   r.sub_status]
            buf.write(",".join(row + [fmt(v) for v in r.K]) + "\n")
        return buf.getvalue()


class ScenarioSet:
    """Several parameterized systems sharing one parameter vector.

    Parameters
    ----------
    systems : sequence of ParamSystem
    grids : sequence of array_like, optional
        Per-scenario initial grids (the config's ``grid0`` otherwise).
    """

    def __init__(self, systems, grids=None):
        self.systems = list(systems)
        if not self.systems:
            raise ValueError("at least one scenario is required")
        s0 = self.systems[0]
        for s in self.systems[1:]:
            if (s.param_names != s0.param_names or not np.array_equal(s.K_min, s0.K_min)
                    or not np.array_equal(s.K_max, s0.K_max)):
                raise ValueError("scenarios must share parameter names and boxes")
        if grids is not None:
            grids = [check_frequency_grid(g) for g in grids]
            if len(grids) != len(self.systems):
                raise ValueError("one grid per scenario is required")
        self.grids = grids

    @property
    def param_names(self):
        return self.systems[0].param_names

    @property
    def K_min(self):
        return self.systems[0].K_min

    @property
    def K_max(self):
        return self.systems[0].K_max

    @property
    def K_nominal(self):
        return self.systems[0].K_nominal


def _merge(grid, freqs):
    """Add ``freqs`` not already present within relative ``1e-6``; return (grid, added)."""
    grid = np.asarray(grid, float)
    added = []
    for f in np.atleast_1d(np.asarray(freqs, float)):
        if not np.isfinite(f) or f < 0:
            continue
        pool = np.concatenate([grid, added]) if added else grid
        if pool.size and np.min(np.abs(pool - f)) <= _DEDUP_RTOL * max(f, 1e-12):
            continue
        added.append(float(f))
    if added:
        grid = np.sort(np.concatenate([grid, added]))
    return grid, tuple(sorted(added))


def refine_grid(grid, sys, K_rejected, K_last_stable=None, margin=SAFEGUARD_MARGIN):
    """Grid refinement after a rejected iterate.

    Adds ``|Im(lambda)|`` of every eigenvalue of ``A(K_rejected)`` with
    ``Re(lambda) > -margin`` and the peak frequency of the last stable
    iterate (``K_rejected`` itself when stable, else ``K_last_stable``).

    Returns
    -------
    grid : ndarray
    added : tuple of float
    """
    grid = check_frequency_grid(grid)
    s = sys.evaluate(K_rejected)
    freqs = []
    lam = poles(s).poles
    crit = lam[lam.real > -margin]
    freqs.extend(np.unique(np.round(np.abs(crit.imag), 12)))
    if crit.size == 0:
        res = hinf_norm_bisect(s)
        freqs.append(res.peak_omega)
    elif K_last_stable is not None:
        freqs.append(hinf_norm_bisect(sys.evaluate(K_last_stable)).peak_omega)
    return _merge(grid, freqs)


def _evaluate(systems, K, margin, tol):
    """(max norm, all stable, per-scenario peaks) at ``K``."""
    norms, peaks, stable = [], [], True
    for s in systems:
        ss = s.evaluate(K)
        if ss.n_states and np.max(np.linalg.eigvals(ss.A).real) >= -margin:
            stable = False
            norms.append(np.inf)
            peaks.append(np.nan)
            continue
        r = hinf_norm_bisect(ss, tol=tol)
        norms.append(r.norm)
        peaks.append(r.peak_omega)
    return max(norms), stable, peaks


def tune(sys, K0, cfg):
    """Tune a single parameterized system.  See :func:`tune_multi`."""
    return tune_multi(ScenarioSet([sys]), K0, cfg)


def tune_multi(scen, K0, cfg):
    """Minimize the worst-case H-infinity norm over scenarios.

    Parameters
    ----------
    scen : ScenarioSet or ParamSystem
    K0 : array_like
        Stabilizing starting point inside the box.
    cfg : TuneConfig

    Returns
    -------
    TuneReport

    Raises
    ------
    InitialUnstable
        If some scenario is not exponentially stable at ``K0``.
    NoProgress
        If the last 10 iterations were rejected and the trust region fell
        below ``1e-9`` of its initial size.  The partial report is attached.
    """
    if isinstance(scen, ParamSystem):
        scen = ScenarioSet([scen])
    # duplicated scenarios add identical constraints; keep one copy
    systems, grids = [], []
    for i, s in enumerate(scen.systems):
        g = scen.grids[i] if scen.grids is not None else cfg.grid0
        if any(s is t and np.array_equal(g, h) for t, h in zip(systems, grids)):
            continue
        systems.append(s)
        grids.append(np.array(g, float))
    p = len(scen.param_names)
    K = check_vector(K0, "K0", p).copy()
    if np.any(K < scen.K_min) or np.any(K > scen.K_max):
        raise ValueError("K0 lies outside the parameter box")
    dk0 = check_positive_vector(cfg.delta_k0, "delta_k0", p)

    for s in systems:
        ss = s.evaluate(K)
        lam = np.linalg.eigvals(ss.A) if ss.n_states else np.zeros(0)
        if lam.size and np.max(lam.real) >= -cfg.margin:
            raise InitialUnstable(lam[lam.real >= -cfg.margin])
    norm, _, peaks = _evaluate(systems, K, cfg.margin, cfg.hinf_tol)
    grids = [_merge(g, [pk])[0] for g, pk in zip(grids, peaks)]
    report = TuneReport(tuple(scen.param_names), K.copy(), float(norm), grids=[g.copy() for g in grids],
                        grid_size0=int(sum(g.size for g in grids)))
    dk = dk0.copy()
    stagnant = 0
    for k in range(1, cfg.k_max + 1):
        models = [linearize_response(s, K, g) for s, g in zip(systems, grids)]
        sol = solve_subproblem(SubproblemSpec(models, scen.K_min, scen.K_max, dk, cfg.sub_tol, cfg.sub_max_iter))
        K_new = sol.K_next
        if np.all(np.abs(K_new - K) <= 1e-12 * np.maximum(np.abs(K), 1.0)):
            # stationary for the sampled model; the current peaks are already sampled
            report.converged = True
            report.message = "stationary point of the sampled subproblem"
            break
        new_norm, stable, new_peaks = _evaluate(systems, K_new, cfg.margin, cfg.hinf_tol)
        accepted = bool(stable and new_norm < norm)
        added = set()
        if accepted:
            rel = (norm - new_norm) / norm if norm > 0 else 0.0
            K, norm = K_new, new_norm
            for i, pk in enumerate(new_peaks):
                grids[i], a = _merge(grids[i], [pk])
                added.update(a)
            stagnant = stagnant + 1 if rel < cfg.conv_tol else 0
        else:
            dk = dk * cfg.alpha
            for i, s in enumerate(systems):
                grids[i], a = refine_grid(grids[i], s, K_new, K, cfg.margin)
                added.update(a)
        gnorm = np.nan
        if cfg.validation_grid is not None and stable:
            gnorm = max(hinf_norm_grid(s.evaluate(K_new), cfg.validation_grid).norm for s in systems)
        report.iterations.append(IterationRecord(
            k=k, K=K_new.copy(), gamma_sub=float(sol.gamma), norm=float(new_norm), stable=bool(stable),
            accepted=accepted, shrink=not accepted, trust_scale=float(np.max(dk / dk0)),
            grid_size=int(sum(g.size for g in grids)), grid_added=tuple(sorted(added)),
            peak_omega=float(np.nanmax(new_peaks)) if stable else np.nan, sub_status=sol.status,
            grid_norm=float(gnorm)))
        log.debug("iteration %d: norm %.6g accepted=%s", k, new_norm, accepted)
        if accepted and stagnant >= cfg.n_conv:
            report.converged = True
            report.message = "relative improvement below conv_tol"
            break
        recent = report.iterations[-_NO_PROGRESS_WINDOW:]
        if (len(recent) == _NO_PROGRESS_WINDOW and not any(r.accepted for r in recent)
                and np.max(dk / dk0) < _NO_PROGRESS_RATIO):
            report.K_opt, report.norm_opt = K.copy(), float(norm)
            report.grids = [g.copy() for g in grids]
            report.message = "no progress"
            raise NoProgress("trust region collapsed without an accepted iterate", report)
    else:
        report.message = "iteration cap reached"
    report.K_opt, report.norm_opt = K.copy(), float(norm)
    report.grids = [g.copy() for g in grids]
    return report


def safeguard_check(report):
    """True iff every accepted iterate is stable and accepted norms strictly decrease."""
    prev = report.norm0
    if not np.isfinite(prev):
        return False
    last_K = report.K0
    for r in report.iterations:
        if r.accepted:
            if not r.stable or not np.isfinite(r.norm) or not r.norm < prev:
                return False
            prev = r.norm
            last_K = r.K
    if report.K_opt is not None:
        if not np.array_equal(report.K_opt, last_K) or report.norm_opt != prev:
            return False
    return True


class StructuredHinfTuner(BaseEstimator):
    """Estimator wrapper around :func:`tune_multi`.

    Parameters
    ----------
    delta_k : array_like or float, optional
        Initial trust region; a scalar is a fraction of each box width.
        Defaults to 0.1 of the box widths.
    alpha, k_max, conv_tol, n_conv, margin, sub_tol : see :class:`TuneConfig`.
    grid : array_like, optional
        Initial frequency grid; :func:`default_grid` if omitted.

    Attributes
    ----------
    K_opt_ : ndarray
    norm_ : float
    report_ : TuneReport
    params_ : dict
    n_iter_ : int
    """

    def __init__(self, delta_k=None, alpha=0.7, k_max=50, grid=None, conv_tol=1e-4, n_conv=3,
                 margin=SAFEGUARD_MARGIN, sub_tol=1e-7, validation_grid=None):
        self.delta_k = delta_k
        self.alpha = alpha
        self.k_max = k_max
        self.grid = grid
        self.conv_tol = conv_tol
        self.n_conv = n_conv
        self.margin = margin
        self.sub_tol = sub_tol
        self.validation_grid = validation_grid

    def _config(self, scen):
        width = scen.K_max - scen.K_min
        if self.delta_k is None or np.ndim(self.delta_k) == 0:
            frac = 0.1 if self.delta_k is None else float(self.delta_k)
            dk = frac * np.where(width > 0, width, 1.0)
        else:
            dk = np.asarray(self.delta_k, float)
        return TuneConfig(dk, self.alpha, self.k_max, self.grid, self.conv_tol, self.n_conv,
                          self.validation_grid, self.margin, sub_tol=self.sub_tol)

    @staticmethod
    def _scenarios(X):
        if isinstance(X, ScenarioSet):
            return X
        if isinstance(X, ParamSystem):
            return ScenarioSet([X])
        return ScenarioSet(list(X))

    def fit(self, X, K0=None):
        """Tune ``X`` (a ParamSystem, a ScenarioSet or a list of ParamSystems) from ``K0``."""
        scen = self._scenarios(X)
        if K0 is None:
            if scen.K_nominal is None:
                raise ValueError("K0 is required when the system has no nominal parameters")
            K0 = scen.K_nominal
        rep = tune_multi(scen, K0, self._config(scen))
        self.report_ = rep
        self.K_opt_ = rep.K_opt
        self.norm_ = rep.norm_opt
        self.params_ = dict(zip(scen.param_names, map(float, rep.K_opt)))
        self.n_iter_ = len(rep.iterations)
        return self

    def transform(self, X):
        """State-space model(s) at the tuned parameters."""
        check_is_fitted(self, "K_opt_")
        scen = self._scenarios(X)
        out = [s.evaluate(self.K_opt_) for s in scen.systems]
        return out[0] if isinstance(X, ParamSystem) else out

    def score(self, X, y=None):
        """Negative worst-case H-infinity norm at the tuned parameters."""
        check_is_fitted(self, "K_opt_")
        scen = self._scenarios(X)
        return -max(hinf_norm_bisect(s.evaluate(self.K_opt_)).norm for s in scen.systems)
