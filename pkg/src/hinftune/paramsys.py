"""Parameterized state-space systems ``K -> (A(K), B(K), C(K), D(K))``."""

import numpy as np

from ._validation import check_vector
from .lti import StateSpace

__all__ = ["ParamSystem"]


class ParamSystem:
    """A family of state-space systems indexed by a tunable parameter vector.

    Parameters
    ----------
    fn : callable
        Maps a float array ``K`` of length ``len(param_names)`` to a
        :class:`~hinftune.lti.StateSpace`.  Must be a pure function; it is
        evaluated slightly outside the box by finite differences.
    param_names : sequence of str
        Ordered parameter labels.
    K_min, K_max : array_like
        Box bounds.
    K_nominal : array_like, optional
        Default starting point (e.g. the parameters a model was declared
        with).
    """

    def __init__(self, fn, param_names, K_min, K_max, K_nominal=None, output_names=None, input_names=None):
        self._fn = fn
        self.param_names = tuple(str(p) for p in param_names)
        p = len(self.param_names)
        if len(set(self.param_names)) != p:
            raise ValueError("duplicate parameter names")
        self.K_min = check_vector(K_min, "K_min", p)
        self.K_max = check_vector(K_max, "K_max", p)
        if np.any(self.K_min > self.K_max):
            raise ValueError("K_min must not exceed K_max")
        self.K_nominal = None if K_nominal is None else check_vector(K_nominal, "K_nominal", p)
        self.output_names = None if output_names is None else tuple(output_names)
        self.input_names = None if input_names is None else tuple(input_names)

    @property
    def n_params(self):
        return len(self.param_names)

    def evaluate(self, K):
        K = check_vector(K, "K", self.n_params)
        sys = self._fn(K)
        if not isinstance(sys, StateSpace):
            sys = StateSpace(*sys)
        return sys

    __call__ = evaluate

    def clip(self, K):
        return np.clip(np.asarray(K, dtype=float), self.K_min, self.K_max)

    def vector(self, values):
        """Parameter vector from a ``{name: value}`` mapping (missing names use ``K_nominal``)."""
        unknown = set(values) - set(self.param_names)
        if unknown:
            raise KeyError(f"unknown parameters: {sorted(unknown)}")
        base = self.K_nominal if self.K_nominal is not None else 0.5 * (self.K_min + self.K_max)
        return np.array([float(values.get(n, b)) for n, b in zip(self.param_names, base)])

    def as_dict(self, K):
        return {n: float(k) for n, k in zip(self.param_names, K)}

    def with_bounds(self, K_min=None, K_max=None):
        return ParamSystem(
            self._fn,
            self.param_names,
            self.K_min if K_min is None else K_min,
            self.K_max if K_max is None else K_max,
            self.K_nominal,
            self.output_names,
            self.input_names,
        )

    def __repr__(self):
        return f"ParamSystem(params={list(self.param_names)})"
