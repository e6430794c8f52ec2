"""Bundled example systems.

* ``pole_example_system``: a 2x2 rational transfer matrix with known poles,
  realized column by column in controllable canonical form.
* ``demo_*``: a 4-bus microgrid with two droop inverters.  Line data are
  illustrative values chosen so that the manual inverter settings give a
  stable but lightly damped inter-inverter mode.
"""

import numpy as np

from .blocks import DroopInverter
from .gridmodel import Branch, Network, StaticProsumer, build_coupled_system, reduced_system
from .lti import realize_columns

__all__ = [
    "POLE_EXAMPLE_NUM",
    "POLE_EXAMPLE_DEN",
    "POLE_EXAMPLE_POLES",
    "pole_example_system",
    "pole_example_transfer",
    "MANUAL_PARAMS",
    "DEMO_BOUNDS",
    "demo_network",
    "demo_dae",
    "demo_param_system",
]

POLE_EXAMPLE_NUM = [
    [[1, 2], [1, -3]],
    [[1, 4, 10], [1, 4]],
]
POLE_EXAMPLE_DEN = [
    [[1, 4, 3], [1, 3, 3]],
    [[1, 4, 4, 3], [1, 3, 2]],
]

POLE_EXAMPLE_POLES = np.array([-1, -2, -3, -1.5 + 0.5j * np.sqrt(3), -1.5 - 0.5j * np.sqrt(3),
                               -0.5 + 0.5j * np.sqrt(3), -0.5 - 0.5j * np.sqrt(3)])


def pole_example_transfer(s):
    """Entrywise evaluation of the transfer matrix at complex ``s``."""
    G = np.empty((2, 2), complex)
    for i in range(2):
        for j in range(2):
            G[i, j] = np.polyval(POLE_EXAMPLE_NUM[i][j], s) / np.polyval(POLE_EXAMPLE_DEN[i][j], s)
    return G


def pole_example_system():
    """8-state realization: one controllable canonical block per input column."""
    return realize_columns(POLE_EXAMPLE_NUM, POLE_EXAMPLE_DEN)


# two-inverter demo -----------------------------------------------------------

MANUAL_PARAMS = {"K_P": 0.02, "K_Q": 0.031, "T_f": 0.1, "T_v": 0.1}
DEMO_BOUNDS = {"K_P": (0.02, 0.05), "K_Q": (0.01, 0.05), "T_f": (0.05, 1.0), "T_v": (0.05, 1.0)}
DEMO_BRANCHES = [
    Branch(0, 2, 0.0004, 0.002),  # inverter 1 feeder
    Branch(1, 2, 0.006, 0.01),  # inverter 6 feeder and transformer
    Branch(2, 3, 0.02, 0.01),  # load feeder
]
DEMO_LOADS = {
    "A": [(2, 0.3, 0.05), (3, 0.1, 0.02)],
    "B": [(2, 0.1, 0.02), (3, 0.3, 0.05)],
}


def demo_network():
    return Network.from_branches(4, DEMO_BRANCHES)


def demo_inverters(params=None):
    p = dict(MANUAL_PARAMS, **(params or {}))
    return {
        0: DroopInverter(p["K_P"], p["K_Q"], p["T_f"], p["T_v"], name="inv1", bounds=dict(DEMO_BOUNDS)),
        1: DroopInverter(p["K_P"], p["K_Q"], p["T_f"], p["T_v"], name="inv6", bounds=dict(DEMO_BOUNDS)),
    }


def demo_dae(variant="A", outputs=("omega",)):
    """Coupled model; both loads' P and Q deviations are disturbance inputs."""
    loads = [StaticProsumer(b, P, Q, True, ("P", "Q"), name=f"load{b}") for b, P, Q in DEMO_LOADS[variant]]
    return build_coupled_system(demo_network(), demo_inverters(), loads, outputs=outputs)


def demo_param_system(variant="A"):
    """Reduced parameterized model with inverter frequencies as outputs."""
    return reduced_system(demo_dae(variant))
