"""The eight operational states of one leg.

Each state fixes which power devices conduct.  This module gives the
conduction sets, the loop-coefficient matrix that builds the clamp-loop
source term, the two equivalent capacitances seen by the inductor pair and
an exact single-leg state-space system for every state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .model import ConfigError, ConverterConfig
from .network import Network, Topology


class OperationalState(IntEnum):
    """States in the order they occur within a switching period."""

    S1 = 1  # main switch + first diode
    S2 = 2  # main switch + second-to-last even diode
    S3 = 3  # main switch + second diode
    S4 = 4  # main switch alone
    S5 = 5  # all power devices off
    S6 = 6  # clamp switch + last diode
    S7 = 7  # clamp switch + third diode
    S8 = 8  # first diode alone

    @classmethod
    def coerce(cls, state) -> "OperationalState":
        try:
            return cls(int(state))
        except (ValueError, TypeError):
            raise ValueError(f"operational state must be 1..8, got {state!r}") from None


# switch in each state: "Ma", "Mca" or None
_SWITCH = {1: "Ma", 2: "Ma", 3: "Ma", 4: "Ma", 5: None, 6: "Mca", 7: "Mca", 8: None}


def state_diode(state, m: int = 3) -> int | None:
    """Index of the conducting multiplier diode (1..2m-1) or None."""
    s = OperationalState.coerce(state)
    return {1: 1, 2: 2 * m - 2, 3: 2, 4: None, 5: None, 6: 2 * m - 1, 7: 3, 8: 1}[int(s)]


@dataclass(frozen=True)
class ConductionSet:
    """Devices conducting in one state.

    ``switch`` is "Ma", "Mca" or None; the switch may conduct through its
    channel or its body diode.  ``diode`` is the multiplier diode index.
    """

    state: OperationalState
    switch: str | None
    diode: int | None
    devices_on: frozenset = field(default_factory=frozenset)

    def names(self) -> set[str]:
        out = set()
        if self.switch:
            out.add(self.switch)
        if self.diode:
            out.add(f"D{self.diode}")
        return out


def conduction_set(state, m: int = 3) -> ConductionSet:
    """Conduction set of ``state`` for an m-stage leg."""
    s = OperationalState.coerce(state)
    sw = _SWITCH[int(s)]
    d = state_diode(s, m)
    labels = set()
    if sw == "Ma":
        labels.add("M_a/D_Ma")
    elif sw == "Mca":
        labels.add("M_ca/D_Mca")
    if d is not None:
        labels.add(f"D_a{d}")
    return ConductionSet(s, sw, d, frozenset(labels))


# Loop coefficient matrix.  Entries are the symbol "s" (an output capacitor
# voltage taken as a constant source), -1 (initial voltage of a dynamic
# capacitor) or 0.
S = "s"


def gamma_columns(m: int) -> list[str]:
    """Column labels: V_Cout1..V_Coutm, v_Cra, v_Cp, v_Ca1..v_Ca(m-1)."""
    return ([f"v_cout{j}" for j in range(1, m + 1)] + ["v_cra", "v_cp"]
            + [f"v_ca{j}" for j in range(1, m)])


def gamma_row(state, m: int) -> list:
    """Coefficients of the clamp-loop source voltage ``v_X - v_S`` at entry.

    The common inductor node X reaches the output stack through the
    conducting diode.  Diode 2j-1 ties pump node N_(j-1) to O_j and diode 2j
    ties O_j to N_j, so X sits below O_j by the pump capacitors in between.
    With no diode conducting, X hangs from the top output node through C_p.
    The clamp node S is grounded while M_a conducts.
    """
    s = OperationalState.coerce(state)
    row = [0] * (2 * m + 1)
    d = state_diode(s, m)
    if d is None:
        for j in range(m):
            row[j] = S
        row[m + 1] = -1
    else:
        j = (d + 1) // 2
        n_pump = j - 1 if d % 2 else j
        for k in range(j):
            row[k] = S
        for k in range(n_pump):
            row[m + 2 + k] = -1
    if _SWITCH[int(s)] != "Ma":
        row[m] = -1
    return row


def gamma_matrix(m: int) -> list[list]:
    """8 x (2m+1) loop coefficient matrix of an m-stage leg."""
    if int(m) != m or m < 2:
        raise ConfigError(f"m must be an integer >= 2, got {m!r}")
    return [gamma_row(s, int(m)) for s in OperationalState]


def equivalent_capacitances(state, config: ConverterConfig) -> tuple[float, float]:
    """``(1/C_12, 1/C_22)`` seen by the inductor pair in ``state``.

    1/C_12 is the inverse capacitance from the resonant inductor's switch
    side to ground; 1/C_22 adds the capacitors on the diode path from the
    inductors' common node.
    """
    s = OperationalState.coerce(state)
    sw = _SWITCH[int(s)]
    if sw == "Ma":
        g12 = 0.0
    elif sw == "Mca":
        lam_c = 1.0 / (1.0 + config.c_ra / config.c_c)
        g12 = lam_c / config.c_c
    else:
        g12 = 1.0 / config.c_ra
    d = state_diode(s, config.m_stages)
    if d is None:
        gx = 1.0 / config.c_p
    else:
        n_pump = (d + 1) // 2 - 1 if d % 2 else d // 2
        gx = n_pump / config.c_a
    return g12, g12 + gx


def modal_frequencies(config: ConverterConfig, inv_c12: float, inv_c22: float):
    """``(omega1, omega2, Omega, zeta4)`` of the two-inductor loop."""
    big2 = 0.5 * (inv_c22 / config.l_ra + inv_c22 / config.l_a - inv_c12 / config.l_a)
    zeta4 = inv_c12 * (inv_c22 - inv_c12) / (config.l_a * config.l_ra)
    disc = big2 * big2 - zeta4
    if disc < -1e-12 * big2 * big2:
        raise ValueError("complex modal frequencies: the loop is not lossless-oscillatory")
    root = np.sqrt(max(disc, 0.0))
    w1 = np.sqrt(big2 + root)
    w2 = np.sqrt(max(big2 - root, 0.0))
    return float(w1), float(w2), float(np.sqrt(big2)), float(zeta4)


# State ordering of the single-leg systems.
def state_labels(m: int) -> list[str]:
    return (["i_la", "i_lra", "v_cra", "v_cc"] + [f"v_ca{j}" for j in range(1, m)]
            + [f"v_cout{j}" for j in range(1, m + 1)] + ["v_cp"])


@dataclass
class LTISystem:
    """``x' = A x + B v_in`` for one state of a single leg.

    ``labels`` names the state entries.  ``topology`` is the underlying
    network system in its own ordering and ``order`` maps that ordering onto
    ``labels`` (``x_labels = x_network[order]``).
    """

    state: OperationalState
    labels: list[str]
    A: np.ndarray
    B: np.ndarray
    topology: Topology
    order: np.ndarray
    devices: list[str]
    v_in: float = 0.0

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def to_network(self, x: np.ndarray) -> np.ndarray:
        out = np.empty_like(np.asarray(x, float))
        out[self.order] = x
        return out

    def from_network(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, float)[self.order]

    def is_valid(self, x: np.ndarray, v_in: float, tol_i: float = 1e-9,
                 tol_v: float = 1e-9) -> bool:
        """Device consistency: conducting diodes carry forward current and
        blocking devices see no forward voltage."""
        xn = self.to_network(x)
        topo = self.topology
        cur = topo.device_currents(xn, v_in)
        vol = topo.device_voltages(xn)
        scale_v = tol_v * max(abs(v_in), 1.0)
        for i, dev in enumerate(topo.net.devices):
            on = i in topo.conducting
            if dev.mosfet:
                if on:
                    continue  # channel or body diode, either direction
                if -vol[i] > scale_v:
                    return False
            elif on and cur[i] < -tol_i:
                return False
            elif not on and vol[i] > scale_v:
                return False
        return True


def state_matrices(state, config: ConverterConfig, with_load: bool = True) -> LTISystem:
    """Exact state-space system of one leg in ``state``.

    The leg drives its own output stack and load.  Open branches keep their
    currents at zero; capacitors joined by conducting devices are reduced so
    their voltages move together.
    """
    s = OperationalState.coerce(state)
    m = config.m_stages
    net = Network(config, n_legs=1, with_load=with_load)
    cs = conduction_set(s, m)
    key = net.conduction_key((0, name) for name in
                             ([cs.switch] if cs.switch else [])
                             + ([f"D{cs.diode}"] if cs.diode else []))
    topo = net.topology(key)
    lay = net.layout
    labels = state_labels(m)
    pos = {"i_la": lay.i_la(), "i_lra": lay.i_lra(), "v_cra": lay.v_cra(),
           "v_cc": lay.v_cc(), "v_cp": lay.v_cp()}
    for j in range(1, m):
        pos[f"v_ca{j}"] = lay.v_ca(j)
    for j in range(1, m + 1):
        pos[f"v_cout{j}"] = lay.v_cout(j)
    order = np.array([pos[k] for k in labels])
    a = topo.A[np.ix_(order, order)]
    b = topo.B[order]
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError(f"state {int(s)}: singular network formulation")
    return LTISystem(s, labels, a, b, topo, order, sorted(cs.devices_on), config.v_in)
