"""Ideal-switch LC network of the interleaved converter.

Every leg holds L_a, L_ra, C_ra, the clamp branch (M_ca, C_c), the pump
column C_a1..C_a(m-1), the parasitic C_p from the inductors' common node to
the output and the 2m-1 multiplier diodes.  The output stack C_out1..C_outm
and the load are shared by all legs.

Devices are ideal: a conducting device is a short, a blocking one an open
circuit.  For a given conduction set the network is linear and time
invariant, ``x' = A x + B v_in``.  Conducting devices merge nodes; the
capacitor network stays well posed because C_p ties every leg's floating
pump column to the output node.

State layout (``Layout``): per leg ``[i_La, i_Lra, v_Cra, v_Cc, v_Ca1..,
v_Cp]`` followed by the shared ``[v_Cout1..v_Coutm]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import expm

from .model import ConverterConfig

GND = -1
VIN = -2


@dataclass(frozen=True)
class Device:
    """Two-terminal ideal device; positive current flows ``a -> b``.

    For a MOSFET ``a`` is the drain and ``b`` the source; the body diode
    conducts negative current.  For a diode ``a`` is the anode.
    """

    leg: int
    name: str
    a: int
    b: int
    mosfet: bool = False


class Layout:
    """Index bookkeeping for the stacked multi-leg state vector."""

    def __init__(self, m: int, n: int):
        self.m = m
        self.n = n
        self.leg_size = m + 4
        self.size = n * self.leg_size + m

    def i_la(self, leg=0):
        return leg * self.leg_size

    def i_lra(self, leg=0):
        return leg * self.leg_size + 1

    def v_cra(self, leg=0):
        return leg * self.leg_size + 2

    def v_cc(self, leg=0):
        return leg * self.leg_size + 3

    def v_ca(self, j, leg=0):
        """Pump capacitor C_aj, j = 1..m-1."""
        return leg * self.leg_size + 3 + j

    def v_cp(self, leg=0):
        return leg * self.leg_size + self.m + 3

    def v_cout(self, j):
        """Output capacitor C_outj, j = 1..m."""
        return self.n * self.leg_size + j - 1

    def leg_slice(self, leg):
        return slice(leg * self.leg_size, (leg + 1) * self.leg_size)

    @property
    def out_slice(self):
        return slice(self.n * self.leg_size, self.size)

    def leg_permutation(self, shift: int = 1) -> np.ndarray:
        """Index permutation mapping leg k's block onto leg k+shift."""
        perm = np.arange(self.size)
        for leg in range(self.n):
            src = (leg + shift) % self.n
            perm[self.leg_slice(leg)] = np.arange(self.size)[self.leg_slice(src)]
        return perm


class Network:
    """Node/element tables for an m-stage, n-leg converter."""

    def __init__(self, config: ConverterConfig, n_legs: int | None = None,
                 with_load: bool = True):
        self.config = config
        m = config.m_stages
        n = config.n_legs if n_legs is None else n_legs
        self.m, self.n = m, n
        self.layout = Layout(m, n)
        self.with_load = with_load

        # nodes: O1..Om, then per leg X, S, K, N1..N(m-1)
        self.n_nodes = m + n * (m + 2)
        self.caps: list[tuple[int, int, int, float]] = []  # (state idx, plus, minus, C)
        self.inductors: list[tuple[int, int, int, float]] = []  # (state idx, from, to, L)
        self.devices: list[Device] = []
        lay = self.layout

        for j in range(1, m + 1):
            self.caps.append((lay.v_cout(j), self.o(j), self.o(j - 1), config.c_out))
        for leg in range(n):
            x, s, k = self.x(leg), self.s(leg), self.k(leg)
            self.caps.append((lay.v_cra(leg), s, GND, config.c_ra))
            self.caps.append((lay.v_cc(leg), k, GND, config.c_c))
            for j in range(1, m):
                self.caps.append((lay.v_ca(j, leg), self.pump(j, leg), self.pump(j - 1, leg),
                                  config.c_a))
            self.caps.append((lay.v_cp(leg), self.o(m), x, config.c_p))
            self.inductors.append((lay.i_la(leg), VIN, x, config.l_a))
            self.inductors.append((lay.i_lra(leg), x, s, config.l_ra))
            self.devices.append(Device(leg, "Ma", s, GND, mosfet=True))
            self.devices.append(Device(leg, "Mca", k, s, mosfet=True))
            chain = self.chain(leg)
            for d in range(1, 2 * m):
                self.devices.append(Device(leg, f"D{d}", chain[d - 1], chain[d]))
        self.device_index = {(d.leg, d.name): i for i, d in enumerate(self.devices)}

    # node helpers
    def o(self, j: int) -> int:
        return GND if j == 0 else j - 1

    def x(self, leg: int) -> int:
        return self.m + leg * (self.m + 2)

    def s(self, leg: int) -> int:
        return self.x(leg) + 1

    def k(self, leg: int) -> int:
        return self.x(leg) + 2

    def pump(self, j: int, leg: int) -> int:
        return self.x(leg) if j == 0 else self.x(leg) + 2 + j

    def chain(self, leg: int) -> list[int]:
        """Multiplier diode chain X, O1, N1, O2, N2, ..., O_m."""
        nodes = [self.x(leg)]
        for j in range(1, self.m + 1):
            nodes.append(self.o(j))
            if j < self.m:
                nodes.append(self.pump(j, leg))
        return nodes

    @cached_property
    def incidence(self) -> np.ndarray:
        """Capacitor-voltage rows over node voltages; square because the
        capacitors form a spanning tree of the non-fixed nodes."""
        d = np.zeros((len(self.caps), self.n_nodes))
        for row, (_, p, q, _) in enumerate(self.caps):
            if p >= 0:
                d[row, p] += 1.0
            if q >= 0:
                d[row, q] -= 1.0
        return d

    @cached_property
    def cap_state_index(self) -> np.ndarray:
        return np.array([c[0] for c in self.caps])

    @cached_property
    def node_from_state(self) -> np.ndarray:
        """Matrix mapping the state vector to node voltages (N x size)."""
        nv = np.linalg.inv(self.incidence)
        out = np.zeros((self.n_nodes, self.layout.size))
        out[:, self.cap_state_index] = nv
        return out

    def topology(self, conducting: frozenset[int]) -> "Topology":
        return _topology_cache(self, conducting)

    def conduction_key(self, names) -> frozenset[int]:
        """Conduction set from ``(leg, device name)`` pairs."""
        return frozenset(self.device_index[n] for n in names)

    def energy(self, x: np.ndarray) -> float:
        e = 0.0
        for idx, _, _, c in self.caps:
            e += 0.5 * c * x[idx] ** 2
        for idx, _, _, ell in self.inductors:
            e += 0.5 * ell * x[idx] ** 2
        return e


_CACHE: dict = {}


def _topology_cache(net: Network, conducting: frozenset[int]) -> "Topology":
    key = (id(net), conducting)
    topo = _CACHE.get(key)
    if topo is None or topo.net is not net:
        topo = Topology(net, conducting)
        if len(_CACHE) > 4096:
            _CACHE.clear()
        _CACHE[key] = topo
    return topo


class Topology:
    """Linear system for one conduction set.

    Attributes
    ----------
    A, B : state matrix and input column (input is v_in).
    project : charge-conserving map onto the constraint set of this
        topology; identity on states that already satisfy it.
    current : (n_devices, size+1) rows giving each conducting device's
        current as ``row[:-1] @ x + row[-1] * v_in``; zero rows for open devices.
    voltage : (n_devices, size) rows giving ``v_a - v_b`` for every device.
    """

    def __init__(self, net: Network, conducting: frozenset[int]):
        self.net = net
        self.conducting = conducting
        size = net.layout.size
        nn = net.n_nodes
        cfg = net.config

        # merge nodes joined by conducting devices
        parent = list(range(nn + 1))  # index nn is ground

        def find(u):
            while parent[u] != u:
                parent[u] = parent[parent[u]]
                u = parent[u]
            return u

        def node(u):
            return nn if u == GND else u

        shorts = [net.devices[i] for i in sorted(conducting)]
        for dev in shorts:
            ra, rb = find(node(dev.a)), find(node(dev.b))
            if ra == rb:
                raise ValueError("conducting devices form a loop")
            parent[ra] = rb
        roots = {}
        groups = np.full(nn, -1)
        gnd_root = find(nn)
        for u in range(nn):
            r = find(u)
            if r == gnd_root:
                continue
            groups[u] = roots.setdefault(r, len(roots))
        ng = len(roots)
        p = np.zeros((nn, ng))
        for u in range(nn):
            if groups[u] >= 0:
                p[u, groups[u]] = 1.0

        d = net.incidence
        cvals = np.array([c[3] for c in net.caps])
        cn = d.T @ (cvals[:, None] * d)
        mg = p.T @ cn @ p
        r = np.linalg.solve(mg, p.T @ cn)  # group voltages from node voltages
        vmap = p @ r @ net.node_from_state  # constrained node voltages from x

        # current injections into nodes: columns over x, plus v_in column
        inj = np.zeros((nn, size + 1))
        for idx, frm, to, _ in net.inductors:
            if frm >= 0:
                inj[frm, idx] -= 1.0
            if to >= 0:
                inj[to, idx] += 1.0
        if net.with_load:
            om = net.o(net.m)
            inj[om, :size] -= vmap[om] / cfg.r_load
        dgroup = np.linalg.solve(mg, p.T @ inj)  # group voltage derivatives
        dnode = p @ dgroup

        a = np.zeros((size, size + 1))
        a[net.cap_state_index] = d @ dnode
        vaug = np.hstack([vmap, np.zeros((nn, 1))])
        for idx, frm, to, ell in net.inductors:
            row = np.zeros(size + 1)
            row += vaug[frm] if frm >= 0 else 0.0
            if frm == VIN:
                row[size] += 1.0
            row -= vaug[to] if to >= 0 else 0.0
            a[idx] = row / ell
        self.A = a[:, :size]
        self.B = a[:, size]

        xaug_proj = np.zeros((size, size))
        xaug_proj[np.ix_(net.cap_state_index, range(size))] = d @ vmap
        for idx, *_ in net.inductors:
            xaug_proj[idx, idx] = 1.0
        self.project = xaug_proj

        # device currents from KCL: E i = inj - Cn dv
        self.current = np.zeros((len(net.devices), size + 1))
        if shorts:
            e = np.zeros((nn, len(shorts)))
            for col, dev in enumerate(shorts):
                if dev.a >= 0:
                    e[dev.a, col] += 1.0
                if dev.b >= 0:
                    e[dev.b, col] -= 1.0
            rhs = inj - cn @ dnode
            sol, *_ = np.linalg.lstsq(e, rhs, rcond=None)
            for col, i in enumerate(sorted(conducting)):
                self.current[i] = sol[col]

        nfs = net.node_from_state
        self.voltage = np.zeros((len(net.devices), size))
        for i, dev in enumerate(net.devices):
            if dev.a >= 0:
                self.voltage[i] += nfs[dev.a]
            if dev.b >= 0:
                self.voltage[i] -= nfs[dev.b]

        ev = np.linalg.eigvals(self.A)
        self._eig = ev
        self.omega_max = float(np.max(np.abs(ev.imag))) if ev.size else 0.0
        self._phi_cache: dict[float, tuple[np.ndarray, np.ndarray]] = {}

    def omega_below(self, omega_cut: float) -> float:
        """Largest modal frequency not exceeding ``omega_cut``."""
        w = np.abs(self._eig.imag)
        w = w[w <= omega_cut]
        return float(w.max()) if w.size else 0.0

    def settle_fast_modes(self, omega_cut: float):
        """Affine map ``x -> M x + g v_in`` that removes the oscillation of
        every mode faster than ``omega_cut`` by placing it at its
        equilibrium.  Slow modes are untouched (spectral projection).

        Returns None when the topology has no such mode.
        """
        key = ("fast", omega_cut)
        hit = self._phi_cache.get(key)
        if hit is not None or key in self._phi_cache:
            return hit
        lam, vr = np.linalg.eig(self.A)
        fast = np.abs(lam) > omega_cut
        out = None
        if np.any(fast):
            lam_l, wl = np.linalg.eig(self.A.T)
            v = vr[:, fast]
            w = wl[:, np.abs(lam_l) > omega_cut]
            if w.shape[1] == v.shape[1]:
                core = np.linalg.inv(w.T @ v)  # left vectors of A are eigvecs of A.T
                proj = v @ core @ w.T
                # fast eigenvalue matrix in the v basis
                lam_f = core @ w.T @ self.A @ v
                eq = -v @ np.linalg.solve(lam_f, core @ w.T @ self.B)
                size = self.A.shape[0]
                out = ((np.eye(size) - proj).real, eq.real)
        self._phi_cache[key] = out
        return out

    def derivative(self, x: np.ndarray, v_in: float) -> np.ndarray:
        return self.A @ x + self.B * v_in

    def propagator(self, dt: float) -> tuple[np.ndarray, np.ndarray]:
        """``(Phi, gamma)`` with ``x(dt) = Phi @ x0 + gamma * v_in``."""
        hit = self._phi_cache.get(dt)
        if hit is not None:
            return hit
        size = self.A.shape[0]
        aug = np.zeros((size + 1, size + 1))
        aug[:size, :size] = self.A
        aug[:size, size] = self.B
        e = expm(aug * dt)
        out = (e[:size, :size], e[:size, size])
        if len(self._phi_cache) < 64:
            self._phi_cache[dt] = out
        return out

    def advance(self, x0: np.ndarray, dt: float, v_in: float) -> np.ndarray:
        phi, gam = self.propagator(dt)
        return phi @ x0 + gam * v_in

    def advance_with_integral(self, x0: np.ndarray, dt: float, v_in: float):
        """State at ``dt`` and the exact integral of x over ``[0, dt]``."""
        size = self.A.shape[0]
        aug = np.zeros((2 * size + 1, 2 * size + 1))
        aug[:size, :size] = self.A
        aug[:size, size] = self.B
        aug[size + 1:, :size] = np.eye(size)
        e = expm(aug * dt)
        z0 = np.concatenate([x0, [v_in], np.zeros(size)])
        z = e @ z0
        return z[:size], z[size + 1:]

    def device_currents(self, x: np.ndarray, v_in: float) -> np.ndarray:
        return self.current[:, :-1] @ x + self.current[:, -1] * v_in

    def device_voltages(self, x: np.ndarray) -> np.ndarray:
        return self.voltage @ x
