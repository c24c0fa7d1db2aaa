"""Event-driven piecewise-LTI simulation of the full interleaved converter.

Each topology is propagated exactly with the matrix exponential; device
commutations are located by scanning the exact solution on a fine grid and
bisecting.  Periodic steady state is found by Newton shooting on the
period (or, for identical interleaved legs, the 1/n period) map.

Time origin of a leg is the turn-off edge of its clamp switch M_ca.  The
main switch gate is raised one dead time later and dropped at ``t_off_a``;
the clamp gate is raised one dead time after that and held to the end of
the period.  The main-switch duty used throughout the package is measured
from the instant C_ra is fully discharged (M_a starts conducting) to
``t_off_a``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .model import ConfigError, ConverterConfig, OperatingPoint
from .network import Network, Topology
from .topology import LTISystem, OperationalState

log = logging.getLogger(__name__)

EPS_V = 1e-7
EPS_I = 1e-9
LOOKAHEAD = 1e-11


class NonConvergenceError(RuntimeError):
    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)


class ModeError(RuntimeError):
    """The simulated device sequence left the CCM sequence of the analysis."""


@dataclass
class Event:
    time: float
    leg: int
    kind: str  # e.g. "D3 on", "D3 off", "Ma gate on", "Ma gate off"
    state: int  # classified operational state of the leg after the event


@dataclass
class Segment:
    t0: float
    t1: float
    conducting: frozenset
    x0: np.ndarray


@dataclass
class PeriodRecord:
    x_end: np.ndarray
    conducting_end: frozenset
    segments: list
    events: list
    zvs: dict  # (leg, "Ma"/"Mca") -> bool
    v_at_gate_on: dict
    t_conduct_ma: dict  # leg -> time M_a started conducting


@dataclass
class OracleSolution:
    config: ConverterConfig
    duty_ma: float
    t_off_a: float
    x0: np.ndarray
    conducting0: frozenset
    record: PeriodRecord
    residual: float
    iterations: int
    network: Network
    jacobian: np.ndarray | None = None
    averages: dict = field(default_factory=dict)
    ripples: dict = field(default_factory=dict)
    durations: dict = field(default_factory=dict)
    samples: dict = field(default_factory=dict)
    sequence: list = field(default_factory=list)

    @property
    def events(self):
        return self.record.events

    @property
    def zvs(self):
        return self.record.zvs

    @property
    def v_out(self) -> float:
        return self.averages["v_out"]

    @property
    def i_out(self) -> float:
        return self.averages["i_out"]

    def state_at(self, t: float) -> np.ndarray:
        """Exact state vector at time ``t`` within the recorded period."""
        t = t % self.config.t_s
        for seg in self.record.segments:
            if seg.t0 <= t <= seg.t1:
                topo = self.network.topology(seg.conducting)
                return topo.advance(seg.x0, t - seg.t0, self.config.v_in)
        return np.array(self.record.x_end)


class Simulator:
    """Period map of the converter for a fixed gate schedule."""

    def __init__(self, config: ConverterConfig, t_off_a: float, strict: bool = True,
                 settle_ring: bool = True):
        if config.diode_drop != 0.0:
            raise ConfigError("the oracle models ideal diodes; diode_drop must be 0")
        self.config = config
        self.net = Network(config)
        self.lay = self.net.layout
        self.t_s = config.t_s
        self.dead = config.dead_time
        self.t_off_a = t_off_a
        if not (self.dead < t_off_a < self.t_s - 2 * self.dead):
            raise ConfigError("gate schedule leaves no room for the clamp switch")
        self.strict = strict
        self.v_in = config.v_in
        n_dev = len(self.net.devices)
        self.is_mosfet = np.array([d.mosfet for d in self.net.devices])
        self.dev_leg = np.array([d.leg for d in self.net.devices])
        self.dev_name = [d.name for d in self.net.devices]
        self.per_leg = n_dev // self.net.n
        self.v_scale = max(config.v_in, 1.0)
        self.omega_cut = ring_cutoff(config) if settle_ring else None

    # gate schedule
    def gates_at(self, t: float) -> np.ndarray:
        """Boolean gate drive of every device (diodes always False)."""
        g = np.zeros(len(self.net.devices), dtype=bool)
        for leg in range(self.net.n):
            tau = (t - leg * self.t_s / self.net.n) % self.t_s
            g[self.net.device_index[(leg, "Ma")]] = self.dead <= tau < self.t_off_a
            g[self.net.device_index[(leg, "Mca")]] = self.t_off_a + self.dead <= tau < self.t_s
        return g

    def gate_edges(self, t0: float, t1: float) -> list[tuple[float, int, bool]]:
        edges = []
        for leg in range(self.net.n):
            phase = leg * self.t_s / self.net.n
            local = [(self.dead, "Ma", True), (self.t_off_a, "Ma", False),
                     (self.t_off_a + self.dead, "Mca", True), (0.0, "Mca", False)]
            for tau, name, on in local:
                for k in range(-1, 3):
                    t = phase + tau + k * self.t_s
                    if t0 < t < t1 - 1e-15:
                        edges.append((t, self.net.device_index[(leg, name)], on))
        edges.sort()
        return edges

    # device consistency
    def _violations(self, topo: Topology, x: np.ndarray, conducting, gates):
        """Normalised violation per device and its time derivative; a
        positive violation means the conduction state must flip."""
        dx = topo.derivative(x, self.v_in)
        cur = topo.device_currents(x, self.v_in)
        dcur = topo.current[:, :-1] @ dx
        vol = topo.device_voltages(x)
        dvol = topo.voltage @ dx
        viol = np.full(len(self.net.devices), -np.inf)
        rate = np.zeros(len(self.net.devices))
        for i in range(len(viol)):
            if self.is_mosfet[i] and gates[i]:
                continue
            on = i in conducting
            if on:
                # diode current must stay >= 0; body diode drain current <= 0
                sign = 1.0 if self.is_mosfet[i] else -1.0
                h, dh, eps = sign * cur[i], sign * dcur[i], EPS_I
            else:
                sign = -1.0 if self.is_mosfet[i] else 1.0
                h, dh, eps = sign * vol[i], sign * dvol[i], EPS_V * self.v_scale
            viol[i] = (h + LOOKAHEAD * dh) / eps
            rate[i] = dh / eps
        return viol, rate

    def resolve(self, x: np.ndarray, conducting: frozenset, gates: np.ndarray):
        """Consistent conduction set for state ``x`` under ``gates``.

        A device that flips back and forth is left in whichever state its
        violation is decaying in; this happens when the small C_p current
        masks a diode turn-on by a few mA.
        """
        conducting = set(conducting)
        for i in np.flatnonzero(self.is_mosfet & gates):
            conducting.add(int(i))
        x_in = x
        seen = {}
        locked = set()
        trail = []
        for _ in range(60):
            key = frozenset(conducting)
            topo = self.net.topology(key)
            x = self._enter(topo, x_in)
            viol, rate = self._violations(topo, x, key, gates)
            viol[list(locked)] = -np.inf
            worst = int(np.argmax(viol))
            if viol[worst] <= 1.0:
                return x, key
            trail.append((sorted(self.dev_name[i] + str(self.dev_leg[i]) for i in key),
                          self.dev_name[worst] + str(self.dev_leg[worst]), float(viol[worst])))
            if worst in seen and seen[worst][0] != (worst in key):
                others = viol.copy()
                others[worst] = -np.inf
                other = int(np.argmax(others))
                if others[other] > 1.0 and other not in seen:
                    # the flip-flop may vanish once the rest of the set is right
                    seen[other] = ((other in key), key, rate[other])
                    conducting.symmetric_difference_update({other})
                    continue
                prev_rate = seen[worst][2]
                # choose the side whose violation is shrinking; prefer conduction
                keep_on = rate[worst] < 0 if worst in key else prev_rate < 0
                locked.add(worst)
                if keep_on != (worst in key):
                    conducting.symmetric_difference_update({worst})
                continue
            seen[worst] = ((worst in key), key, rate[worst])
            conducting.symmetric_difference_update({worst})
        log.debug("conduction search trail: %s", trail)
        raise ModeError(f"could not find a consistent device conduction set: {trail[-4:]}")

    def _enter(self, topo: Topology, x: np.ndarray) -> np.ndarray:
        x = topo.project @ x
        if self.omega_cut is not None:
            settle = topo.settle_fast_modes(self.omega_cut)
            if settle is not None:
                x = settle[0] @ x + settle[1] * self.v_in
        return x

    def _monitor_rows(self, topo: Topology, conducting, gates):
        rows, offs, scale, idx = [], [], [], []
        size = self.lay.size
        for i in range(len(self.net.devices)):
            if self.is_mosfet[i] and gates[i]:
                continue
            on = i in conducting
            if on:
                sign = 1.0 if self.is_mosfet[i] else -1.0
                rows.append(sign * topo.current[i, :size])
                offs.append(sign * topo.current[i, size])
                scale.append(EPS_I)
            else:
                sign = -1.0 if self.is_mosfet[i] else 1.0
                rows.append(sign * topo.voltage[i])
                offs.append(0.0)
                scale.append(EPS_V * self.v_scale)
            idx.append(i)
        return np.array(rows), np.array(offs), np.array(scale), idx

    def _find_event(self, topo: Topology, x0, dt_total, conducting, gates):
        """Earliest device commutation in ``(0, dt_total]``; returns
        ``(dt, device index)`` or ``(None, None)``."""
        rows, offs, scale, idx = self._monitor_rows(topo, conducting, gates)
        if not idx:
            return None, None
        omega = topo.omega_max if self.omega_cut is None else topo.omega_below(self.omega_cut)
        nsteps = max(8, int(math.ceil(dt_total * omega / 0.3)))
        h = dt_total / nsteps
        phi, gam = topo.propagator(h)
        x = x0
        gv = gam * self.v_in
        # rows that start inside their violation band are watched only
        # after they have cleared it
        slope = rows @ topo.derivative(x0, self.v_in)
        armed = ((rows @ x0 + offs * self.v_in) / scale <= 0.5) | (slope > 0)

        def g(xx):
            val = (rows @ xx + offs * self.v_in) / scale
            return np.where(armed_now, val, -np.inf)

        for k in range(1, nsteps + 1):
            x = phi @ x + gv
            val = (rows @ x + offs * self.v_in) / scale
            armed_now = armed.copy()
            if np.any(armed & (val > 1.0)):
                lo, hi = (k - 1) * h, k * h

                def f(t):
                    return np.max(g(topo.advance(x0, t, self.v_in))) - 0.5

                if f(lo) < 0:
                    hi = brentq(f, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps)
                    # land just past the crossing
                    while f(hi) < 0:
                        hi += 1e-14
                vals = g(topo.advance(x0, hi, self.v_in))
                return hi, idx[int(np.argmax(vals))]
            armed |= val <= 0.5
        return None, None

    def classify(self, conducting, leg: int) -> int:
        return classify_state({self.dev_name[i] for i in conducting if self.dev_leg[i] == leg},
                              self.net.m)

    def run(self, x0: np.ndarray, conducting: frozenset, t_end: float | None = None,
            record: bool = False) -> PeriodRecord:
        t_end = self.t_s if t_end is None else t_end
        t = 0.0
        gates = self.gates_at(0.0)
        x, conducting = self.resolve(np.array(x0, float), conducting, gates)
        edges = self.gate_edges(0.0, t_end)
        segments, events = [], []
        zvs, v_on, t_conduct = {}, {}, {}
        ei = 0
        guard = 0
        while t < t_end:
            guard += 1
            if guard > 5000:
                raise ModeError("event storm: too many commutations in one period")
            t_next = edges[ei][0] if ei < len(edges) else t_end
            topo = self.net.topology(conducting)
            dt, dev = (None, None)
            if t_next - t > 0:
                dt, dev = self._find_event(topo, x, t_next - t, conducting, gates)
            if dt is not None and t + dt < t_next:
                x_new = topo.advance(x, dt, self.v_in)
                if record:
                    segments.append(Segment(t, t + dt, conducting, x))
                t += dt
                before = conducting
                x, conducting = self.resolve(x_new, conducting ^ {dev}, gates)
                self._log_changes(events, t, before, conducting, record)
                self._note_ma_start(t_conduct, t, before, conducting)
                continue
            x_new = topo.advance(x, t_next - t, self.v_in) if t_next > t else x
            if record and t_next > t:
                segments.append(Segment(t, t_next, conducting, x))
            t = t_next
            x = x_new
            if ei >= len(edges):
                break
            # apply every gate edge at this instant
            before = conducting
            while ei < len(edges) and edges[ei][0] <= t + 1e-15:
                _, d, on = edges[ei]
                gates = gates.copy()
                gates[d] = on
                if on:
                    leg, name = self.dev_leg[d], self.dev_name[d]
                    zvs[(leg, name)] = d in conducting
                    v_on[(leg, name)] = float(self.net.topology(conducting).device_voltages(x)[d])
                ei += 1
            x, conducting = self.resolve(x, conducting, gates)
            self._log_changes(events, t, before, conducting, record, gate=True)
            self._note_ma_start(t_conduct, t, before, conducting)
        return PeriodRecord(x, conducting, segments, events, zvs, v_on, t_conduct)

    def _note_ma_start(self, store, t, before, after):
        for leg in range(self.net.n):
            i = self.net.device_index[(leg, "Ma")]
            if i in after and i not in before and leg not in store:
                store[leg] = t

    def _log_changes(self, events, t, before, after, record, gate=False):
        if not record:
            return
        for i in sorted(before ^ after):
            leg = int(self.dev_leg[i])
            kind = f"{self.dev_name[i]} {'on' if i in after else 'off'}"
            events.append(Event(t, leg, kind, self.classify(after, leg)))

    # shooting
    def rotate(self, x: np.ndarray, conducting: frozenset):
        """Relabel legs so that leg k+1 at ``T/n`` lands on leg k."""
        lay = self.lay
        perm = lay.leg_permutation(1)
        xr = x[perm]
        n_dev = self.per_leg
        cr = frozenset(((i // n_dev - 1) % self.net.n) * n_dev + i % n_dev for i in conducting)
        return xr, cr


def ring_cutoff(config: ConverterConfig):
    """Angular frequency separating the C_p ring from the converter's own
    resonances, or None when C_p is not small enough to separate them."""
    l_par = config.l_a * config.l_ra / (config.l_a + config.l_ra)
    omega_p = 1.0 / math.sqrt(config.c_p * l_par)
    omega_r = 1.0 / math.sqrt(config.l_ra * config.c_ra)
    if omega_p < 4.0 * omega_r:
        return None
    return math.sqrt(omega_p * omega_r)


def classify_state(names: set, m: int) -> int:
    """Operational state index 1..8 of one leg from its conducting devices;
    0 if the combination is outside the CCM sequence."""
    ma, mca = "Ma" in names, "Mca" in names
    diodes = {int(n[1:]) for n in names if n.startswith("D")}
    top_even, top_odd = 2 * m - 2, 2 * m - 1
    if ma and mca:
        return 0
    if ma:
        if diodes == {1}:
            return 1
        if diodes == {top_even}:
            return 2
        if diodes and 2 in diodes and diodes <= set(range(2, top_even + 1, 2)):
            return 3
        if not diodes:
            return 4
        return 0
    if mca:
        if diodes == {top_odd}:
            return 6
        if diodes and 3 in diodes and diodes <= set(range(3, top_odd + 1, 2)):
            return 7
        return 0
    if not diodes or diodes == {top_odd}:
        return 5
    if diodes == {1}:
        return 8
    return 0


def initial_guess(config: ConverterConfig, duty: float, net: Network) -> np.ndarray:
    lay = net.layout
    m = config.m_stages
    v_stage = config.v_in / (1 - duty)
    x = np.zeros(lay.size)
    v_out = m * v_stage
    i_in = v_out ** 2 / config.r_load / config.v_in / net.n
    for j in range(1, m + 1):
        x[lay.v_cout(j)] = v_stage
    for leg in range(net.n):
        x[lay.i_la(leg)] = i_in
        x[lay.i_lra(leg)] = -0.5 * i_in
        x[lay.v_cra(leg)] = v_stage
        x[lay.v_cc(leg)] = v_stage
        for j in range(1, m):
            x[lay.v_ca(j, leg)] = v_stage
        x[lay.v_cp(leg)] = v_out - v_stage
    return x


@dataclass
class ShootResult:
    x: np.ndarray
    conducting: frozenset
    residual: float
    iterations: int
    history: list
    jacobian: np.ndarray
    hint: frozenset = frozenset()


def shoot(sim: Simulator, x0: np.ndarray, tol: float = 1e-10, max_iter: int = 60, symmetric: bool = True,
          warmup: int = 0, jacobian: np.ndarray | None = None,
          hint: frozenset = frozenset()) -> ShootResult:
    """Newton shooting on the period map with Broyden updates.

    With ``symmetric`` (identical legs) the map covers 1/n of the period and
    closes after relabelling the legs.  The finite-difference Jacobian is
    rebuilt only when the updated one stops making progress.  Every map
    evaluation starts from the conduction set ``hint`` so the map depends
    on the state alone.
    """
    n = sim.net.n
    horizon = sim.t_s / n if (symmetric and n > 1) else sim.t_s

    def pmap(x):
        rec = sim.run(x, hint, t_end=horizon)
        xe, ce = rec.x_end, rec.conducting_end
        if horizon < sim.t_s:
            # leg k+1 at t = T/n looks like leg k did at t = 0
            xe, ce = sim.rotate(xe, ce)
        return xe, ce

    x = np.array(x0, float)
    for _ in range(warmup):
        x, _ = pmap(x)

    def fd_jacobian(x, fx):
        size = len(x)
        scale = np.maximum(np.abs(x), 1e-3 * np.max(np.abs(x)))
        jac = np.empty((size, size))
        for j in range(size):
            h = 1e-7 * scale[j]
            xp = x.copy()
            xp[j] += h
            fp, _ = pmap(xp)
            jac[:, j] = (fp - fx) / h
        return jac - np.eye(size)

    history = []
    fx, cend = pmap(x)
    r = fx - x
    jac, fresh = jacobian, False
    for it in range(1, max_iter + 1):
        res = np.linalg.norm(r) / np.linalg.norm(x)
        history.append(res)
        log.debug("shoot iter %d residual %.3e", it, res)
        if res < tol:
            return ShootResult(x, cend, res, it, history, jac)
        if jac is None:
            jac, fresh = fd_jacobian(x, fx), True
        step = np.linalg.lstsq(jac, -r, rcond=None)[0]
        lam = 1.0
        while True:
            xt = x + lam * step
            try:
                ft, ct = pmap(xt)
                rt = ft - xt
                if np.linalg.norm(rt) < np.linalg.norm(r) or lam < 0.1:
                    break
            except ModeError:
                if lam < 0.1:
                    raise
            lam *= 0.5
        progress = np.linalg.norm(rt) / np.linalg.norm(r)
        dx, dr = xt - x, rt - r
        x, fx, r, cend = xt, ft, rt, ct
        if (progress > 0.5 and not fresh) or np.linalg.norm(r) > 1e-4 * np.linalg.norm(x):
            jac, fresh = None, False
        else:
            jac = jac + np.outer(dr - jac @ dx, dx) / (dx @ dx)
            fresh = False
    raise NonConvergenceError(f"shooting did not converge (residual {history[-1]:.2e})", history)


def shoot_consistent(sim: Simulator, x0: np.ndarray, hint: frozenset = frozenset(),
                     **kwargs) -> ShootResult:
    """Shooting whose start conduction set equals the orbit's own.

    The first solve starts each period from ``hint``.  When the orbit ends
    in another set the solve is repeated from that set, so devices that
    conduct across the period boundary are carried over rather than
    rediscovered.
    """
    out = shoot(sim, x0, hint=hint, **kwargs)
    kwargs.pop("warmup", None)
    for _ in range(4):
        if out.conducting == hint:
            break
        hint = out.conducting
        kwargs["jacobian"] = out.jacobian
        out = shoot(sim, out.x, hint=hint, **kwargs)
    else:
        log.debug("period boundary conduction set did not settle")
    out.hint = hint
    return out


def run_periodic_steady_state(config: ConverterConfig, op: OperatingPoint | None = None,
                              duty_ma: float | None = None, strict: bool = True,
                              x0: np.ndarray | None = None, tol: float = 1e-10,
                              samples_per_period: int = 4096,
                              warm: OracleSolution | None = None) -> OracleSolution:
    """Periodic steady state at a main-switch conduction duty.

    The gate turn-off instant is adjusted until the measured conduction
    duty of M_a (from the instant it starts conducting to its gate
    turn-off) equals ``duty_ma``.  ``warm`` seeds the state, Jacobian and
    gate timing from a nearby solution.
    """
    if op is not None:
        config = op.apply(config)
        duty_ma = op.duty_ma
    if duty_ma is None:
        raise ValueError("a duty is required")
    t_s = config.t_s
    t_start = config.dead_time
    jac, cset = None, frozenset()
    if warm is not None and warm.config.m_stages == config.m_stages \
            and warm.config.n_legs == config.n_legs:
        x0 = warm.x0 if x0 is None else x0
        t_start = warm.t_off_a - warm.duty_ma * warm.config.t_s
        jac, cset = warm.jacobian, warm.conducting0
    sim = out = None
    for _ in range(20):
        t_off = duty_ma * t_s + t_start
        if not (config.dead_time < t_off < t_s - 2 * config.dead_time):
            raise NonConvergenceError(
                f"duty {duty_ma} leaves no room for the gate schedule at this operating point")
        sim = Simulator(config, t_off, strict=strict)
        cold = x0 is None
        if cold:
            x0 = initial_guess(config, duty_ma, sim.net)
        out = shoot_consistent(sim, x0, cset, tol=tol, jacobian=jac,
                               warmup=30 if cold else 0)
        x0, cset, jac = out.x, out.hint, out.jacobian
        rec = sim.run(x0, cset)
        t_new = rec.t_conduct_ma.get(0, config.dead_time)
        done = abs(t_new - t_start) < 1e-6 * t_s
        t_start = t_new
        if done:
            break
    else:
        raise NonConvergenceError("gate timing for the requested duty did not settle")
    if abs(t_new - (sim.t_off_a - duty_ma * t_s)) > 1e-6 * t_s:
        # one more pass so the reported duty is exact at the final timing
        sim = Simulator(config, duty_ma * t_s + t_new, strict=strict)
        out = shoot_consistent(sim, x0, cset, tol=tol, jacobian=jac)
    sol = measure(sim, out, samples_per_period)
    if strict:
        check_sequence(sol)
    return sol


def run_gate_schedule(config: ConverterConfig, t_off_a: float, strict: bool = True,
                      x0=None, tol: float = 1e-10, samples_per_period: int = 4096,
                      warm: OracleSolution | None = None) -> OracleSolution:
    """Periodic steady state for a fixed M_a gate turn-off instant."""
    sim = Simulator(config, t_off_a, strict=strict)
    jac, cset = None, frozenset()
    if warm is not None:
        x0 = warm.x0 if x0 is None else x0
        jac, cset = warm.jacobian, warm.conducting0
    cold = x0 is None
    if cold:
        x0 = initial_guess(config, (t_off_a - config.dead_time) / config.t_s, sim.net)
    out = shoot_consistent(sim, x0, cset, tol=tol, jacobian=jac, warmup=30 if cold else 0)
    sol = measure(sim, out, samples_per_period)
    if strict:
        check_sequence(sol)
    return sol


def check_sequence(sol: OracleSolution):
    order = [8, 1, 2, 3, 4, 5, 6, 7]
    for leg, seq in enumerate(sol.sequence):
        if 0 in seq:
            raise ModeError(f"leg {leg}: device combination outside the CCM sequence: {seq}")
        pos = [order.index(s) for s in seq]
        if any(b < a for a, b in zip(pos, pos[1:])):
            raise ModeError(f"leg {leg}: state order {seq} departs from the CCM sequence")


def measure(sim: Simulator, shot: ShootResult, samples_per_period=4096) -> OracleSolution:
    """Record one converged period and measure averages, ripples and
    per-state dwell times."""
    cfg = sim.config
    x0, cset = shot.x, shot.hint
    net, lay = sim.net, sim.lay
    rec = sim.run(x0, cset, record=True)
    t_s = sim.t_s
    size = lay.size
    n_dev = len(net.devices)

    dev_charge = np.zeros(n_dev)
    x_int = np.zeros(size)
    sample_t, sample_x, sample_state = [], [], []
    dt_sample = t_s / samples_per_period
    state_time = [dict() for _ in range(net.n)]
    for seg in rec.segments:
        topo = net.topology(seg.conducting)
        dt = seg.t1 - seg.t0
        _, integ = topo.advance_with_integral(seg.x0, dt, sim.v_in)
        x_int += integ
        dev_charge += topo.current[:, :-1] @ integ + topo.current[:, -1] * sim.v_in * dt
        k = max(1, int(math.ceil(dt / dt_sample)))
        ts = np.linspace(0.0, dt, k + 1)
        phi, gam = topo.propagator(dt / k)
        x = seg.x0
        states = [sim.classify(seg.conducting, leg) for leg in range(net.n)]
        for leg in range(net.n):
            state_time[leg][states[leg]] = state_time[leg].get(states[leg], 0.0) + dt
        for j, tt in enumerate(ts):
            if j:
                x = phi @ x + gam * sim.v_in
            sample_t.append(seg.t0 + tt)
            sample_x.append(x)
            sample_state.append(states)
    sample_t = np.array(sample_t)
    sample_x = np.array(sample_x)
    sample_state = np.array(sample_state)
    x_avg = x_int / t_s

    v_out_avg = sum(x_avg[lay.v_cout(j)] for j in range(1, cfg.m_stages + 1))
    i_out = v_out_avg / cfg.r_load
    avg = {"x": x_avg, "v_out": v_out_avg, "i_out": i_out}
    diode_avg = {}
    for i, d in enumerate(net.devices):
        diode_avg[(d.leg, d.name)] = dev_charge[i] / t_s
    avg["device_current"] = diode_avg
    # inductor voltages from the exact average of each topology's derivative
    dx_avg = (rec.x_end - x0) / t_s
    avg["dx"] = dx_avg
    avg["v_la"] = {leg: cfg.l_a * dx_avg[lay.i_la(leg)] for leg in range(net.n)}
    avg["v_lra"] = {leg: cfg.l_ra * dx_avg[lay.i_lra(leg)] for leg in range(net.n)}
    cap_current = {}
    for idx, _, _, c in net.caps:
        cap_current[idx] = c * dx_avg[idx]
    avg["cap_current"] = cap_current
    avg["v_cra"] = {leg: x_avg[lay.v_cra(leg)] for leg in range(net.n)}
    avg["v_cc"] = {leg: x_avg[lay.v_cc(leg)] for leg in range(net.n)}
    p_in = cfg.v_in * sum(x_avg[lay.i_la(leg)] for leg in range(net.n))
    # load power from the sampled output voltage (trapezoid) for the ripple term
    vout_t = sum(sample_x[:, lay.v_cout(j)] for j in range(1, cfg.m_stages + 1))
    p_out = np.trapezoid(vout_t ** 2, sample_t) / t_s / cfg.r_load
    avg["p_in"] = p_in
    avg["p_out"] = p_out

    ripples = {}
    for idx, _, _, _ in net.caps:
        ripples[idx] = float(sample_x[:, idx].max() - sample_x[:, idx].min())

    sequence = []
    for leg in range(net.n):
        seq = []
        for s in sample_state[:, leg]:
            if not seq or seq[-1] != s:
                seq.append(int(s))
        # rotate so the leg's sequence starts at its own period origin
        sequence.append(seq)
    t_start = rec.t_conduct_ma.get(0, cfg.dead_time)
    sol = OracleSolution(
        config=cfg, duty_ma=(sim.t_off_a - t_start) / t_s, t_off_a=sim.t_off_a,
        x0=np.array(x0), conducting0=cset, record=rec,
        residual=float(np.linalg.norm(rec.x_end - x0) / np.linalg.norm(x0)),
        iterations=shot.iterations, jacobian=shot.jacobian,
        network=net, averages=avg, ripples=ripples,
        durations={leg: state_time[leg] for leg in range(net.n)},
        samples={"t": sample_t, "x": sample_x, "state": sample_state},
        sequence=[_cyclic_from_8(s) for s in sequence],
    )
    return sol


def _cyclic_from_8(seq):
    """Rotate a cyclic state sequence to start at state 8 and drop the
    wrap-around duplicate."""
    if len(seq) > 1 and seq[0] == seq[-1]:
        seq = seq[:-1]
    if 8 in seq:
        k = seq.index(8)
        seq = seq[k:] + seq[:k]
    return seq


# single-leg segment operations ---------------------------------------------------

EVENT_KINDS = frozenset({"diode_forward", "diode_current_zero", "v_cra_zero",
                         "v_cra_clamp", "ilra_equals_ila"})

# state that follows each (state, event kind) pair of the CCM sequence
_NEXT_STATE = {(1, "ilra_equals_ila"): 2, (1, "diode_current_zero"): 2,
               (2, "diode_forward"): 3, (3, "diode_current_zero"): 4,
               (3, "ilra_equals_ila"): 4, (5, "v_cra_clamp"): 6,
               (6, "diode_forward"): 7, (8, "v_cra_zero"): 1}


def _as_labels(system: LTISystem, x0):
    if hasattr(x0, "as_array"):
        return np.asarray(x0.as_array(), float), True
    return np.asarray(x0, float), False


def integrate_segment(system: LTISystem, x0, dt: float):
    """Exact state of ``system`` after ``dt`` seconds.

    ``x0`` is a :class:`~vmac.closed_form.StateVector` or an array in the
    system's label order; the result has the same type.
    """
    if dt < 0:
        raise ValueError(f"dt must be >= 0, got {dt!r}")
    x, wrapped = _as_labels(system, x0)
    if dt == 0:
        out = x.copy()
    else:
        xn = system.topology.advance(system.to_network(x), dt, system.v_in)
        out = system.from_network(xn)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite state after segment propagation")
    if wrapped:
        return type(x0).from_array(out, system.topology.net.config.m_stages)
    return out


def _condition_functions(system: LTISystem, x0: np.ndarray, conditions):
    """(kind, f) pairs; each f(x_network) is positive before its event."""
    topo = system.topology
    net = topo.net
    lay = net.layout
    v_in = system.v_in
    v_scale = max(abs(v_in), 1.0)
    funcs = []
    for kind in conditions:
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
    for i, dev in enumerate(net.devices):
        if dev.mosfet:
            continue
        if i in topo.conducting and "diode_current_zero" in conditions:
            funcs.append(("diode_current_zero",
                          lambda x, i=i: topo.device_currents(x, v_in)[i]))
        elif i not in topo.conducting and "diode_forward" in conditions:
            funcs.append(("diode_forward", lambda x, i=i: -topo.device_voltages(x)[i] / v_scale))
    x0n = system.to_network(x0)
    if "v_cra_zero" in conditions:
        funcs.append(("v_cra_zero", lambda x: x[lay.v_cra()] / v_scale))
    if "v_cra_clamp" in conditions:
        v_cc = x0n[lay.v_cc()]
        funcs.append(("v_cra_clamp", lambda x: (v_cc - x[lay.v_cra()]) / v_scale))
    if "ilra_equals_ila" in conditions:
        sign = 1.0 if x0n[lay.i_la()] >= x0n[lay.i_lra()] else -1.0
        funcs.append(("ilra_equals_ila",
                      lambda x: sign * (x[lay.i_la()] - x[lay.i_lra()])))
    return funcs


def detect_event(system: LTISystem, x0, horizon: float, conditions):
    """Earliest crossing of any of ``conditions`` within ``horizon``.

    Returns ``(event, state)``.  ``event`` is None when nothing fires before
    the horizon, and ``state`` is then the state at the horizon.  Conditions
    already satisfied at the start (value not positive) are ignored.
    """
    if horizon <= 0:
        raise ValueError(f"horizon must be > 0, got {horizon!r}")
    x, wrapped = _as_labels(system, x0)
    topo = system.topology
    xn0 = system.to_network(x)
    funcs = [(k, f) for k, f in _condition_functions(system, x, set(conditions))
             if f(xn0) > 0]

    def at(t):
        return topo.advance(xn0, t, system.v_in)

    step = 0.25 / max(topo.omega_max, 1.0 / horizon)
    n = max(8, int(math.ceil(horizon / step)))
    n = min(n, 200000)
    t_prev = 0.0
    best = None
    for k in range(1, n + 1):
        t = horizon * k / n
        xt = at(t)
        hits = [(kind, f) for kind, f in funcs if f(xt) <= 0]
        if hits:
            for kind, f in hits:
                te = brentq(lambda tt: f(at(tt)), t_prev, t, xtol=1e-14, rtol=1e-15)
                if best is None or te < best[0]:
                    best = (te, kind)
            break
        t_prev = t
    if best is None:
        out = system.from_network(at(horizon))
        if wrapped:
            out = type(x0).from_array(out, topo.net.config.m_stages)
        return None, out
    te, kind = best
    st = int(system.state)
    target = _NEXT_STATE.get((st, kind), st % 8 + 1)
    ev = Event(time=te, leg=0, kind=kind, state=int(OperationalState(target)))
    out = system.from_network(at(te))
    if wrapped:
        out = type(x0).from_array(out, topo.net.config.m_stages)
    return ev, out


def duty_for_output(config: ConverterConfig, v_out: float, lo: float | None = None,
                    hi: float = 0.85, step: float = 0.04, tol: float = 1e-5,
                    strict: bool = False) -> OracleSolution:
    """Simulated periodic solution whose output voltage equals ``v_out``.

    Duties are stepped up from ``lo`` with each solution seeding the next
    until the output passes ``v_out``; Brent's method then refines the
    bracket.  ``lo`` defaults to a little below the duty of the lossless
    gain ``m / (1 - D)``.  Raises :class:`NonConvergenceError` when no step
    brackets the target.
    """
    if lo is None:
        lo = min(max(0.02, 1.0 - config.m_stages * config.v_in / v_out - 0.1), hi)
    warm = prev = None
    duty = lo
    while duty <= hi + 1e-12:
        try:
            sol = run_periodic_steady_state(config, duty_ma=duty, strict=strict, warm=warm)
        except (RuntimeError, ValueError) as exc:
            log.debug("oracle failed at duty %.4f: %s", duty, exc)
            warm = prev = None
            duty += step
            continue
        if prev is not None and prev.v_out <= v_out <= sol.v_out:
            break
        warm = prev = sol
        duty += step
    else:
        raise NonConvergenceError(f"no duty in [{lo}, {hi}] brackets {v_out} V")
    seeds = {prev.duty_ma: prev, sol.duty_ma: sol}

    def f(d):
        near = min(seeds.values(), key=lambda s: abs(s.duty_ma - d))
        out = run_periodic_steady_state(config, duty_ma=d, strict=strict, warm=near)
        seeds[d] = out
        return out.v_out - v_out

    d = brentq(f, prev.duty_ma, sol.duty_ma, xtol=tol)
    return seeds[d] if d in seeds else run_periodic_steady_state(
        config, duty_ma=d, strict=strict, warm=min(seeds.values(), key=lambda s: abs(s.duty_ma - d)))
