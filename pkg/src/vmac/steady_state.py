"""Periodic steady state of one leg from the modal state solutions.

A period is the fixed sequence of the eight operational states.  The entry
state of state 1 (the instant C_ra is fully discharged), the clamp voltage
and the six event-defined durations are solved together so that

* every state ends on its defining event (diode turn-off at zero current,
  the next diode becoming forward biased, C_ra reaching the clamp voltage
  or zero),
* the main switch conducts for ``duty_ma * T_s`` and the period closes in
  ``T_s``,
* the state at the end of the period equals the state at its start.

The output capacitors are sources within each state and are advanced by
their charge between states, each leg carrying ``1/n`` of the load.
"""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, root

from .closed_form import (ModalCoefficients, ModelViolationError, StateVector,
                          clamp_node_voltage, common_node_voltage, inductor_charges,
                          inductor_currents, propagate, state_coefficients)
from .model import ConfigError, ConverterConfig, OperatingPoint, normalize
from .topology import state_diode

log = logging.getLogger(__name__)


class NonConvergenceError(RuntimeError):
    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)


@dataclass(frozen=True)
class IntervalDurations:
    """Durations of states 1..8 plus the named transition times.

    ``entries[i]`` is the state vector entering state ``i + 1``;
    ``entries[8]`` closes the period.
    """

    d: tuple
    T_s: float
    entries: tuple = field(default=(), repr=False)
    t_r_formula: float = float("nan")
    t_f_formula: float = float("nan")
    coeffs: tuple = field(default=(), repr=False)

    @property
    def t_s(self) -> float:
        return self.d[0]

    @property
    def t_r(self) -> float:
        return self.d[4]

    @property
    def t_f(self) -> float:
        return self.d[7]

    def __getattr__(self, name):
        if len(name) == 2 and name[0] == "d" and name[1].isdigit():
            return self.d[int(name[1]) - 1]
        raise AttributeError(name)

    @property
    def total(self) -> float:
        return float(sum(self.d))

    def starts(self) -> np.ndarray:
        """Entry time of every state relative to the start of state 1."""
        return np.concatenate([[0.0], np.cumsum(self.d)])


@dataclass
class SteadyStateSolution:
    """Solved period of one leg.

    ``v_cc`` is the clamp voltage from the charge balance of C_ra over the
    two transitions; ``v_cc_boundary`` is the clamp capacitor voltage at
    the start of state 1, which differs when C_c swings during the clamp
    interval.  ``unknowns`` holds the solver vector and can seed a nearby
    solve.
    """

    config: ConverterConfig
    duty_ma: float
    duty_mca: float
    boundary: StateVector
    durations: IntervalDurations
    coeffs: list
    v_cc: float
    v_cc_boundary: float
    v_cc_ideal: float
    v_cc_max: float
    t_x: float
    phase_offsets: tuple
    residual: float
    closure_error: float
    iterations: int
    unknowns: np.ndarray = field(default_factory=lambda: np.zeros(0))
    violations: tuple = ()

    @property
    def consistent(self) -> bool:
        """True when every state keeps its device pattern."""
        return not self.violations

    @property
    def entries(self):
        return self.durations.entries

    @property
    def v_out(self) -> float:
        """Output voltage averaged over the period."""
        return float(sum(self.averages()["v_cout"]))

    @property
    def i_out(self) -> float:
        return self.v_out / self.config.r_load

    def waveform(self, t: float) -> StateVector:
        """Leg state at ``t`` seconds after the start of state 1."""
        t = t % self.config.t_s
        starts = self.durations.starts()
        k = int(np.clip(np.searchsorted(starts, t, side="right") - 1, 0, 7))
        return propagate(k + 1, self.config, self.entries[k], t - starts[k], self.coeffs[k])

    def state_at(self, t: float) -> int:
        t = t % self.config.t_s
        starts = self.durations.starts()
        return int(np.clip(np.searchsorted(starts, t, side="right") - 1, 0, 7)) + 1

    def averages(self) -> dict:
        """Exact period averages from the segment integrals.

        Keys: ``i_la``, ``i_lra``, ``v_cra``, ``v_la``, ``v_lra`` and
        ``diode`` (average current of every multiplier diode of this leg),
        plus ``v_cout`` (per capacitor, sampled at segment boundaries).
        """
        cfg = self.config
        t_s = cfg.t_s
        q_la = q_lra = vcra = 0.0
        diode = {k: 0.0 for k in range(1, 2 * cfg.m_stages)}
        vcout = np.zeros(cfg.m_stages)
        for k in range(8):
            st, e, co, dt = k + 1, self.entries[k], self.coeffs[k], self.durations.d[k]
            a, b = inductor_charges(co, dt)
            q_la += a
            q_lra += b
            if st in (5, 6, 7, 8):
                vcra += e.v_cra * dt + co.inv_c12 * _double_integral(co, dt)
            dnum = state_diode(st, cfg.m_stages)
            if dnum is not None:
                diode[dnum] += (a - b) if dnum % 2 else (b - a)
            ex = self.entries[k + 1]
            vcout += 0.5 * (np.array(e.v_cout) + np.array(ex.v_cout)) * dt
        first, last = self.entries[0], self.entries[8]
        return {
            "i_la": q_la / t_s, "i_lra": q_lra / t_s, "v_cra": vcra / t_s,
            "v_la": cfg.l_a * (last.i_la - first.i_la) / t_s,
            "v_lra": cfg.l_ra * (last.i_lra - first.i_lra) / t_s,
            "diode": {k: v / t_s for k, v in diode.items()},
            "v_cout": vcout / t_s,
        }


def _double_integral(co: ModalCoefficients, dt: float, n: int = 64) -> float:
    """Integral over ``[0, dt]`` of the running charge of i_Lra."""
    # Gauss-Legendre on the smooth running integral
    x, w = np.polynomial.legendre.leggauss(n)
    t = 0.5 * dt * (x + 1.0)
    vals = np.array([inductor_charges(co, float(tt))[1] for tt in t])
    return float(0.5 * dt * (w @ vals))


# event functions --------------------------------------------------------

def _chain_forward(target: int, state: int, e: StateVector) -> float:
    v_x = common_node_voltage(state, e)
    j = (target + 1) // 2
    v_o = sum(e.v_cout[:j])
    if target % 2:
        v_n = v_x + sum(e.v_ca[:j - 1])
        return v_n - v_o
    v_n = v_x + sum(e.v_ca[:j])
    return v_o - v_n


def _next_diode(state: int, m: int) -> int:
    return 2 if state == 2 else 3


def _end_condition(state: int, cfg: ConverterConfig, entry: StateVector, co, tau: float,
                   v_cc: float) -> float:
    """Residual of the event that ends ``state``; zero at the event."""
    m = cfg.m_stages
    if state == 1:
        ia, ir = inductor_currents(1, co, entry, tau)
        return (ia - ir) / _i_scale(cfg)
    if state in (2, 6):
        ex = propagate(state, cfg, entry, tau, co, load=False)
        return _chain_forward(_next_diode(state, m), state, ex) / cfg.v_in
    if state == 3:
        ia, ir = inductor_currents(3, co, entry, tau)
        return (ir - ia) / _i_scale(cfg)
    if state == 5:
        return (clamp_node_voltage(5, co, entry, tau) - v_cc) / cfg.v_in
    if state == 8:
        return clamp_node_voltage(8, co, entry, tau) / cfg.v_in
    raise ValueError(state)


def _i_scale(cfg: ConverterConfig) -> float:
    return cfg.v_in / normalize(cfg).z_r


def _first_event(fun, horizon: float, step: float, sign: float):
    """First time in ``(0, horizon]`` where ``sign * fun`` crosses from
    positive to non-positive, or None."""
    t0, f0 = 0.0, sign * fun(0.0)
    n = max(4, int(math.ceil(horizon / step)))
    h = horizon / n
    for k in range(1, n + 1):
        t1 = k * h
        f1 = sign * fun(t1)
        if f0 > 0 >= f1:
            return brentq(lambda t: sign * fun(t), t0, t1, xtol=1e-15, rtol=1e-14)
        t0, f0 = t1, f1
    return None


def _step(co: ModalCoefficients) -> float:
    w = co.omega1 if co.omega1 < 1e8 else max(co.omega2, 1.0)
    return 0.3 / max(w, 1e3)


# sequential pass ----------------------------------------------------------

def rise_time_formula(config: ConverterConfig, i_lra5: float, v_cc: float) -> tuple[float, float, float]:
    """``(t_r, theta_35, gamma_5)`` of the all-off state with C_p neglected."""
    p = normalize(config)
    lam = p.lambda_l
    root_l = math.sqrt(lam / (1 + lam))
    w15 = p.omega_r * root_l
    th = math.atan2(1.0, config.v_in * root_l / (i_lra5 * p.z_r)) if i_lra5 else float("nan")
    gam = math.cos(th) - root_l * v_cc * math.sin(th) / (i_lra5 * p.z_r)
    if not -1.0 <= gam <= 1.0:
        raise ModelViolationError(
            f"C_ra cannot charge to the clamp voltage: gamma_5 = {gam:.4f} outside [-1, 1]")
    return (math.acos(gam) - th) / w15, th, gam


def fall_time_formula(config: ConverterConfig, i_lra8: float, v_cra8: float,
                      v_cout1: float) -> tuple[float, float, float]:
    """``(t_f, theta_38, gamma_8)`` of the first-diode-only state."""
    p = normalize(config)
    th = math.atan2(1.0, (v_cout1 - v_cra8) / (i_lra8 * p.z_r)) if i_lra8 else float("nan")
    gam = math.cos(th) + v_cra8 * math.sin(th) / (i_lra8 * p.z_r)
    if not -1.0 <= gam <= 1.0:
        raise ModelViolationError(
            f"C_ra cannot discharge to zero: gamma_8 = {gam:.4f} outside [-1, 1]")
    t = (math.acos(gam) - th) / p.omega_r
    if t < 0:
        t += 2 * math.pi / p.omega_r
    return t, th, gam


def interval_durations(config: ConverterConfig, entry: StateVector, v_cc: float,
                       duty_ma: float) -> IntervalDurations:
    """Propagate one period from ``entry`` (start of state 1) by events.

    The main switch conducts for ``duty_ma * T_s``.  The clamp switch
    turn-off is placed so the discharge of C_ra ends exactly one period
    after ``entry``.
    """
    cfg = config
    t_s_period = cfg.t_s
    if not 0 < duty_ma < 1:
        raise ConfigError("duty_ma must lie in (0, 1)")
    if entry.i_la <= entry.i_lra:
        raise ModelViolationError("state 1 needs i_La > i_Lra at entry (first diode conducting)")
    d = [0.0] * 8
    entries = [entry]
    coeffs = []
    e = entry
    t_on = duty_ma * t_s_period
    # sign of each end condition before its event
    before = {1: 1.0, 2: -1.0, 3: 1.0}
    for st in (1, 2, 3):
        co = state_coefficients(st, cfg, e)
        coeffs.append(co)
        horizon = t_on - sum(d)
        if horizon <= 0:
            raise ModelViolationError(f"main switch turns off before state {st} ends")
        t_ev = _first_event(lambda t: _end_condition(st, cfg, e, co, t, v_cc),
                            horizon, _step(co), before[st])
        if t_ev is None:
            raise ModelViolationError(f"state {st} does not end before the main switch turns off")
        d[st - 1] = t_ev
        e = propagate(st, cfg, e, t_ev, co)
        entries.append(e)
    # state 4 until the gate turn-off
    co = state_coefficients(4, cfg, e)
    coeffs.append(co)
    d[3] = t_on - sum(d[:3])
    e = propagate(4, cfg, e, d[3], co)
    entries.append(e)
    # state 5: C_ra charges to the clamp voltage
    e = e.replace(v_cra=0.0)
    co = state_coefficients(5, cfg, e)
    coeffs.append(co)
    t_r_formula, _, _ = rise_time_formula(cfg, e.i_lra, v_cc)
    t_ev = _first_event(lambda t: _end_condition(5, cfg, e, co, t, v_cc),
                        min(4 * t_r_formula + 1e-9, t_s_period), t_r_formula / 16 + 1e-12, -1.0)
    if t_ev is None:
        raise ModelViolationError("C_ra does not reach the clamp voltage")
    d[4] = t_ev
    e = propagate(5, cfg, e, t_ev, co)
    e = e.replace(v_cra=v_cc, v_cc=v_cc)
    entries.append(e)
    # state 6 until the next diode takes over
    co6 = state_coefficients(6, cfg, e)
    coeffs.append(co6)
    e6 = e
    remaining = t_s_period - sum(d[:5])
    t_ev = _first_event(lambda t: _end_condition(6, cfg, e6, co6, t, v_cc),
                        remaining, _step(co6), -1.0)
    if t_ev is None:
        raise ModelViolationError("the clamp-stage diode never hands over within the period")
    d[5] = t_ev
    e7 = propagate(6, cfg, e6, t_ev, co6)
    entries.append(e7)
    co7 = state_coefficients(7, cfg, e7)
    coeffs.append(co7)

    def tail(d7):
        e8 = propagate(7, cfg, e7, d7, co7)
        e8v = e8
        co8 = state_coefficients(8, cfg, e8v)
        t_f, _, _ = fall_time_formula(cfg, e8v.i_lra, e8v.v_cra, e8v.v_cout[0])
        return e8v, co8, t_f

    used = sum(d[:6])

    def closure(d7):
        try:
            _, _, t_f = tail(d7)
        except ModelViolationError:
            return float("nan")
        return (used + d7 + t_f - t_s_period) / t_s_period

    d7 = _solve_tail(closure, t_s_period - used)
    d[6] = d7
    e8, co8, t_f = tail(d7)
    entries.append(e8)
    coeffs.append(co8)
    d[7] = t_f
    e9 = propagate(8, cfg, e8, t_f, co8)
    entries.append(e9)
    return IntervalDurations(tuple(d), t_s_period, tuple(entries), t_r_formula, t_f,
                             tuple(coeffs))


def _solve_tail(closure, span):
    grid = np.linspace(0.0, span, 201)
    vals = np.array([closure(x) for x in grid])
    for k in range(len(grid) - 1):
        a, b = vals[k], vals[k + 1]
        if np.isfinite(a) and np.isfinite(b) and a <= 0 <= b:
            return brentq(closure, grid[k], grid[k + 1], xtol=1e-15)
    raise ModelViolationError("no clamp-switch turn-off closes the period "
                              "(C_ra cannot discharge to zero)")


# clamp voltage ----------------------------------------------------------------

def clamp_voltage(config: ConverterConfig, durations: IntervalDurations):
    """``(v_cc, v_cc_max, t_x)`` from a propagated period.

    ``v_cc`` uses the single-mode transitions with C_ra's variation in the
    clamp states neglected; ``t_x`` is the zero crossing of i_Lra in the
    last-diode clamp state, where the clamp capacitor peaks at ``v_cc_max``.
    """
    cfg = config
    p = normalize(cfg)
    lam = p.lambda_l
    w15 = p.omega_r * math.sqrt(lam / (1 + lam))
    w18 = p.omega_r
    f_s = cfg.f_s
    e5, e6, e8 = durations.entries[4], durations.entries[5], durations.entries[7]
    t_r, t_f = durations.t_r, durations.t_f
    duty_mca = (durations.d6 + durations.d7) / cfg.t_s
    v_in = cfg.v_in

    i5 = e5.i_lra
    th5 = math.atan2(1.0, v_in * math.sqrt(lam / (1 + lam)) / (i5 * p.z_r))
    i8 = e8.i_lra
    th8 = math.atan2(1.0, (e8.v_cout[0] - e8.v_cra) / (i8 * p.z_r))

    def part(i, w, th, t):
        return i / (w * cfg.c_ra) * (t / math.tan(th)
                                      - (math.sin(w * t + th) / math.sin(th) - 1.0) / w)

    v_cc = (v_in - f_s * (part(i5, w15, th5, t_r) + part(i8, w18, th8, t_f))) \
        / (duty_mca + f_s * t_f)

    co6 = durations.coeffs[5] if durations.coeffs else state_coefficients(6, cfg, e6)
    d6 = durations.d6
    t_x = _first_event(lambda t: inductor_currents(6, co6, e6, t)[1] / _i_scale(cfg),
                       d6, _step(co6), 1.0) if d6 > 0 else None
    if t_x is None:
        warnings.warn("i_Lra does not reverse in the clamp state; peak taken at its end",
                      RuntimeWarning, stacklevel=2)
        t_x = d6
    v_cc_max = clamp_node_voltage(6, co6, e6, t_x)
    return v_cc, v_cc_max, t_x


def ideal_clamp_voltage(v_in: float, duty_ma: float) -> float:
    """Clamp voltage when both transitions are instantaneous."""
    return v_in / (1.0 - duty_ma)


# periodic solve ---------------------------------------------------------------

def _unpack(z, m):
    i_la, i_lra = z[0], z[1]
    v_ca = tuple(z[2:1 + m])
    v_cout = tuple(z[1 + m:1 + 2 * m])
    v_cc = z[1 + 2 * m]
    return i_la, i_lra, v_ca, v_cout, v_cc


def _boundary(z, m):
    i_la, i_lra, v_ca, v_cout, v_cc = _unpack(z, m)
    v_cp = sum(v_cout) - v_cout[0]
    return StateVector(i_la, i_lra, 0.0, v_cc, v_ca, v_cout, v_cp), v_cc


def _cycle(cfg: ConverterConfig, duty: float, z: np.ndarray, times: np.ndarray):
    """Propagate a period with the free durations ``times``
    (d2, d3, d5, d6, d7, d8); return entries, coeffs and the residuals."""
    m = cfg.m_stages
    e, v_cc = _boundary(z, m)
    t_on = duty * cfg.t_s
    d = [0.0] * 8
    co1 = state_coefficients(1, cfg, e)
    # state 1 ends when the first diode current reaches zero (straight lines)
    s1 = (e.v_cout[0] / cfg.l_ra) - (cfg.v_in - e.v_cout[0]) / cfg.l_a
    d[0] = (e.i_la - e.i_lra) / s1
    d[1], d[2], d[4], d[5], d[6], d[7] = times
    d[3] = t_on - d[0] - d[1] - d[2]
    entries, coeffs = [e], [co1]
    res = []
    for k in range(8):
        st = k + 1
        co = coeffs[k]
        if st in (2, 3, 5, 6, 8):
            res.append(_end_condition(st, cfg, e, co, d[k], v_cc))
        e = propagate(st, cfg, e, d[k], co)
        if st == 4:
            e = e.replace(v_cra=0.0)
        if st == 5:
            e = e.replace(v_cc=e.v_cra)
        entries.append(e)
        if st < 8:
            coeffs.append(state_coefficients(st + 1, cfg, e))
    res.append((sum(d) - cfg.t_s) / cfg.t_s)
    first = entries[0]
    i_sc = _i_scale(cfg)
    res += [(e.i_la - first.i_la) / i_sc, (e.i_lra - first.i_lra) / i_sc]
    res += [(a - b) / cfg.v_in for a, b in zip(e.v_ca, first.v_ca)]
    res += [(a - b) / cfg.v_in * cfg.c_out / cfg.c_a for a, b in zip(e.v_cout, first.v_cout)]
    res.append((e.v_cc - v_cc) / cfg.v_in)
    return d, entries, coeffs, np.array(res)


def initial_state(config: ConverterConfig, duty_ma: float) -> tuple[StateVector, float]:
    """Boundary guess from the ideal clamp voltage and an even output split."""
    cfg = config
    m, n = cfg.m_stages, cfg.n_legs
    v_cc = ideal_clamp_voltage(cfg.v_in, duty_ma)
    v_out = m * v_cc
    i_in = v_out ** 2 / cfg.r_load / cfg.v_in / n
    ripple = 0.5 * cfg.v_in * duty_ma * cfg.t_s / cfg.l_a
    v_stage = v_out / m
    e = StateVector(i_in + ripple, -i_in - ripple, 0.0, v_cc,
                    tuple([v_stage] * (m - 1)), tuple([v_stage] * m), (m - 1) * v_stage)
    return e, v_cc


def _pack(e: StateVector, v_cc: float) -> np.ndarray:
    return np.array([e.i_la, e.i_lra, *e.v_ca, *e.v_cout, v_cc])


def _n_boundary(m: int) -> int:
    return 2 * m + 2


def oracle_unknowns(config: ConverterConfig, sol) -> np.ndarray:
    """Unknown vector read off an oracle period of the same converter.

    The boundary is the oracle state where M_a starts conducting; the
    durations come from the diode hand-over instants of leg 0.  Where the
    oracle overlaps diodes the first turn-on is used.
    """
    cfg = config
    t_s = cfg.t_s
    devices = sol.network.devices
    lay = sol.network.layout
    t1 = sol.record.t_conduct_ma.get(0, cfg.dead_time)

    def names(seg):
        return {devices[i].name for i in seg.conducting if devices[i].leg == 0}

    def first(pred, after, default):
        for seg in sol.record.segments:
            if seg.t0 >= after - 1e-15 and pred(names(seg)):
                return seg.t0
        return default

    t_d2 = first(lambda s: "D2" in s, t1, t1 + 0.3 * t_s)
    t_d2_off = first(lambda s: "D2" not in s, t_d2, t_d2 + 0.1 * t_s)
    t_off = sol.t_off_a
    t_mca = first(lambda s: "Mca" in s, t_off, t_off + cfg.dead_time)
    t_d3 = first(lambda s: "D3" in s, t_mca, t_mca + 0.1 * t_s)
    times = [t_d2 - t1, t_d2_off - t_d2, t_mca - t_off, t_d3 - t_mca, t_s - t_d3, t1]
    x = sol.state_at(t1)
    m = cfg.m_stages
    i_la = x[lay.i_la(0)]
    i_lra = min(x[lay.i_lra(0)], i_la - 1e-3 * _i_scale(cfg))
    z = [i_la, i_lra, *(x[lay.v_ca(j, 0)] for j in range(1, m)),
         *(x[lay.v_cout(j)] for j in range(1, m + 1)), x[lay.v_cc(0)]]
    return np.concatenate([np.array(z, float), np.array(times) / t_s])


def _residual_fun(cfg: ConverterConfig, duty: float):
    nz = _n_boundary(cfg.m_stages)

    def fun(u):
        try:
            _, _, _, r = _cycle(cfg, duty, u[:nz], u[nz:] * cfg.t_s)
        except (ModelViolationError, ValueError, ZeroDivisionError, FloatingPointError):
            return np.full(len(u), 1e3)
        if not np.all(np.isfinite(r)):
            return np.full(len(u), 1e3)
        return r
    return fun


def _newton(cfg: ConverterConfig, duty: float, u0: np.ndarray, maxfev: int = 3000):
    fun = _residual_fun(cfg, duty)
    out = root(fun, u0, method="hybr", options={"xtol": 1e-13, "maxfev": maxfev})
    r = fun(out.x)
    return out.x, float(np.linalg.norm(r)), int(out.nfev)


# Converged orbits, normalized to V_in = 1 V, keyed by (m, n).  Solutions
# scale linearly with V_in at fixed duty and load, so one entry serves every
# input voltage.
_ORBITS: dict = {}
# (load resistance in units of Z_r, duty) tried in turn for the first orbit
ANCHORS = ((2.5, 0.5), (2.5, 0.6), (2.5, 0.7), (5.0, 0.5), (1.5, 0.6), (10.0, 0.5))
# seconds spent on anchor candidates before giving up
ANCHOR_BUDGET = 60.0
# components for which no anchor closed
_NO_ANCHOR: set = set()
_STEP_DUTY = 0.02
_STEP_LOG = math.log(1.5)
# parameters the continuation may vary; all are positive
_SCALED = ("l_a", "l_ra", "c_ra", "c_c", "c_a", "c_out", "r_load", "f_s", "c_p", "dead_time")


def _components(cfg: ConverterConfig) -> ConverterConfig:
    return cfg.with_(v_in=1.0, r_load=1.0)


def _unit(cfg: ConverterConfig) -> ConverterConfig:
    return cfg.with_(v_in=1.0)


def _to_unit(cfg: ConverterConfig, u: np.ndarray) -> np.ndarray:
    nz = _n_boundary(cfg.m_stages)
    out = np.array(u, float)
    out[:nz] /= cfg.v_in
    return out


def _from_unit(cfg: ConverterConfig, u: np.ndarray) -> np.ndarray:
    nz = _n_boundary(cfg.m_stages)
    out = np.array(u, float)
    out[:nz] *= cfg.v_in
    return out


def _remember(cfg: ConverterConfig, duty: float, u: np.ndarray):
    orbits = _ORBITS.setdefault((cfg.m_stages, cfg.n_legs), [])
    orbits.append((_unit(cfg), duty, _to_unit(cfg, u)))
    if len(orbits) > 256:
        del orbits[0]


def _distance(c0: ConverterConfig, d0: float, c1: ConverterConfig, d1: float) -> float:
    """Continuation steps needed between two operating points."""
    far = abs(d1 - d0) / _STEP_DUTY
    for name in _SCALED:
        far = max(far, abs(math.log(getattr(c1, name) / getattr(c0, name))) / _STEP_LOG)
    return far


def _anchor(cfg: ConverterConfig):
    """A first orbit for these components, seeded from the oracle.

    Heavy-load candidates are tried first; the first one whose oracle
    period leads Newton to a closed orbit is kept.
    """
    from .oracle import run_periodic_steady_state
    key = _components(cfg)
    if key in _NO_ANCHOR:
        raise NonConvergenceError("no anchor orbit for these components (cached failure)")
    z_r = normalize(cfg).z_r
    t0 = time.perf_counter()
    for load, duty in ANCHORS:
        if time.perf_counter() - t0 > ANCHOR_BUDGET:
            break
        acfg = cfg.with_(r_load=load * z_r)
        try:
            sol = run_periodic_steady_state(acfg, duty_ma=duty, strict=False)
        except (RuntimeError, ValueError):
            continue
        u, r, _ = _newton(acfg, duty, oracle_unknowns(acfg, sol), maxfev=1500)
        if r < 1e-9:
            _remember(acfg, duty, u)
            return _unit(acfg), duty, _to_unit(acfg, u)
    _NO_ANCHOR.add(key)
    raise NonConvergenceError("no oracle-seeded anchor orbit closed")


def continue_orbit(cfg: ConverterConfig, duty: float, start_cfg: ConverterConfig,
                   start_duty: float, start_u: np.ndarray, min_step: float = 1.0 / 64):
    """Follow a closed orbit from ``(start_cfg, start_duty)`` to ``(cfg, duty)``.

    Component values and the load move geometrically and the duty linearly,
    with step halving on failure.  Returns the unknown vector at the target.
    """
    if (start_cfg.m_stages, start_cfg.n_legs) != (cfg.m_stages, cfg.n_legs):
        raise ConfigError("continuation cannot change the number of stages or legs")
    n = max(1, int(math.ceil(_distance(start_cfg, start_duty, cfg, duty))))
    u = _to_unit(start_cfg, start_u)
    s, h = 0.0, 1.0 / n

    def at(frac):
        vals = {name: getattr(start_cfg, name) ** (1 - frac) * getattr(cfg, name) ** frac
                for name in _SCALED}
        vals["v_in"] = cfg.v_in
        return cfg.with_(**vals), start_duty + frac * (duty - start_duty)

    u = _from_unit(cfg, u)
    while s < 1.0:
        h = min(h, 1.0 - s)
        c, d = at(s + h)
        if s + h >= 1.0:
            c, d = cfg, duty
        u1, r, _ = _newton(c, d, u, maxfev=400)
        if r < 1e-9:
            u, s = u1, s + h
            h = min(2 * h, 1.0 / n)
        else:
            h /= 2
            if h < min_step / n:
                raise NonConvergenceError(
                    f"continuation stalled at load {c.r_load:.4g} ohm, duty {d:.4f} "
                    f"(residual {r:.2e})")
    return u


def _nearest(cfg: ConverterConfig, duty: float):
    orbits = _ORBITS.get((cfg.m_stages, cfg.n_legs))
    if not orbits:
        return None
    return min(orbits, key=lambda o: _distance(o[0], o[1], cfg, duty))


def clear_orbit_cache():
    """Forget the cached orbits used as continuation starts."""
    _ORBITS.clear()
    _NO_ANCHOR.clear()


def solve_steady_state(config: ConverterConfig, op: OperatingPoint | float,
                       tol: float = 1e-11, seed=None, strict: bool = True,
                       use_oracle: bool = True) -> SteadyStateSolution:
    """Periodic solution of the eight-state sequence at ``op``.

    ``op`` is an :class:`OperatingPoint` or a bare main-switch duty.  The
    unknowns are the state-1 entry (inductor currents, pump and output
    capacitor voltages), the clamp voltage and the six event-defined
    durations.  All conditions are solved together by a hybrid Newton
    method.  Starting points are tried in order: ``seed`` (a solution or an
    unknown vector) or else continuation from the nearest cached orbit of
    the same components, then an oracle period at ``op`` (if
    ``use_oracle``).

    With ``strict`` the device pattern of every state is checked and a
    :class:`ModelViolationError` raised if it fails; otherwise the
    violations are listed in the result.  Raises
    :class:`NonConvergenceError` when no start converges.
    """
    if isinstance(op, OperatingPoint):
        cfg = op.apply(config)
        duty = op.duty_ma
    else:
        cfg, duty = config, float(op)
        OperatingPoint.for_config(cfg, duty)
    if cfg.diode_drop != 0.0:
        raise ConfigError("the closed-form model assumes ideal diodes; diode_drop must be 0")
    tol = max(tol, 1e-13)
    history = []

    def attempt(u0):
        u, r, nfev = _newton(cfg, duty, u0)
        history.append(r)
        return (u, r, nfev) if r < max(tol, 1e-9) else None

    found = None
    if isinstance(seed, SteadyStateSolution):
        try:
            found = attempt(continue_orbit(cfg, duty, seed.config, seed.duty_ma, seed.unknowns))
        except (NonConvergenceError, ConfigError) as exc:
            log.debug("continuation from the seed failed: %s", exc)
    elif seed is not None:
        found = attempt(np.asarray(seed, float))
    if found is None and seed is None:
        start = _nearest(cfg, duty)
        try:
            if start is None and use_oracle:
                start = _anchor(cfg)
            if start is not None:
                c0, d0, u0 = start
                found = attempt(continue_orbit(cfg, duty, c0.with_(v_in=cfg.v_in), d0,
                                               _from_unit(cfg, u0)))
        except NonConvergenceError as exc:
            log.debug("continuation failed: %s", exc)
    if found is None and use_oracle:
        from .oracle import run_periodic_steady_state
        try:
            sol = run_periodic_steady_state(cfg, duty_ma=duty, strict=False)
            found = attempt(oracle_unknowns(cfg, sol))
        except (RuntimeError, ValueError) as exc:
            log.debug("oracle seed failed: %s", exc)
    if found is None:
        best = min(history) if history else float("nan")
        raise NonConvergenceError(
            f"closed-form period did not close at duty {duty} (best residual {best:.2e})",
            history)
    u, r, nfev = found
    _remember(cfg, duty, u)
    return _finish(cfg, duty, u, _n_boundary(cfg.m_stages), nfev, strict)


def _finish(cfg, duty, u, nz, nfev, strict) -> SteadyStateSolution:
    d, entries, coeffs, r = _cycle(cfg, duty, u[:nz], u[nz:] * cfg.t_s)
    problems = sequence_violations(cfg, d, entries, coeffs)
    if strict and problems:
        raise ModelViolationError(f"duty {duty}: " + "; ".join(problems))
    e8 = entries[7]
    try:
        t_f_formula = fall_time_formula(cfg, e8.i_lra, e8.v_cra, e8.v_cout[0])[0]
    except ModelViolationError:
        t_f_formula = float("nan")
    try:
        t_r_formula = rise_time_formula(cfg, entries[4].i_lra, entries[0].v_cc)[0]
    except ModelViolationError:
        t_r_formula = float("nan")
    dur = IntervalDurations(tuple(d), cfg.t_s, tuple(entries), t_r_formula, t_f_formula,
                            tuple(coeffs))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        try:
            v_cc, v_cc_max, t_x = clamp_voltage(cfg, dur)
        except (ValueError, ZeroDivisionError):
            v_cc = v_cc_max = t_x = float("nan")
    n = cfg.n_legs
    return SteadyStateSolution(
        config=cfg, duty_ma=duty, duty_mca=(d[5] + d[6]) / cfg.t_s,
        boundary=entries[0], durations=dur, coeffs=coeffs,
        v_cc=v_cc, v_cc_boundary=entries[0].v_cc,
        v_cc_ideal=ideal_clamp_voltage(cfg.v_in, duty), v_cc_max=v_cc_max, t_x=t_x,
        phase_offsets=tuple(2 * math.pi * k / n for k in range(n)),
        residual=float(np.linalg.norm(r)),
        closure_error=abs(sum(d) - cfg.t_s) / cfg.t_s, iterations=int(nfev),
        unknowns=np.array(u, float), violations=tuple(problems),
    )


def sequence_violations(cfg: ConverterConfig, d, entries, coeffs, samples: int = 64) -> list[str]:
    """Device-pattern problems of a solved period, empty when consistent.

    Durations must be non-negative, conducting diodes must carry forward
    current and C_ra must stay between 0 and the clamp voltage during the
    two transitions.
    """
    problems = []
    for k, dk in enumerate(d):
        if dk < -1e-12 * cfg.t_s:
            problems.append(f"state {k + 1} has negative duration {dk:.3e} s")
    if problems:
        return problems
    i_tol = 1e-6 * _i_scale(cfg)
    v_cc = entries[0].v_cc
    for k in range(8):
        st, e, co = k + 1, entries[k], coeffs[k]
        dnum = state_diode(st, cfg.m_stages)
        for tau in np.linspace(0.0, max(d[k], 0.0), samples)[1:-1]:
            ia, ir = inductor_currents(st, co, e, tau)
            if dnum is not None:
                cur = (ia - ir) if dnum % 2 else (ir - ia)
                if cur < -i_tol:
                    problems.append(f"state {st}: diode D{dnum} current reverses ({cur:.3e} A)")
                    break
            if st in (5, 8):
                v = clamp_node_voltage(st, co, e, tau)
                if not -1e-9 * cfg.v_in <= v <= v_cc * (1 + 1e-9):
                    problems.append(f"state {st}: C_ra leaves [0, V_Cc] early")
                    break
    return problems


def validate_sequence(cfg: ConverterConfig, d, entries, coeffs, samples: int = 64):
    """Raise :class:`ModelViolationError` on the first device-pattern problem."""
    problems = sequence_violations(cfg, d, entries, coeffs, samples)
    if problems:
        raise ModelViolationError(problems[0])


def duty_for_output(config: ConverterConfig, v_out: float, lo: float = 0.2, hi: float = 0.85,
                    tol: float = 1e-6, strict: bool = True) -> SteadyStateSolution:
    """Main-switch duty giving the requested output voltage.

    Scans ``[lo, hi]`` for a bracketing pair and refines it with Brent's
    method.
    """
    cache = {}

    def f(duty):
        if duty not in cache:
            cache[duty] = solve_steady_state(config, duty, strict=strict)
        return cache[duty].v_out - v_out

    grid = np.linspace(lo, hi, 14)
    prev = None
    for x in grid:
        try:
            fx = f(x)
        except (ModelViolationError, NonConvergenceError):
            prev = None
            continue
        if prev is not None and prev[1] <= 0 <= fx:
            duty = brentq(f, prev[0], x, xtol=tol)
            return cache[duty] if duty in cache else solve_steady_state(config, duty, strict=strict)
        prev = (x, fx)
    raise NonConvergenceError(f"no duty in [{lo}, {hi}] reaches {v_out} V")
