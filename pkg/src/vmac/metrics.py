"""Quantities derived from a solved period.

Output current and diode averages, voltage gain, capacitor ripples, the
soft-switching check of both switches and the device voltage stresses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .closed_form import ModelViolationError, inductor_charges, inductor_currents
from .model import ConverterConfig, OperatingPoint, normalize
from .steady_state import (NonConvergenceError, SteadyStateSolution, fall_time_formula,
                           rise_time_formula, solve_steady_state)
from .topology import state_diode


# output current -----------------------------------------------------------------

@dataclass(frozen=True)
class OutputCurrent:
    """Load current and the average current of every multiplier diode.

    ``i_out`` is ``n`` times the average current of the first diode.
    ``i_out_load`` is V_out/R_L from the averaged output voltage.
    ``diode`` maps diode index to its average current in one leg.
    """

    i_out: float
    i_out_load: float
    diode: dict
    n_legs: int = 2

    def spread(self) -> float:
        """Largest deviation of a diode average from ``i_out / n``, relative."""
        share = self.i_out / self.n_legs
        return max(abs(v - share) for v in self.diode.values()) / abs(share)


def output_current(ss: SteadyStateSolution, config: ConverterConfig | None = None) -> OutputCurrent:
    """Load current from the first-diode charge of every leg.

    The first diode only conducts while the inductor difference current
    feeds the bottom output capacitor directly, so its average per leg is
    the load current shared by ``n`` legs.
    """
    cfg = config or ss.config
    diode = ss.averages()["diode"]
    return OutputCurrent(i_out=cfg.n_legs * diode[1], i_out_load=ss.v_out / cfg.r_load,
                         diode=dict(diode), n_legs=cfg.n_legs)


# voltage gain -------------------------------------------------------------------

@dataclass(frozen=True)
class GainReport:
    m_gain: float
    bound: float
    v_cout_norm: tuple

    @property
    def within_bound(self) -> bool:
        return self.m_gain <= self.bound * (1 + 1e-12)


def gain_bound(m_stages: int, duty_ma: float) -> float:
    """Gain with lossless instantaneous transitions."""
    return m_stages / (1.0 - duty_ma)


def voltage_gain(ss: SteadyStateSolution, config: ConverterConfig | None = None) -> GainReport:
    """``M = R_L I_out / V_in`` with its upper bound and V_Coutk/V_out."""
    cfg = config or ss.config
    v_cout = ss.averages()["v_cout"]
    v_out = float(sum(v_cout))
    return GainReport(m_gain=cfg.r_load * (v_out / cfg.r_load) / cfg.v_in,
                      bound=gain_bound(cfg.m_stages, ss.duty_ma),
                      v_cout_norm=tuple(float(v / v_out) for v in v_cout))


# ripples ------------------------------------------------------------------------

@dataclass(frozen=True)
class RippleReport:
    """Peak-to-peak voltage ripple of every pump and output capacitor.

    ``t_y`` and ``t_z`` bound the interval in which the bottom output
    capacitor discharges, measured from the start of state 1 of the first
    leg.  ``fallback`` is True when no zero crossing was found in state 1
    and ``t_y`` was taken at the end of state 1.
    """

    dv_ca: tuple
    dv_cout: tuple
    t_y: float
    t_z: float
    fallback: bool = False

    def __getattr__(self, name):
        for prefix, values in (("dv_ca", "dv_ca"), ("dv_cout", "dv_cout")):
            rest = name[len(prefix):]
            if name.startswith(prefix) and rest.isdigit():
                vals = object.__getattribute__(self, values)
                if 1 <= int(rest) <= len(vals):
                    return vals[int(rest) - 1]
        raise AttributeError(name)


def _segments(ss: SteadyStateSolution):
    starts = ss.durations.starts()
    m = ss.config.m_stages
    for k in range(8):
        st = k + 1
        dnum = state_diode(st, m)
        node = m if dnum is None else (dnum + 1) // 2
        yield st, starts[k], ss.durations.d[k], ss.entries[k], ss.coeffs[k], node


class _NodeCharge:
    """Charge delivered by one leg into output node ``k`` or above.

    The inductor difference current leaves the common node through the
    conducting diode into output node ``j``; with no diode it reaches the
    top node through C_p.  It flows through every output capacitor from
    ``j`` down to ground.
    """

    def __init__(self, ss: SteadyStateSolution, k: int):
        self.t_s = ss.config.t_s
        self.segs = [s for s in _segments(ss)]
        self.k = k
        bounds = [0.0]
        for st, t0, dt, e, co, node in self.segs:
            q = 0.0
            if node >= k and dt > 0:
                qa, qr = inductor_charges(co, dt)
                q = qa - qr
            bounds.append(bounds[-1] + q)
        self.cum = np.array(bounds)

    def current(self, t: float) -> float:
        t = t % self.t_s
        for st, t0, dt, e, co, node in self.segs:
            if t <= t0 + dt or st == 8:
                if node < self.k:
                    return 0.0
                ia, ir = inductor_currents(st, co, e, min(max(t - t0, 0.0), dt))
                return ia - ir
        return 0.0

    def charge(self, t: float) -> float:
        """Running charge from the start of state 1, extended periodically."""
        n_per, t = divmod(t, self.t_s)
        total = n_per * self.cum[-1]
        for i, (st, t0, dt, e, co, node) in enumerate(self.segs):
            if t <= t0 + dt or st == 8:
                tau = min(max(t - t0, 0.0), dt)
                q = 0.0
                if node >= self.k and tau > 0:
                    qa, qr = inductor_charges(co, tau)
                    q = qa - qr
                return total + self.cum[i] + q
        return total + self.cum[-1]


def _legs_charge(nc: _NodeCharge, n: int, t: float) -> float:
    """Charge of all ``n`` legs, leg ``i`` delayed by ``i T_s / n``."""
    return sum(nc.charge(t - i * nc.t_s / n) - nc.charge(-i * nc.t_s / n) for i in range(n))


def _legs_current(nc: _NodeCharge, n: int, t: float) -> float:
    return sum(nc.current(t - i * nc.t_s / n) for i in range(n))


def exact_output_ripples(ss: SteadyStateSolution, samples: int = 2048) -> tuple:
    """Peak-to-peak output capacitor ripples from the solved waveforms."""
    cfg = ss.config
    n = cfg.n_legs
    i_out = ss.i_out
    ts = np.union1d(np.linspace(0.0, cfg.t_s, samples + 1),
                    np.concatenate([ss.durations.starts() + i * cfg.t_s / n for i in range(n)]) % cfg.t_s)
    out = []
    for k in range(1, cfg.m_stages + 1):
        nc = _NodeCharge(ss, k)
        q = np.array([_legs_charge(nc, n, t) - i_out * t for t in ts])
        out.append(float((q.max() - q.min()) / cfg.c_out))
    return tuple(out)


def _zero_in(f, a: float, b: float, grid: int = 64):
    if b <= a:
        return None
    xs = np.linspace(a, b, grid + 1)
    vals = [f(x) for x in xs]
    for x0, x1, f0, f1 in zip(xs, xs[1:], vals, vals[1:]):
        if f0 == 0.0:
            return float(x0)
        if f0 * f1 < 0:
            return float(brentq(f, x0, x1, xtol=1e-16))
    return None


def ripple_formulas(config: ConverterConfig, i_out: float, d6: float, d7: float):
    """``(dv_ca, dv_cout_top, dv_cout_second)`` from the load current and the
    two clamp-state durations.

    Pump capacitor ``j`` carries the current of the ``m - j`` stages above
    it once per leg period.  The top output capacitor discharges into the
    load except while a leg's last diode conducts (``d6``); the one below
    it also recharges through the third diode (``d7``).
    """
    m, n = config.m_stages, config.n_legs
    t_s = config.t_s
    dv_ca = tuple((m - j) * i_out / (n * config.f_s * config.c_a) for j in range(1, m))
    dv_top = (t_s / n - d6) * i_out / config.c_out
    dv_second = (2 * t_s / n - d6 - d7) * i_out / config.c_out
    return dv_ca, dv_top, dv_second


def capacitor_ripples(ss: SteadyStateSolution, config: ConverterConfig | None = None) -> RippleReport:
    """Ripple of every capacitor from the solved interval times.

    Pump and upper output capacitors follow :func:`ripple_formulas`.  The
    bottom capacitor sees the summed first-node currents
    of all legs and discharges between ``t_y`` (the current falls below
    the load current in state 1) and ``t_z`` (it rises above it again in
    state 3, with the other legs superposed).
    """
    cfg = config or ss.config
    m, n = cfg.m_stages, cfg.n_legs
    i_out = ss.i_out
    d = ss.durations.d
    dv_ca, dv_top, dv_second = ripple_formulas(cfg, i_out, d[5], d[6])
    dv_cout = [0.0] * m
    dv_cout[m - 1] = dv_top
    if m >= 3:
        dv_cout[m - 2] = dv_second
    nc = _NodeCharge(ss, 1)
    starts = ss.durations.starts()

    def i_c1(t):
        return _legs_current(nc, n, t) - i_out

    fallback = False
    t_y = _zero_in(i_c1, starts[0], starts[1])
    if t_y is None:
        t_y, fallback = float(starts[1]), True
    t_z = _zero_in(i_c1, starts[2], starts[3])
    if t_z is None:
        t_z = float(starts[3])
    dv_cout[0] = -((_legs_charge(nc, n, t_z) - _legs_charge(nc, n, t_y))
                   - i_out * (t_z - t_y)) / cfg.c_out
    if m > 3:
        exact = exact_output_ripples(ss)
        for k in range(1, m - 2):
            dv_cout[k] = exact[k]
    return RippleReport(dv_ca=dv_ca, dv_cout=tuple(float(v) for v in dv_cout),
                        t_y=float(t_y), t_z=float(t_z), fallback=fallback)


# soft switching -----------------------------------------------------------------

@dataclass(frozen=True)
class ZvsReport:
    """Normalised transition angles against the dead-time angle.

    ``lhs_turn_off`` is the angle C_ra needs to charge to the clamp voltage
    after the main switch turns off (the clamp switch turns on after it);
    ``lhs_turn_on`` is the angle it needs to discharge after the clamp
    switch turns off.  Both are ``omega_r`` times the transition time.
    """

    lhs_turn_on: float
    lhs_turn_off: float
    bound: float
    pass_turn_on: bool
    pass_turn_off: bool
    diagnostic: str = ""
    solution: SteadyStateSolution | None = field(default=None, repr=False, compare=False)

    @property
    def passed(self) -> bool:
        return self.pass_turn_on and self.pass_turn_off

    @property
    def margin(self) -> float:
        return self.bound - max(self.lhs_turn_on, self.lhs_turn_off)


def transition_angles(config: ConverterConfig, ss: SteadyStateSolution) -> tuple[float, float]:
    """``(turn_on, turn_off)`` angles from the solved entry currents.

    Raises :class:`ModelViolationError` when a transition cannot complete.
    """
    p = normalize(config)
    e5, e8 = ss.entries[4], ss.entries[7]
    if e5.i_lra <= 0:
        raise ModelViolationError("i_Lra does not charge C_ra after the main switch turns off")
    if e8.i_lra >= 0:
        raise ModelViolationError("i_Lra does not discharge C_ra after the clamp switch turns off")
    t_r = rise_time_formula(config, e5.i_lra, ss.v_cc_boundary)[0]
    t_f = fall_time_formula(config, e8.i_lra, e8.v_cra, e8.v_cout[0])[0]
    return p.omega_r * t_f, p.omega_r * t_r


def zvs_margin(config: ConverterConfig, worst: OperatingPoint | float | None = None,
               dead_time: float | None = None,
               solution: SteadyStateSolution | None = None) -> ZvsReport:
    """Check that both transitions finish within the dead time.

    ``worst`` is the probe point (a duty applies it at the configured
    source and load); ``dead_time`` defaults to the configured one.  A
    period that cannot be solved, or a transition whose angle has no real
    solution, fails with the reason in ``diagnostic``.
    """
    dead = config.dead_time if dead_time is None else dead_time
    bound = normalize(config).omega_r * dead
    if solution is None:
        if worst is None:
            raise ValueError("a probe point or a solution is required")
        try:
            solution = solve_steady_state(config, worst, strict=False)
        except (NonConvergenceError, ModelViolationError, ValueError) as exc:
            return ZvsReport(math.inf, math.inf, bound, False, False,
                             f"no steady state at the probe point: {exc}")
    cfg = solution.config
    try:
        on, off = transition_angles(cfg, solution)
    except (ModelViolationError, ValueError) as exc:
        return ZvsReport(math.inf, math.inf, bound, False, False,
                         f"insufficient resonant energy: {exc}", solution)
    note = "" if solution.consistent else "period departs from the state sequence: " \
        + "; ".join(solution.violations)
    return ZvsReport(on, off, bound, on <= bound, off <= bound, note, solution)


# stresses -----------------------------------------------------------------------

@dataclass(frozen=True)
class StressReport:
    switch: float
    clamp_peak_time: float
    pump: tuple
    output: tuple
    c_out1_extra: float


def device_stress(ss: SteadyStateSolution) -> StressReport:
    """Peak blocking voltage of the switches and capacitor voltages.

    Both switches block the clamp capacitor peak.  The bottom output
    capacitor's ground pin also carries the source voltage, reported apart.
    """
    avg = ss.averages()
    return StressReport(switch=ss.v_cc_max, clamp_peak_time=ss.t_x,
                        pump=tuple(ss.boundary.v_ca), output=tuple(float(v) for v in avg["v_cout"]),
                        c_out1_extra=ss.config.v_in)
