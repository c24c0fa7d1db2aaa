"""Modal solution of the inductor pair within one operational state.

Within a state the output capacitors act as constant sources and the leg
reduces to two coupled loops: the source loop through L_a, L_ra and the
switch-node capacitance (inverse ``g12``) and the resonant loop through L_ra
and the capacitance on the diode path (inverse ``g22``).  The Laplace
solution has the denominator ``(s^2 + w1^2)(s^2 + w2^2)``, so both
inductor currents are sums of two sinusoids.

Coefficients are reported in the normalised amplitude/phase form (``k``,
``theta``) where it is defined.  Waveforms are evaluated from the partial
fraction amplitudes in amperes, which stay finite for zero entry current
and for coincident frequencies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from .model import ConverterConfig
from .topology import (OperationalState, equivalent_capacitances, gamma_row,
                       modal_frequencies, state_diode, S)

I_ZERO = 1e-12  # entry current treated as zero, A
DEGENERATE = 1e-6  # |1 - lambda_w^2| below this uses the double-root form


class ModelViolationError(ValueError):
    """The closed-form model does not apply (complex frequencies, an
    unreachable transition or a broken conduction pattern)."""


@dataclass(frozen=True)
class StateVector:
    """Leg state at a state entry.

    ``v_ca`` holds C_a1..C_a(m-1) and ``v_cout`` holds C_out1..C_outm.
    """

    i_la: float
    i_lra: float
    v_cra: float
    v_cc: float
    v_ca: tuple
    v_cout: tuple
    v_cp: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "v_ca", tuple(float(v) for v in self.v_ca))
        object.__setattr__(self, "v_cout", tuple(float(v) for v in self.v_cout))
        values = [self.i_la, self.i_lra, self.v_cra, self.v_cc, self.v_cp,
                  *self.v_ca, *self.v_cout]
        if not all(math.isfinite(v) for v in values):
            raise ValueError("state vector entries must be finite")
        if len(self.v_cout) != len(self.v_ca) + 1:
            raise ValueError("need m output and m-1 pump capacitor voltages")

    @property
    def m(self) -> int:
        return len(self.v_cout)

    @property
    def v_out(self) -> float:
        return float(sum(self.v_cout))

    def as_array(self) -> np.ndarray:
        """Entries in the single-leg system ordering
        (i_La, i_Lra, v_Cra, v_Cc, v_Ca.., v_Cout.., v_Cp)."""
        return np.array([self.i_la, self.i_lra, self.v_cra, self.v_cc,
                         *self.v_ca, *self.v_cout, self.v_cp])

    @classmethod
    def from_array(cls, x, m: int) -> "StateVector":
        x = [float(v) for v in x]
        return cls(x[0], x[1], x[2], x[3], tuple(x[4:3 + m]), tuple(x[3 + m:3 + 2 * m]),
                   x[3 + 2 * m])

    def replace(self, **changes) -> "StateVector":
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data.update(changes)
        return StateVector(**data)


@dataclass(frozen=True)
class ModalCoefficients:
    state: OperationalState
    inv_c12: float
    inv_c22: float
    omega1: float
    omega2: float
    big_omega: float
    zeta4: float
    lambda_omega: float
    a_i: float
    b_i: float
    c_i: float
    d_i: float
    alpha1: float
    beta1: float
    gamma1: float
    alpha2: float
    beta2: float
    gamma2: float
    k1: float
    k2: float
    k3: float
    k4: float
    theta1: float
    theta2: float
    theta3: float
    theta4: float
    linear: bool
    # numerator coefficients (s^3, s^2, s, 1) of both Laplace currents
    num_la: tuple = field(repr=False, default=())
    num_lra: tuple = field(repr=False, default=())


def source_voltage(state, entry: StateVector) -> float:
    """Loop source ``v_X - v_S`` at entry, from the loop coefficient row."""
    m = entry.m
    values = list(entry.v_cout) + [entry.v_cra, entry.v_cp] + list(entry.v_ca)
    c = 0.0
    for coef, v in zip(gamma_row(state, m), values):
        if coef == S:
            c += v
        elif coef:
            c += coef * v
    return c


def _switch_node_voltage(state, entry: StateVector) -> float:
    s = OperationalState.coerce(state)
    return 0.0 if s in (1, 2, 3, 4) else entry.v_cra


def _cot_angle(cot: float) -> float:
    """Angle in (0, pi) with the given cotangent."""
    return float(math.atan2(1.0, cot))


def state_coefficients(state, config: ConverterConfig, entry: StateVector) -> ModalCoefficients:
    """Modal frequencies and amplitude/phase coefficients for ``state``."""
    s = OperationalState.coerce(state)
    if entry.m != config.m_stages:
        raise ValueError("entry state does not match the stage count")
    g12, g22 = equivalent_capacitances(s, config)
    try:
        w1, w2, big, zeta4 = modal_frequencies(config, g12, g22)
    except ValueError as exc:
        raise ModelViolationError(f"state {int(s)}: {exc}") from None
    la, lra = config.l_a, config.l_ra
    ia0, ir0 = entry.i_la, entry.i_lra
    a = config.v_in - _switch_node_voltage(s, entry)
    b = la * ia0 + lra * ir0
    c = source_voltage(s, entry)
    d = lra * ir0
    llr = la * lra
    num_la = (ia0, (a - c) / la, (b * g22 - d * g12) / llr, (a * g22 - c * g12) / llr)
    num_lra = (ir0, c / lra, (g22 - g12) * b / llr, (g22 - g12) * a / llr)

    nan = float("nan")
    lam = w2 / w1 if w1 > 0 else nan
    one_m = 1.0 - lam * lam if w1 > 0 else nan

    def normalized(num, i0):
        # alpha, beta, gamma relative to i0 and w1
        if abs(i0) < I_ZERO or w1 == 0:
            return nan, nan, nan
        return num[1] / (w1 * i0), num[2] / (w1 ** 2 * i0), num[3] / (w1 ** 3 * i0)

    def amp_phase(alpha, beta, gamma):
        if not (math.isfinite(alpha) and abs(one_m) >= DEGENERATE and lam > 0):
            return nan, nan, nan, nan
        k_hi = (1.0 - beta) / one_m
        k_lo = (beta - lam * lam) / one_m
        th_hi = _cot_angle((alpha - gamma) / (k_hi * one_m)) if k_hi else nan
        th_lo = _cot_angle((gamma - alpha * lam * lam) / (k_lo * lam * one_m)) if k_lo else nan
        return k_hi, k_lo, th_hi, th_lo

    al1, be1, ga1 = normalized(num_la, ia0)
    al2, be2, ga2 = normalized(num_lra, ir0)
    k1, k2, th1, th2 = amp_phase(al1, be1, ga1)
    k3, k4, th3, th4 = amp_phase(al2, be2, ga2)
    return ModalCoefficients(
        state=s, inv_c12=g12, inv_c22=g22, omega1=w1, omega2=w2, big_omega=big,
        zeta4=zeta4, lambda_omega=lam, a_i=a, b_i=b, c_i=c, d_i=d,
        alpha1=al1, beta1=be1, gamma1=ga1, alpha2=al2, beta2=be2, gamma2=ga2,
        k1=k1, k2=k2, k3=k3, k4=k4, theta1=th1, theta2=th2, theta3=th3, theta4=th4,
        linear=s in (1, 4), num_la=num_la, num_lra=num_lra,
    )


# Inverse Laplace transforms of N(s) / ((s^2 + w1^2)(s^2 + w2^2)) and of
# the same over s (running integral).

def _sinc_t(w, t):
    """sin(w t) / w, tending to t."""
    x = w * t
    return t * (1.0 - x * x / 6.0) if abs(x) < 1e-4 else math.sin(x) / w


def _vers_t(w, t):
    """(1 - cos w t) / w^2, tending to t^2 / 2."""
    x = w * t
    if abs(x) < 1e-4:
        return 0.5 * t * t * (1.0 - x * x / 12.0)
    return 2.0 * math.sin(0.5 * x) ** 2 / (w * w)


def _cubic_t(w, t):
    """(sin w t - w t cos w t) / (2 w^3), tending to t^3 / 6."""
    x = w * t
    if abs(x) < 1e-2:
        return t ** 3 / 6.0 * (1.0 - x * x / 10.0 + x ** 4 / 280.0)
    return (math.sin(x) - x * math.cos(x)) / (2.0 * w ** 3)


def _quartic_t(w, t):
    """(1 - cos w t - (w t sin w t) / 2) / w^4, tending to t^4 / 24."""
    x = w * t
    if abs(x) < 1e-2:
        return t ** 4 / 24.0 * (1.0 - x * x / 15.0 + x ** 4 / 560.0)
    return (1.0 - math.cos(x) - 0.5 * x * math.sin(x)) / w ** 4


def _t_sin_t(w, t):
    """t sin(w t) / (2 w), tending to t^2 / 2."""
    x = w * t
    if abs(x) < 1e-4:
        return 0.5 * t * t * (1.0 - x * x / 6.0)
    return t * math.sin(x) / (2.0 * w)


def _inverse(num, w1, w2, t, integral=False):
    n3, n2, n1, n0 = num
    if abs(w1 * w1 - w2 * w2) >= DEGENERATE * max(w1 * w1, 1e-300):
        den = w2 * w2 - w1 * w1
        a1 = (n1 - n3 * w1 * w1) / den
        b1 = (n0 - n2 * w1 * w1) / den
        a2, b2 = n3 - a1, n2 - b1
        if integral:
            return a1 * _sinc_t(w1, t) + b1 * _vers_t(w1, t) + a2 * _sinc_t(w2, t) + b2 * _vers_t(w2, t)
        return a1 * math.cos(w1 * t) + b1 * _sinc_t(w1, t) + a2 * math.cos(w2 * t) + b2 * _sinc_t(w2, t)
    # double root: N = (n3 s + n2)(s^2 + w^2) + r s + u
    w = 0.5 * (w1 + w2)
    r = n1 - n3 * w * w
    u = n0 - n2 * w * w
    if integral:
        return n3 * _sinc_t(w, t) + n2 * _vers_t(w, t) + r * _cubic_t(w, t) + u * _quartic_t(w, t)
    return n3 * math.cos(w * t) + n2 * _sinc_t(w, t) + r * _t_sin_t(w, t) + u * _cubic_t(w, t)


def _check_tau(tau):
    if not (math.isfinite(tau) and tau >= 0):
        raise ValueError(f"time since state entry must be >= 0, got {tau!r}")


def inductor_currents(state, coeffs: ModalCoefficients, entry: StateVector,
                      tau: float) -> tuple[float, float]:
    """``(i_La, i_Lra)`` at ``tau`` seconds after entering ``state``."""
    _check_tau(tau)
    w1, w2 = coeffs.omega1, coeffs.omega2
    return _inverse(coeffs.num_la, w1, w2, tau), _inverse(coeffs.num_lra, w1, w2, tau)


def inductor_charges(coeffs: ModalCoefficients, tau: float) -> tuple[float, float]:
    """Running integrals of both inductor currents from entry to ``tau``."""
    _check_tau(tau)
    w1, w2 = coeffs.omega1, coeffs.omega2
    return (_inverse(coeffs.num_la, w1, w2, tau, integral=True),
            _inverse(coeffs.num_lra, w1, w2, tau, integral=True))


def modal_form_currents(coeffs: ModalCoefficients, entry: StateVector,
                        tau: float) -> tuple[float, float]:
    """Currents from the normalised amplitude/phase coefficients.

    Only defined when both entry currents are nonzero and the frequencies
    are distinct and nonzero; returns NaN otherwise.
    """
    w1, w2 = coeffs.omega1, coeffs.omega2

    def form(i0, k_hi, k_lo, th_hi, th_lo):
        return i0 * (k_hi / math.sin(th_hi) * math.sin(w1 * tau + th_hi)
                     + k_lo / math.sin(th_lo) * math.sin(w2 * tau + th_lo))

    return (form(entry.i_la, coeffs.k1, coeffs.k2, coeffs.theta1, coeffs.theta2),
            form(entry.i_lra, coeffs.k3, coeffs.k4, coeffs.theta3, coeffs.theta4))


def ramp_slopes(state, config: ConverterConfig, entry: StateVector) -> tuple[float, float]:
    """Current slopes of the two straight-line states.

    With the main switch and the first diode on both inductors see fixed
    voltages; with the main switch alone they carry one current through
    the series pair.
    """
    s = OperationalState.coerce(state)
    if s == 1:
        v1 = entry.v_cout[0]
        return (config.v_in - v1) / config.l_a, v1 / config.l_ra
    if s == 4:
        slope = config.v_in / (config.l_a + config.l_ra)
        return slope, slope
    raise ValueError("only states 1 and 4 are straight-line states")


def clamp_node_voltage(state, coeffs: ModalCoefficients, entry: StateVector,
                       tau: float) -> float:
    """Voltage across C_ra at ``tau`` after entry.

    Zero while the main switch conducts.  Otherwise C_ra (alone, or in
    parallel with C_c while the clamp switch conducts) integrates i_Lra.
    """
    s = OperationalState.coerce(state)
    _check_tau(tau)
    if s in (1, 2, 3, 4):
        return 0.0
    _, q = inductor_charges(coeffs, tau)
    return entry.v_cra + coeffs.inv_c12 * q


def propagate(state, config: ConverterConfig, entry: StateVector, tau: float,
              coeffs: ModalCoefficients | None = None, n_legs: int | None = None,
              load: bool = True) -> StateVector:
    """State vector ``tau`` after entry.

    Inductor currents, the switch-node voltage and the capacitors on the
    diode path follow the modal solution exactly.  The output capacitors
    are sources within the state; their voltages are advanced afterwards
    by the charge this leg delivers plus ``1/n`` of the load charge, which
    is the share of one leg in an interleaved converter.
    """
    s = OperationalState.coerce(state)
    if coeffs is None:
        coeffs = state_coefficients(s, config, entry)
    m = entry.m
    n = config.n_legs if n_legs is None else n_legs
    i_la, i_lra = inductor_currents(s, coeffs, entry, tau)
    q_la, q_lra = inductor_charges(coeffs, tau)
    q_x = q_la - q_lra  # charge leaving the common node into the diode path
    v_cra, v_cc = entry.v_cra, entry.v_cc
    if s in (1, 2, 3, 4):
        v_cra = 0.0
    else:
        v_cra = entry.v_cra + coeffs.inv_c12 * q_lra
        if s in (6, 7):
            v_cc = v_cra
    v_ca = list(entry.v_ca)
    v_cout = list(entry.v_cout)
    v_cp = entry.v_cp
    d = state_diode(s, m)
    if d is None:
        v_cp -= q_x / config.c_p
        top = m
    else:
        top = (d + 1) // 2
        n_pump = top - 1 if d % 2 else top
        for j in range(n_pump):
            v_ca[j] -= q_x / config.c_a
    for j in range(top):
        v_cout[j] += q_x / config.c_out
    if load:
        dq_load = entry.v_out / config.r_load * tau / n
        for j in range(m):
            v_cout[j] -= dq_load / config.c_out
    if d is not None:
        # the parasitic capacitor follows the diode path
        v_cp = sum(v_cout) - _common_node_voltage(d, v_ca, v_cout)
    return StateVector(i_la, i_lra, v_cra, v_cc, tuple(v_ca), tuple(v_cout), v_cp)


def _common_node_voltage(d: int, v_ca, v_cout) -> float:
    j = (d + 1) // 2
    n_pump = j - 1 if d % 2 else j
    return sum(v_cout[:j]) - sum(v_ca[:n_pump])


def common_node_voltage(state, entry: StateVector, coeffs: ModalCoefficients | None = None,
                        tau: float = 0.0, config: ConverterConfig | None = None) -> float:
    """Potential of the inductors' common node at entry (or at ``tau``
    when ``coeffs`` and ``config`` are supplied)."""
    s = OperationalState.coerce(state)
    if coeffs is not None and tau > 0:
        entry = propagate(s, config, entry, tau, coeffs, load=False)
    d = state_diode(s, entry.m)
    if d is None:
        return entry.v_out - entry.v_cp
    return _common_node_voltage(d, entry.v_ca, entry.v_cout)
