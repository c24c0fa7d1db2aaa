"""Physical parameters, normalisation base and operating point.

All values are SI.  A configuration describes one *m*-stage, *n*-leg
interleaved converter with identical legs fed from a common source.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace


class ConfigError(ValueError):
    """Raised for physically invalid parameters."""


@dataclass(frozen=True)
class ConverterConfig:
    m_stages: int
    n_legs: int
    v_in: float
    l_a: float
    l_ra: float
    c_ra: float
    c_c: float
    c_a: float
    c_out: float
    r_load: float
    f_s: float
    dead_time: float
    c_p: float = 10e-12
    diode_drop: float = 0.0

    def __post_init__(self):
        if int(self.m_stages) != self.m_stages or self.m_stages < 2:
            raise ConfigError(f"m_stages must be an integer >= 2, got {self.m_stages!r}")
        if int(self.n_legs) != self.n_legs or self.n_legs < 1:
            raise ConfigError(f"n_legs must be an integer >= 1, got {self.n_legs!r}")
        for f in fields(self):
            if f.name in ("m_stages", "n_legs", "diode_drop"):
                continue
            value = getattr(self, f.name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ConfigError(f"{f.name} must be a positive finite number, got {value!r}")
        if not (math.isfinite(self.diode_drop) and self.diode_drop >= 0):
            raise ConfigError(f"diode_drop must be >= 0, got {self.diode_drop!r}")
        if not self.c_ra < self.c_c < self.c_out:
            raise ConfigError("capacitances must satisfy c_ra < c_c < c_out")

    @property
    def t_s(self) -> float:
        return 1.0 / self.f_s

    def with_(self, **changes) -> "ConverterConfig":
        return replace(self, **changes)


def table_i_config(**overrides) -> ConverterConfig:
    """The three-stage two-leg 100 kHz prototype.

    C_c is taken as the two 100 nF parts in parallel.  C_out uses the
    100 uF listed for the proposed converter in the component comparison.
    """
    base = dict(
        m_stages=3,
        n_legs=2,
        v_in=120.0,
        l_a=50e-6,
        l_ra=5e-6,
        c_ra=3.3e-9,
        c_c=200e-9,
        c_a=330e-9,
        c_out=100e-6,
        r_load=769.0,
        f_s=100e3,
        dead_time=350e-9,
    )
    base.update(overrides)
    return ConverterConfig(**base)


@dataclass(frozen=True)
class NormalizedParams:
    omega_r: float
    z_r: float
    f_r: float
    lambda_l: float
    lambda_c: float
    f_n: float
    r_n: float
    m_cc: float = float("nan")
    j_la_max: float = float("nan")


def normalize(config: ConverterConfig, v_cc: float | None = None,
              i_la_max: float | None = None) -> NormalizedParams:
    """Base quantities of the L_ra / C_ra resonant loop and the usual ratios.

    ``v_cc`` and ``i_la_max`` are operating-point dependent; when given, the
    normalised clamp voltage and peak input-inductor current are filled in.
    """
    omega_r = 1.0 / math.sqrt(config.l_ra * config.c_ra)
    z_r = math.sqrt(config.l_ra / config.c_ra)
    f_r = omega_r / (2 * math.pi)
    return NormalizedParams(
        omega_r=omega_r,
        z_r=z_r,
        f_r=f_r,
        lambda_l=config.l_ra / config.l_a,
        lambda_c=1.0 / (1.0 + config.c_ra / config.c_c),
        f_n=config.f_s / f_r,
        r_n=config.r_load / z_r,
        m_cc=float("nan") if v_cc is None else v_cc / config.v_in,
        j_la_max=float("nan") if i_la_max is None else i_la_max * z_r / config.v_in,
    )


@dataclass(frozen=True)
class OperatingPoint:
    """Main-switch duty plus the source/load corner it applies to.

    ``duty_ma`` is the fraction of the period the main switch (channel or
    body diode) conducts, i.e. from the instant C_ra is fully discharged to
    the gate turn-off.
    """

    duty_ma: float
    v_in: float
    r_load: float
    n_legs: int = 2
    phase_shift: float = field(default=float("nan"))

    def __post_init__(self):
        if not 0.0 < self.duty_ma < 1.0:
            raise ConfigError(f"duty_ma must lie in (0, 1), got {self.duty_ma!r}")
        if self.v_in <= 0 or self.r_load <= 0:
            raise ConfigError("v_in and r_load must be positive")
        if math.isnan(self.phase_shift):
            object.__setattr__(self, "phase_shift", 2 * math.pi / self.n_legs)

    @classmethod
    def for_config(cls, config: ConverterConfig, duty_ma: float) -> "OperatingPoint":
        return cls(duty_ma=duty_ma, v_in=config.v_in, r_load=config.r_load,
                   n_legs=config.n_legs)

    def apply(self, config: ConverterConfig) -> ConverterConfig:
        return config.with_(v_in=self.v_in, r_load=self.r_load, n_legs=self.n_legs)
