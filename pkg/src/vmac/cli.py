"""Command-line front end.

Subcommands:

``steady``    solve one operating point, print a report and write the
              waveforms of every leg over one period as CSV
``sweep``     sweep the duty, the input voltage or the load and write one
              CSV row per point
``validate``  run the closed-form checks against the simulator
``zvs``       evaluate the soft-switching check at one operating point

Configuration files hold ``key = value`` lines; ``#`` starts a comment.
Keys carry their unit in the name (see :data:`CONFIG_KEYS`).  Missing
component keys take the prototype values.

Exit codes: 0 success, 1 configuration error, 2 non-convergence, 3 mode or
soft-switching violation, 4 validation failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from dataclasses import dataclass, field

import numpy as np

from .closed_form import ModelViolationError
from .metrics import capacitor_ripples, output_current, voltage_gain, zvs_margin
from .model import ConfigError, ConverterConfig, table_i_config
from .steady_state import NonConvergenceError, duty_for_output, solve_steady_state

EXIT_OK, EXIT_CONFIG, EXIT_NONCONV, EXIT_MODE, EXIT_VALIDATION = 0, 1, 2, 3, 4

# key -> (config field, scale to SI); None marks an operating-point key
CONFIG_KEYS = {
    "m_stages": ("m_stages", None),
    "n_legs": ("n_legs", None),
    "v_in_V": ("v_in", 1.0),
    "r_load_ohm": ("r_load", 1.0),
    "l_a_uH": ("l_a", 1e-6),
    "l_ra_uH": ("l_ra", 1e-6),
    "c_ra_nF": ("c_ra", 1e-9),
    "c_c_nF": ("c_c", 1e-9),
    "c_a_nF": ("c_a", 1e-9),
    "c_out_uF": ("c_out", 1e-6),
    "c_p_pF": ("c_p", 1e-12),
    "f_s_kHz": ("f_s", 1e3),
    "dead_time_ns": ("dead_time", 1e-9),
    "duty": ("duty", None),
    "target_vout_V": ("target_vout", None),
}

SWEEP_VARS = {"duty": "duty", "vin": "v_in", "rl": "r_load"}

log = logging.getLogger(__name__)


@dataclass
class RunConfig:
    """Parsed configuration file: converter, optional duty and target."""

    converter: ConverterConfig
    duty: float | None = None
    target_vout: float | None = None
    source: str = ""
    extra: dict = field(default_factory=dict)


def parse_config_text(text: str, source: str = "<text>") -> RunConfig:
    """Parse ``key = value`` lines.  Raises :class:`ConfigError` naming the
    offending key or line."""
    values, op = {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        name, scale = CONFIG_KEYS[key]
        try:
            number = float(value)
        except ValueError:
            raise ConfigError(f"{source}:{lineno}: key {key!r} needs a number, got {value!r}") from None
        if not math.isfinite(number):
            raise ConfigError(f"{source}:{lineno}: key {key!r} must be finite")
        if name in ("m_stages", "n_legs"):
            if number != int(number):
                raise ConfigError(f"{source}:{lineno}: key {key!r} must be an integer")
            values[name] = int(number)
        elif scale is None:
            op[name] = number
        else:
            values[name] = number * scale
    cfg = table_i_config(**values)
    duty = op.get("duty")
    if duty is not None and not 0 < duty < 1:
        raise ConfigError(f"{source}: key 'duty' must lie in (0, 1), got {duty}")
    return RunConfig(cfg, duty, op.get("target_vout"), source)


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig(table_i_config(), source="<defaults>")
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, path)


def fmt(x) -> str:
    """12 significant digits in scientific notation."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return f"{float(x):.11e}"


def _open_out(path: str | None):
    if path is None or path == "-":
        return sys.stdout, False
    try:
        return open(path, "w", newline="", encoding="utf-8"), True
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc}") from None


# steady ---------------------------------------------------------------------------

def waveform_rows(ss, samples: int = 400):
    """CSV header and rows of every leg over one period."""
    cfg = ss.config
    m = cfg.m_stages
    header = (["time_s", "leg", "i_la_A", "i_lra_A", "v_cra_V", "v_cc_V"]
              + [f"v_ca{j}_V" for j in range(1, m)]
              + [f"v_cout{j}_V" for j in range(1, m + 1)] + ["state_index"])
    rows = []
    ts = np.arange(samples) * cfg.t_s / samples
    for leg in range(cfg.n_legs):
        shift = leg * cfg.t_s / cfg.n_legs
        for t in ts:
            x = ss.waveform(t - shift)
            rows.append([fmt(float(t)), str(leg), fmt(x.i_la), fmt(x.i_lra), fmt(x.v_cra),
                         fmt(x.v_cc), *(fmt(v) for v in x.v_ca), *(fmt(v) for v in x.v_cout),
                         str(ss.state_at(t - shift))])
    return header, rows


def _solve_point(rc: RunConfig, args):
    strict = args.strict
    target = args.target_vout if args.target_vout is not None else rc.target_vout
    duty = args.duty if args.duty is not None else rc.duty
    if target is not None:
        return duty_for_output(rc.converter, target, strict=strict)
    if duty is None:
        raise ConfigError("give --duty or --target-vout (or 'duty' in the config)")
    if not 0 < duty < 1:
        raise ConfigError(f"duty must lie in (0, 1), got {duty}")
    return solve_steady_state(rc.converter, duty, strict=strict)


def report_lines(ss) -> list[str]:
    cfg = ss.config
    d = ss.durations
    oc = output_current(ss)
    g = voltage_gain(ss)
    rip = capacitor_ripples(ss)
    z = zvs_margin(cfg, solution=ss)
    lines = [
        f"V_in {cfg.v_in:.6g} V, R_L {cfg.r_load:.6g} ohm, m {cfg.m_stages}, n {cfg.n_legs}",
        f"D_Ma {ss.duty_ma:.6f}  D_Mca {ss.duty_mca:.6f}",
        "durations [ns] " + " ".join(f"{v * 1e9:.3f}" for v in d.d),
        f"t_r {d.t_r * 1e9:.3f} ns  t_f {d.t_f * 1e9:.3f} ns",
        f"V_Cc {ss.v_cc:.6g} V (ideal {ss.v_cc_ideal:.6g} V, peak {ss.v_cc_max:.6g} V)",
        f"V_out {ss.v_out:.6g} V  I_out {oc.i_out:.6g} A",
        f"gain {g.m_gain:.6g} (bound {g.bound:.6g})  V_Cout/V_out "
        + " ".join(f"{v:.4f}" for v in g.v_cout_norm),
        "ripple C_a [V] " + " ".join(f"{v:.4g}" for v in rip.dv_ca)
        + "  C_out [V] " + " ".join(f"{v:.4g}" for v in rip.dv_cout),
        f"ZVS {'pass' if z.passed else 'fail'}: turn-on {z.lhs_turn_on:.4f} rad, "
        f"turn-off {z.lhs_turn_off:.4f} rad, bound {z.bound:.4f} rad",
        f"residual {ss.residual:.2e}, iterations {ss.iterations}",
    ]
    if ss.violations:
        lines.append("sequence violations: " + "; ".join(ss.violations))
    if z.diagnostic:
        lines.append("ZVS note: " + z.diagnostic)
    return lines


def cmd_steady(args) -> int:
    rc = load_config(args.config)
    ss = _solve_point(rc, args)
    for line in report_lines(ss):
        print(line)
    if args.out:
        header, rows = waveform_rows(ss)
        fh, close = _open_out(args.out)
        try:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
        finally:
            if close:
                fh.close()
    if args.strict and not zvs_margin(ss.config, solution=ss).passed:
        print("soft switching fails at this operating point", file=sys.stderr)
        return EXIT_MODE
    return EXIT_OK


# sweep ----------------------------------------------------------------------------

def sweep_rows(rc: RunConfig, var: str, values, duty: float | None, strict: bool):
    """Header and one row per sweep value; failing points keep a status."""
    base = rc.converter
    m = base.m_stages
    header = (["sweep_value", "m_gain", "gain_bound"]
              + [f"v_cout{j}_norm" for j in range(1, m + 1)]
              + ["v_cc_V", "zvs_pass", "iterations", "status"])
    rows, statuses, seed = [], [], None
    for value in sorted(values):
        cfg, d = base, duty
        if var == "duty":
            d = value
        else:
            cfg = base.with_(**{SWEEP_VARS[var]: value})
        status = "ok"
        try:
            ss = solve_steady_state(cfg, d, strict=False, seed=seed, use_oracle=seed is None)
            seed = ss
            if not ss.consistent:
                status = "mode_violation"
            g = voltage_gain(ss)
            z = zvs_margin(cfg, solution=ss)
            row = [fmt(value), fmt(g.m_gain), fmt(g.bound), *(fmt(v) for v in g.v_cout_norm),
                   fmt(ss.v_cc), fmt(z.passed), str(ss.iterations), status]
        except (NonConvergenceError, ModelViolationError) as exc:
            log.info("sweep point %s failed: %s", value, exc)
            status = "no_convergence"
            row = [fmt(value)] + [""] * (len(header) - 2) + [status]
        rows.append(row)
        statuses.append(status)
    return header, rows, statuses


def cmd_sweep(args) -> int:
    rc = load_config(args.config)
    if args.var not in SWEEP_VARS:
        raise ConfigError(f"--var must be one of {sorted(SWEEP_VARS)}")
    if args.min is None or args.max is None:
        raise ConfigError("--min and --max are required")
    if args.points < 1:
        raise ConfigError("--points must be >= 1")
    if args.points > 1 and not args.min < args.max:
        raise ConfigError("--min must be below --max")
    values = [args.min] if args.points == 1 else list(np.linspace(args.min, args.max, args.points))
    duty = args.duty if args.duty is not None else rc.duty
    if args.var != "duty" and duty is None:
        raise ConfigError("a duty is required when sweeping vin or rl")
    if args.var == "duty" and not (0 < args.min and args.max < 1):
        raise ConfigError("duty sweep range must lie in (0, 1)")
    header, rows, statuses = sweep_rows(rc, args.var, values, duty, args.strict)
    fh, close = _open_out(args.out)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    finally:
        if close:
            fh.close()
    if "no_convergence" in statuses and len(set(statuses)) == 1:
        return EXIT_NONCONV
    if args.strict and any(s != "ok" for s in statuses):
        return EXIT_MODE
    return EXIT_OK


# validate / zvs ----------------------------------------------------------------

def cmd_validate(args) -> int:
    from .validation import run_all, zvs_grid
    rc = load_config(args.config)
    grid = zvs_grid(args.points, args.points) if args.points else None
    results = run_all(rc.converter, args.tol_override, grid=grid)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_VALIDATION if failed else EXIT_OK


def cmd_zvs(args) -> int:
    rc = load_config(args.config)
    cfg = rc.converter
    duty = args.duty if args.duty is not None else rc.duty
    target = args.target_vout if args.target_vout is not None else rc.target_vout
    if target is not None:
        ss = duty_for_output(cfg, target, strict=False)
        rep = zvs_margin(cfg, solution=ss)
    elif duty is None:
        raise ConfigError("give --duty or --target-vout (or 'duty' in the config)")
    else:
        rep = zvs_margin(cfg, duty)
    dead = cfg.dead_time
    print(f"turn-on angle {rep.lhs_turn_on:.6f} rad ({'pass' if rep.pass_turn_on else 'fail'})")
    print(f"turn-off angle {rep.lhs_turn_off:.6f} rad ({'pass' if rep.pass_turn_off else 'fail'})")
    print(f"bound {rep.bound:.6f} rad (dead time {dead * 1e9:.1f} ns), margin {rep.margin:.6f} rad")
    if rep.diagnostic:
        print("note: " + rep.diagnostic)
    if rep.solution is None:
        return EXIT_NONCONV
    return EXIT_OK if rep.passed else EXIT_MODE


# entry point ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vmac", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key = value configuration file")
        sp.add_argument("--out", help="output CSV path ('-' for stdout)")
        sp.add_argument("--duty", type=float, help="main-switch conduction duty")
        sp.add_argument("--target-vout", type=float, help="solve for the duty giving this V_out")
        g = sp.add_mutually_exclusive_group()
        g.add_argument("--strict", dest="strict", action="store_true", default=True,
                       help="fail on state-sequence or soft-switching violations (default)")
        g.add_argument("--permissive", dest="strict", action="store_false",
                       help="report violations without failing")

    for name, fn, text in (("steady", cmd_steady, "solve one operating point"),
                           ("sweep", cmd_sweep, "sweep duty, input voltage or load"),
                           ("validate", cmd_validate, "check the model against the simulator"),
                           ("zvs", cmd_zvs, "soft-switching check")):
        sp = sub.add_parser(name, help=text)
        common(sp)
        sp.set_defaults(func=fn)
        if name == "sweep":
            sp.add_argument("--var", default="duty", help="duty, vin or rl")
            sp.add_argument("--min", type=float)
            sp.add_argument("--max", type=float)
            sp.add_argument("--points", type=int, default=11)
        if name == "validate":
            sp.add_argument("--points", type=int, default=0,
                            help="soft-switching grid size per axis (default 5)")
            sp.add_argument("--tol-override", type=float,
                            help="hold every check to this tolerance")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonConvergenceError as exc:
        print(f"no convergence: {exc}", file=sys.stderr)
        hist = getattr(exc, "history", None)
        if hist:
            print(f"residual history: {' '.join(f'{r:.2e}' for r in hist)}", file=sys.stderr)
        return EXIT_NONCONV
    except ModelViolationError as exc:
        print(f"mode violation: {exc}", file=sys.stderr)
        return EXIT_MODE


if __name__ == "__main__":
    sys.exit(main())
