"""Command-line front end.

Exit codes: 0 success, 1 invalid input, 2 verification failure, 3 I/O failure.
"""
from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, analytic
from .compiler import CompileError, compile_schedule, load_sequence, roundtrip_check, save_sequence
from .oracle import DEFAULT_SEED
from .quantum import SpinSystemParams, run_sequence
from .reduced import ControlSchedule
from .synthesis import synthesize

EXIT_OK, EXIT_INPUT, EXIT_VERIFY, EXIT_IO = 0, 1, 2, 3
DEFAULT_J_HZ = 100.0


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.12g}"


def provenance(command: str, **params) -> list[str]:
    items = " ".join(f"{k}={_fmt(v)}" for k, v in params.items() if v is not None)
    return [f"ropekit {__version__} {command}", items]


# --------------------------------------------------------------------------- #
# parameter resolution

def _resolve_xi(args) -> float:
    if args.xi is not None:
        if args.J_hz is not None and args.k_hz is not None and not math.isclose(args.k_hz / args.J_hz, args.xi):
            raise InputError("--xi disagrees with --k-hz/--J-hz")
        xi = args.xi
    elif args.J_hz is not None and args.k_hz is not None:
        if args.J_hz <= 0:
            raise InputError("--J-hz must be positive")
        xi = args.k_hz / args.J_hz
    else:
        raise InputError("give --xi, or both --J-hz and --k-hz")
    try:
        return analytic.check_xi(xi)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _resolve_J(args) -> float:
    J = args.J_hz if args.J_hz is not None else DEFAULT_J_HZ
    if not (math.isfinite(J) and J > 0):
        raise InputError("--J-hz must be positive")
    return J


def _resolve_T(args, required: bool = True) -> float | None:
    """Horizon in units of 1/J."""
    if args.T is not None and args.T_seconds is not None:
        raise InputError("give only one of --T and --T-seconds")
    if args.T_seconds is not None:
        T = args.T_seconds * _resolve_J(args)
    else:
        T = args.T
    if T is None:
        if required:
            raise InputError("give --T (units of 1/J) or --T-seconds")
        return None
    if not (math.isfinite(T) and T > 0):
        raise InputError("the horizon must be positive")
    return T


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _csv(header_lines, columns, rows) -> str:
    out = [f"# {h}" for h in header_lines]
    out.append(",".join(columns))
    out.extend(",".join(_fmt(v) for v in row) for row in rows)
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------- #
# commands

def efficiency_report(xi: float, T: float | None = None) -> list[tuple[str, object]]:
    eta = analytic.eta_max(xi)
    inept, t_star = analytic.eta_inept(xi)
    eta_in, eta_ref = analytic.inphase_efficiencies(xi)
    rows: list[tuple[str, object]] = [
        ("xi", xi),
        ("eta", eta),
        ("eta_inept", inept),
        ("t_inept_J", t_star / math.pi),
        ("gain", eta / inept),
        ("eta_in", eta_in),
        ("eta_ref_inept", eta_ref),
        ("inphase_gain", eta_in / eta_ref),
        ("critical_time_J", analytic.critical_time(xi)),
    ]
    if T is None:
        return rows
    rows += [("T_J", T), ("eta_constant_T", analytic.eta_constant(T, xi) if xi > 0 else math.sin(math.pi * min(T, 0.5)))]
    if xi == 0.0:
        rows += [("regime", "lossless"), ("eta_T", analytic.eta_optimal(T, xi))]
        return rows
    if T <= analytic.critical_time(xi):
        rows += [("regime", "inept"), ("eta_T", analytic.eta_constant(T, xi)), ("u1_0", 1.0)]
        return rows
    g = analytic.tau_of_time(T, xi)
    syn = synthesize(T, xi)
    rows += [
        ("regime", "rope"),
        ("eta_T", g.eta_T),
        ("tau_J", g.tau),
        ("theta1", g.theta1),
        ("theta2", g.theta2),
        ("kappa_tau", g.kappa),
        ("u1_0", float(syn.schedule.u1[0])),
        ("flip_initial_deg", math.degrees(math.acos(float(syn.schedule.u1[0])))),
    ]
    return rows


def cmd_efficiency(args) -> int:
    xi = _resolve_xi(args)
    T = _resolve_T(args, required=False)
    rows = efficiency_report(xi, T)
    text = _csv(provenance("efficiency", xi=xi, T_J=T), ("quantity", "value"), rows)
    sys.stdout.write(text)
    if args.out:
        _write(Path(args.out), text)
    return EXIT_OK


def gains_table(n: int) -> list[tuple]:
    xis = np.concatenate([[0.0], np.logspace(-2, 2, n)])
    rows = []
    for xi in xis:
        eta = analytic.eta_max(xi)
        inept, t_star = analytic.eta_inept(xi)
        eta_in, eta_ref = analytic.inphase_efficiencies(xi)
        rows.append((xi, eta, inept, t_star / math.pi, eta / inept, eta_in, eta_ref, eta_in / eta_ref))
    return rows


def horizon_table(xi: float, T_max: float, n: int) -> list[tuple]:
    """(T, eta_T, constant-control eta, best INEPT within T, regime, is_critical) rows."""
    T_c = analytic.critical_time(xi)
    Ts = np.union1d(np.linspace(T_max / n, T_max, n), [T_c] if T_c < T_max else [])
    inept, t_star = analytic.eta_inept(xi)
    rows = []
    for T in Ts:
        const = analytic.eta_constant(T, xi)
        best_inept = inept if math.pi * T >= t_star else const
        regime = "lossless" if xi == 0 else ("inept" if T <= T_c else "rope")
        rows.append((T, analytic.eta_optimal(T, xi), const, best_inept, regime, int(T == T_c)))
    return rows


def cmd_curves(args) -> int:
    xis = args.xi if args.xi else [0.5, 1.0, 2.0]
    for xi in xis:
        analytic.check_xi(xi)
    n = args.grid if args.grid is not None else 200
    if n < 2:
        raise InputError("--grid must be at least 2")
    T_max = args.T if args.T is not None else 1.0
    if not T_max > 0:
        raise InputError("--T must be positive")
    out = Path(args.out or "curves")
    head = provenance("curves", grid=n)
    path = out / "efficiency_vs_xi.csv"
    _write(path, _csv(head + ["xi grid: 0 then logspace(-2, 2)"],
                      ("xi", "eta", "eta_inept", "t_inept_J", "gain", "eta_in", "eta_ref_inept", "inphase_gain"),
                      gains_table(n)))
    written = [path]
    for xi in xis:
        path = out / f"eta_T_xi{_fmt(xi)}.csv"
        _write(path, _csv(provenance("curves", xi=xi, T_max_J=T_max, grid=n)
                          + [f"critical_time_J={_fmt(analytic.critical_time(xi))}"],
                          ("T_J", "eta_T", "eta_constant", "eta_inept_within_T", "regime", "critical"),
                          horizon_table(xi, T_max, n)))
        written.append(path)
    for p in written:
        print(f"wrote {p}")
    return EXIT_OK


def cmd_synthesize(args) -> int:
    xi = _resolve_xi(args)
    T = _resolve_T(args)
    samples = args.grid if args.grid is not None else 2000
    if samples < 2:
        raise InputError("--grid must be at least 2")
    syn = synthesize(T, xi, samples)
    head = provenance("synthesize", xi=xi, T_J=T, samples_per_phase=samples, regime=syn.regime)
    path = Path(args.out or "schedule.txt")
    path.parent.mkdir(parents=True, exist_ok=True)
    syn.schedule.save(path, head)
    print(f"regime={syn.regime}")
    if syn.regime == "inept":
        print(f"T={_fmt(T)}/J does not exceed the critical time {_fmt(analytic.critical_time(xi))}/J: "
              "constant controls u1=u2=1")
    if syn.geometry is not None:
        g = syn.geometry
        print(f"tau_J={_fmt(g.tau)} theta1={_fmt(g.theta1)} theta2={_fmt(g.theta2)} kappa_tau={_fmt(g.kappa)}")
        print(f"u1_0={_fmt(syn.schedule.u1[0])}")
    print(f"predicted_efficiency={_fmt(syn.predicted_efficiency)}")
    print(f"wrote {path} ({len(syn.schedule)} samples)")
    return EXIT_OK


def _schedule_from_args(args, xi: float) -> tuple[ControlSchedule, float | None]:
    if args.schedule:
        return ControlSchedule.load(args.schedule), None
    T = _resolve_T(args)
    return synthesize(T, xi, args.grid if args.grid is not None else 2000).schedule, T


def cmd_compile(args) -> int:
    xi = _resolve_xi(args)
    J = _resolve_J(args)
    schedule, T = _schedule_from_args(args, xi)
    seq = compile_schedule(schedule, J, xi, args.target, rf_cap=args.rf_cap,
                           substitute_hard_pulses=not args.no_hard_substitution)
    head = provenance("compile", xi=xi, J_Hz=J, k_Hz=xi * J, T_J=T, target=args.target, rf_cap_J=args.rf_cap)
    out = Path(args.out or "sequence")
    manifest = save_sequence(seq, out, "sequence", head)
    for el in seq.elements:
        print(_describe(el))
    print(f"total_duration_s={_fmt(seq.duration)}")
    print(f"wrote {manifest}")
    return EXIT_OK


def _describe(el) -> str:
    name = type(el).__name__
    if name == "HardPulse":
        return f"hard pulse {math.degrees(el.flip_angle):.2f} deg about {el.phase_axis} on {el.target_spin}"
    if name == "Delay":
        return f"delay {el.duration:.6g} s"
    return f"shaped rf on {el.spin}: {el.times.size} samples, {el.duration:.6g} s, peak {el.peak_amplitude:.6g} Hz"


def cmd_simulate(args) -> int:
    if args.manifest:
        seq = load_sequence(args.manifest)
        J, xi = seq.J, seq.k / seq.J
    else:
        xi = _resolve_xi(args)
        J = _resolve_J(args)
        schedule, _ = _schedule_from_args(args, xi)
        seq = compile_schedule(schedule, J, xi, args.target, rf_cap=args.rf_cap,
                               substitute_hard_pulses=not args.no_hard_substitution)
    n = args.grid if args.grid is not None else 400
    if n < 1:
        raise InputError("--grid must be positive")
    res = run_sequence(seq, SpinSystemParams(J, xi * J), sample_dt=seq.duration / n)
    head = provenance("simulate", xi=xi, J_Hz=J, k_Hz=xi * J, target=seq.target, samples=n)
    path = Path(args.out or "trajectory.txt")
    _write(path, res.to_text(seq.target, head))
    iz = res.expectation("Iz")
    print(f"final <{seq.target}>={_fmt(res.final[_target_index(seq.target)])}")
    print(f"max <Iz>={_fmt(np.max(iz))} final <Iz>={_fmt(iz[-1])}")
    print(f"wrote {path} ({res.times.size} rows)")
    return EXIT_OK


def _target_index(label: str) -> int:
    from .quantum import index

    return index(label)


def cmd_verify(args) -> int:
    from .verify import cross_check, format_table

    xi = _resolve_xi(args)
    T = _resolve_T(args)
    J = _resolve_J(args)
    tol = args.tolerance if args.tolerance is not None else 5e-3
    N = args.grid if args.grid is not None else 400
    if N < 50:
        raise InputError("--grid (oracle cells) must be at least 50")
    seed = args.seed if args.seed is not None else DEFAULT_SEED
    report = cross_check(xi, T, J=J, tolerance=tol, N=N, seed=seed)
    text = "\n".join(f"# {h}" for h in provenance("verify", xi=xi, T_J=T, J_Hz=J, tolerance=tol, grid=N, seed=seed))
    text += "\n" + format_table(report) + "\n"
    sys.stdout.write(text)
    if args.out:
        _write(Path(args.out), text)
    return EXIT_OK if report.passed else EXIT_VERIFY


# --------------------------------------------------------------------------- #

def _common(p: argparse.ArgumentParser, *, multi_xi: bool = False) -> None:
    if multi_xi:
        p.add_argument("--xi", type=float, nargs="+", help="relative relaxation rates k/J")
    else:
        p.add_argument("--xi", type=float, help="relative relaxation rate k/J")
    p.add_argument("--J-hz", dest="J_hz", type=float, help=f"scalar coupling in Hz (default {DEFAULT_J_HZ:g})")
    p.add_argument("--k-hz", dest="k_hz", type=float, help="transverse relaxation rate in Hz")
    p.add_argument("--T", type=float, help="transfer time in units of 1/J")
    p.add_argument("--T-seconds", dest="T_seconds", type=float, help="transfer time in seconds")
    p.add_argument("--grid", type=int, help="grid size (meaning depends on the command)")
    p.add_argument("--seed", type=int, help="RNG seed for the oracle")
    p.add_argument("--out", help="output path")
    p.add_argument("--tolerance", type=float, help="agreement tolerance for verify")


def _pulse_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--schedule", help="schedule file to compile instead of synthesizing one")
    p.add_argument("--target", default="2IySz", help="target operator, e.g. 2IySz, 2IxSz, Sx")
    p.add_argument("--rf-cap", dest="rf_cap", type=float, default=100.0, help="rf amplitude cap in units of J")
    p.add_argument("--no-hard-substitution", action="store_true",
                   help="reject over-cap rf instead of replacing it with a hard pulse")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ropekit", description="Relaxation-optimized coherence transfer toolkit")
    parser.add_argument("--version", action="version", version=f"ropekit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("efficiency", help="closed-form efficiencies and switching geometry")
    _common(p)
    p.set_defaults(func=cmd_efficiency)

    p = sub.add_parser("curves", help="write efficiency curves as CSV (--T is the largest horizon)")
    _common(p, multi_xi=True)
    p.set_defaults(func=cmd_curves)

    p = sub.add_parser("synthesize", help="write the optimal control schedule (--grid: samples per phase)")
    _common(p)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("compile", help="compile a schedule into a pulse sequence")
    _common(p)
    _pulse_opts(p)
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("simulate", help="two-spin simulation of a compiled sequence (--grid: trace samples)")
    _common(p)
    _pulse_opts(p)
    p.add_argument("--manifest", help="sequence manifest written by 'compile'")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="cross-check closed form, reduced model, oracle and simulator")
    _common(p)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InputError, CompileError, ValueError) as exc:
        print(f"ropekit: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"ropekit: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
