"""Command-line front end: FID runs, field sweeps, eigenvalue tables, fits.

Every command writes CSV files into ``--out-dir``. Numbers are printed with
17 significant digits so that re-reading a file reproduces the floats exactly.

Exit codes: 0 ok, 2 usage, 3 numerical failure, 4 degenerate fit on every
probe, 5 sweep quorum (fewer than 80% of fits trusted).
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from .dynamics import IntegrationError, StabilityError, evolve
from .experiment import PROBES, RunSettings, log_spaced, run_fid, run_sweep, substeps_for
from .fitting import FitResult, fit_fid
from .hilbert import spin_temperature_state
from .observables import ProbeConfig, synth_fid
from .superop import DefectiveSuperOpError, build_linear, eigenmodes, find_mode, perturbative_birefringent

EXIT_OK, EXIT_USAGE, EXIT_NUMERICS, EXIT_DEGENERATE, EXIT_QUORUM = 0, 2, 3, 4, 5
QUORUM = 0.8

FIT_HEADER = ["probe", "A", "T1_s", "C", "Gamma0_per_s", "omega0_rad_s", "phi_rad", "residual_rms", "converged"]


class UsageError(Exception):
    pass


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_csv(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def fit_row(label: str, fit: FitResult) -> list:
    return [label, fit.A, fit.T1, fit.C, fit.Gamma0, fit.omega0, fit.phi, fit.residual_rms, fit.trusted]


# --- argument handling -------------------------------------------------------

def _positive(kind):
    def conv(text):
        v = kind(text)
        if not v > 0:
            raise argparse.ArgumentTypeError(f"expected a positive value, got {text}")
        return v
    return conv


def _nonneg(text):
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative value, got {text}")
    return v


def _fraction(text):
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"polarization must lie in (0, 1), got {text}")
    return v


def _common(simulate: bool = True) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="flat key=value file; command-line flags take precedence")
    p.add_argument("--out-dir", dest="out_dir", default=".", help="directory for CSV output")
    p.add_argument("--I", dest="twice_I", type=int, default=3, help="twice the nuclear spin (3 for Rb-87)")
    p.add_argument("--R-SE", dest="R_SE", type=_nonneg, default=1e4, help="spin-exchange rate, 1/s")
    p.add_argument("--R-SD", dest="R_SD", type=_nonneg, default=147.0, help="spin-destruction rate, 1/s")
    if simulate:
        p.add_argument("--P", dest="P", type=_fraction, default=0.1, help="initial electron polarization")
        p.add_argument("--t-end-ms", dest="t_end_ms", type=_positive(float), default=10.0)
        p.add_argument("--dt-us", dest="dt_us", type=_positive(float), default=1.0)
        p.add_argument("--t0-us", dest="t0_us", type=_nonneg, default=300.0, help="fit window start")
        p.add_argument("--linear-theory", dest="linear_theory", action="store_true",
                       help="drop the nonlinear part of the spin-exchange term")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="serfspin", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    fid = sub.add_parser("fid", parents=[_common()], help="single FID run for both probes")
    fid.add_argument("--B-nT", dest="B_nT", type=_nonneg, default=28.0)
    fid.add_argument("--probe", choices=("both",) + PROBES, default="both", help="probes to fit")

    sweep = sub.add_parser("sweep", parents=[_common()], help="fit Gamma0(B) over a field sweep")
    sweep.add_argument("--B-nT", dest="B_list", default=None,
                       help="explicit comma-separated fields; overrides the log-spaced range")
    sweep.add_argument("--B-min-nT", dest="B_min", type=_positive(float), default=1.0)
    sweep.add_argument("--B-max-nT", dest="B_max", type=_positive(float), default=1000.0)
    sweep.add_argument("--B-count", dest="B_count", type=_positive(int), default=24)
    sweep.add_argument("--probe", choices=("both",) + PROBES, default="both")
    sweep.add_argument("--jobs", type=_positive(int), default=1)

    eig = sub.add_parser("eig", parents=[_common(simulate=False)], help="eigenmodes of the linear superoperator")
    eig.add_argument("--B-nT", dest="B_nT", type=_nonneg, default=10.0)

    pert = sub.add_parser("perturb", parents=[_common()],
                          help="perturbative birefringent exponent next to the simulated fit")
    pert.add_argument("--B-nT", dest="B_nT", type=_nonneg, default=10.0)

    fit = sub.add_parser("fit", parents=[_common(simulate=False)], help="fit an external t_s,value CSV")
    fit.add_argument("input", help="CSV with header t_s,value (or t_s followed by probe columns)")
    fit.add_argument("--t0-us", dest="t0_us", type=_nonneg, default=300.0)
    return parser


def read_config(path: str) -> dict[str, str]:
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.lstrip("-")] = value
    return out


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is None:
        return args
    sub = parser._subparsers._group_actions[0].choices[args.command]
    by_flag = {}
    for action in sub._actions:
        for opt in action.option_strings:
            by_flag[opt.lstrip("-")] = action.dest
        by_flag[action.dest] = action.dest
    defaults = {}
    for key, value in read_config(args.config).items():
        dest = by_flag.get(key) or by_flag.get(key.replace("_", "-"))
        if dest is None or dest in ("config", "help", "input"):
            raise UsageError(f"unknown config key {key!r} for command {args.command}")
        action = next(a for a in sub._actions if a.dest == dest)
        if action.nargs == 0:
            value = value.lower() in ("1", "true", "yes", "on")
        defaults[dest] = value
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def settings_from(args) -> RunSettings:
    return RunSettings(twice_I=args.twice_I, R_SE=args.R_SE, R_SD=args.R_SD, P=args.P,
                       t_end=args.t_end_ms * 1e-3, dt=args.dt_us * 1e-6, t0=args.t0_us * 1e-6,
                       nonlinear=not args.linear_theory)


def _probes(choice: str) -> tuple[str, ...]:
    return PROBES if choice == "both" else (choice,)


# --- commands ----------------------------------------------------------------

def cmd_fid(args) -> int:
    settings = settings_from(args)
    system = settings.system()
    params = settings.params(args.B_nT)
    sub = substeps_for(params, settings.dt)
    rho0 = spin_temperature_state(system, settings.P, (1.0, 0.0, 0.0))
    traj = evolve(rho0, system, params, settings.t_end, settings.dt / sub, sample_every=sub)
    signals = {p: synth_fid(traj, system, ProbeConfig(p)) for p in PROBES}
    out = Path(args.out_dir)
    write_csv(out / "fid.csv", ["t_s", *PROBES],
              zip(traj.times, *(signals[p].values for p in PROBES)))
    fits = {p: fit_fid(signals[p].times, signals[p].values, settings.t0) for p in _probes(args.probe)}
    write_csv(out / "fid_fit.csv", FIT_HEADER, [fit_row(p, f) for p, f in fits.items()])
    if all(f.degenerate for f in fits.values()):
        print("fit degenerate on every probe (no resolvable precession)", file=sys.stderr)
        return EXIT_DEGENERATE
    return EXIT_OK


def cmd_sweep(args) -> int:
    settings = settings_from(args)
    if args.B_list is not None:
        try:
            B_values = [float(b) for b in args.B_list.split(",") if b.strip()]
        except ValueError as exc:
            raise UsageError(f"bad --B-nT list: {exc}") from exc
    else:
        if args.B_max < args.B_min or (args.B_count > 1 and args.B_max == args.B_min):
            raise UsageError("need B-min-nT < B-max-nT")
        B_values = log_spaced(args.B_min, args.B_max, args.B_count)
    result = run_sweep(B_values, settings, _probes(args.probe), jobs=args.jobs)
    out = Path(args.out_dir)
    write_csv(out / "sweep.csv", ["B_nT", "probe", "Gamma0_per_s", "omega0_rad_s", "converged"],
              [[r.B_nT, r.probe, r.fit.Gamma0, r.fit.omega0, r.fit.trusted] for r in result.rows])
    frac = result.converged_fraction()
    summary = dict(result.summary)
    summary["trusted_fraction"] = frac
    write_csv(out / "sweep_summary.csv", ["key", "value"], sorted(summary.items()))
    if frac < QUORUM:
        print(f"only {frac:.0%} of sweep fits are trusted (quorum {QUORUM:.0%})", file=sys.stderr)
        return EXIT_QUORUM
    return EXIT_OK


def cmd_eig(args) -> int:
    settings = RunSettings(twice_I=args.twice_I, R_SE=args.R_SE, R_SD=args.R_SD)
    system = settings.system()
    modes = eigenmodes(build_linear(system, settings.params(args.B_nT)))
    write_csv(Path(args.out_dir) / "eig.csv",
              ["L", "M", "branch", "re_lambda_per_s", "im_lambda_rad_s", "classification_overlap"],
              [[m.L, m.M, m.branch, m.lam.real, m.lam.imag, m.overlap] for m in modes])
    return EXIT_OK


def cmd_perturb(args) -> int:
    settings = settings_from(args)
    system = settings.system()
    params = settings.params(args.B_nT)
    rho0 = spin_temperature_state(system, settings.P, (1.0, 0.0, 0.0))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        pred = perturbative_birefringent(system, params, rho0)
    run = run_fid(args.B_nT, settings, system, probes=("linear",))
    fit = run.fits["linear"]
    note = "; ".join(pred.warnings)
    if pred.degenerate:
        note = "degenerate denominator" + ("; " + note if note else "")
    rows = []
    for M in sorted(pred.lam):
        lam = pred.lam[M]
        amp = pred.multipole_amplitude[M]
        g_ratio = -lam.real / fit.Gamma0 if fit.Gamma0 else math.nan
        w_ratio = abs(lam.imag) / fit.omega0 if fit.omega0 else math.nan
        rows.append([M, lam.real, lam.imag, amp.real, amp.imag, fit.Gamma0, fit.omega0,
                     g_ratio, w_ratio, fit.trusted, note])
    header = ["M", "re_lambda_per_s", "im_lambda_rad_s", "amplitude_re", "amplitude_im",
              "fit_Gamma0_per_s", "fit_omega0_rad_s", "gamma_ratio", "omega_ratio", "fit_converged", "warning"]
    write_csv(Path(args.out_dir) / "perturb.csv", header, rows)
    if fit.degenerate:
        print("simulated birefringent signal could not be fitted", file=sys.stderr)
        return EXIT_DEGENERATE
    return EXIT_OK


def read_series(path: str) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    if not rows or len(rows[0]) < 2 or rows[0][0].strip() != "t_s":
        raise UsageError(f"{path}: expected a header starting with t_s")
    header = [h.strip() for h in rows[0]]
    try:
        data = np.array([[float(x) for x in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise UsageError(f"{path}: non-numeric entry ({exc})") from exc
    if data.ndim != 2 or data.shape[0] == 0 or data.shape[1] != len(header):
        raise UsageError(f"{path}: ragged or empty table")
    cols = {name: data[:, i] for i, name in enumerate(header[1:], 1)}
    return data[:, 0], cols


def cmd_fit(args) -> int:
    t, cols = read_series(args.input)
    t0 = args.t0_us * 1e-6
    try:
        fits = {name: fit_fid(t, y, t0) for name, y in cols.items()}
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    write_csv(Path(args.out_dir) / "fit.csv", FIT_HEADER, [fit_row(n, f) for n, f in fits.items()])
    if all(f.degenerate for f in fits.values()):
        print("fit degenerate on every column", file=sys.stderr)
        return EXIT_DEGENERATE
    return EXIT_OK


COMMANDS = {"fid": cmd_fid, "sweep": cmd_sweep, "eig": cmd_eig, "perturb": cmd_perturb, "fit": cmd_fit}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    except UsageError as exc:
        print(f"serfspin: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"serfspin: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IntegrationError, StabilityError, DefectiveSuperOpError, np.linalg.LinAlgError,
            FloatingPointError) as exc:
        print(f"serfspin: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICS
    except ValueError as exc:
        print(f"serfspin: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
