"""FID runs and magnetic-field sweeps: simulate, read out both probes, fit."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dynamics import GAMMA_E_DEFAULT, SimParams, Trajectory, evolve, stability_limit
from .fitting import FitResult, ThresholdFit, fit_fid, quadratic_threshold_fit
from .hilbert import SpinSystem, build_system, spin_temperature_state
from .observables import FidSignal, ProbeConfig, synth_fid

PROBES = ("circular", "linear")


@dataclass(frozen=True)
class RunSettings:
    """Defaults follow the experiment: Rb-87, R_SD = 147 /s, 300 us fit window."""

    twice_I: int = 3
    R_SE: float = 1e4
    R_SD: float = 147.0
    P: float = 0.1
    t_end: float = 10e-3
    dt: float = 1e-6
    t0: float = 300e-6
    gamma_e: float = GAMMA_E_DEFAULT
    nonlinear: bool = True

    def params(self, B_nT: float) -> SimParams:
        return SimParams.from_field(B_nT, R_SE=self.R_SE, R_SD=self.R_SD, gamma_e=self.gamma_e,
                                    nonlinear=self.nonlinear)

    def system(self) -> SpinSystem:
        return build_system(self.twice_I / 2)


@dataclass
class FidRun:
    B_nT: float
    trajectory: Trajectory
    signals: dict[str, FidSignal]
    fits: dict[str, FitResult]
    substeps: int = 1


def substeps_for(params: SimParams, dt: float) -> int:
    """Integer subdivision of ``dt`` that satisfies the stability guard."""
    return max(1, math.ceil(dt / stability_limit(params) * (1 - 1e-12)))


def run_fid(B_nT: float, settings: RunSettings = RunSettings(), system: SpinSystem | None = None,
            probes=PROBES) -> FidRun:
    """Evolve from a transverse spin-temperature state and fit each probe signal.

    The output grid is always ``settings.dt``; if the guard requires a finer
    step the integrator substeps and samples every ``substeps`` steps.
    """
    system = system or settings.system()
    params = settings.params(B_nT)
    sub = substeps_for(params, settings.dt)
    rho0 = spin_temperature_state(system, settings.P, (1.0, 0.0, 0.0))
    traj = evolve(rho0, system, params, settings.t_end, settings.dt / sub, sample_every=sub)
    signals, fits = {}, {}
    for probe in probes:
        sig = synth_fid(traj, system, ProbeConfig(probe))
        signals[probe] = sig
        fits[probe] = fit_fid(sig.times, sig.values, settings.t0)
    return FidRun(B_nT, traj, signals, fits, sub)


def log_spaced(B_min: float, B_max: float, count: int) -> list[float]:
    if count == 1:
        return [float(B_min)]
    return [float(b) for b in np.geomspace(B_min, B_max, count)]


@dataclass
class SweepRow:
    B_nT: float
    probe: str
    fit: FitResult


@dataclass
class SweepResult:
    rows: list[SweepRow]
    summary: dict = field(default_factory=dict)

    def curve(self, probe: str, trusted_only: bool = True) -> tuple[np.ndarray, np.ndarray]:
        pts = [(r.B_nT, r.fit.Gamma0) for r in self.rows
               if r.probe == probe and (r.fit.trusted or not trusted_only)]
        arr = np.array(pts, dtype=float).reshape(-1, 2)
        return arr[:, 0], arr[:, 1]

    def converged_fraction(self) -> float:
        return sum(r.fit.trusted for r in self.rows) / max(len(self.rows), 1)


def _sweep_point(args) -> list[SweepRow]:
    B, settings, probes = args
    run = run_fid(B, settings, None, probes)
    return [SweepRow(B, p, run.fits[p]) for p in probes]


def run_sweep(B_values, settings: RunSettings = RunSettings(), probes=PROBES, jobs: int = 1) -> SweepResult:
    """Fit both probes at every field; rows come back ordered by (B, probe)."""
    B_values = [float(b) for b in B_values]
    if not B_values or any(b <= 0 for b in B_values) or any(b2 <= b1 for b1, b2 in zip(B_values, B_values[1:])):
        raise ValueError("B values must be nonempty, positive and strictly increasing")
    probes = tuple(probes)
    args = [(B, settings, probes) for B in B_values]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_sweep_point, args))
    else:
        chunks = [_sweep_point(a) for a in args]
    rows = [row for chunk in chunks for row in chunk]
    rows.sort(key=lambda r: (r.B_nT, PROBES.index(r.probe) if r.probe in PROBES else r.probe))
    result = SweepResult(rows)
    result.summary = summarize(result, probes)
    return result


def plateaus(B: np.ndarray, gamma: np.ndarray, n_edge: int = 3) -> tuple[float, float]:
    """Lower and upper plateau estimates: mean of the ``n_edge`` extreme-field points."""
    order = np.argsort(B)
    g = gamma[order]
    return float(np.mean(g[:n_edge])), float(np.mean(g[-n_edge:]))


def midpoint_crossing(B: np.ndarray, gamma: np.ndarray, n_edge: int = 3) -> float:
    """Field where Gamma0 first crosses halfway between its plateaus (log-B interpolation)."""
    order = np.argsort(B)
    B, g = B[order], gamma[order]
    lo, hi = plateaus(B, g, n_edge)
    mid = (lo + hi) / 2
    for i in range(len(B) - 1):
        if (g[i] - mid) * (g[i + 1] - mid) <= 0 and g[i] != g[i + 1]:
            frac = (mid - g[i]) / (g[i + 1] - g[i])
            return float(np.exp(np.log(B[i]) + frac * (np.log(B[i + 1]) - np.log(B[i]))))
    return math.nan


def low_field_subset(B: np.ndarray, gamma: np.ndarray, fraction: float = 0.1, n_edge: int = 3):
    """Points whose excess over the lower plateau is below ``fraction`` of the plateau gap.

    This is the regime where the spin-exchange contribution is still small
    compared with its high-field value.
    """
    lo, hi = plateaus(B, gamma, n_edge)
    keep = gamma - lo <= fraction * (hi - lo)
    return B[keep], gamma[keep]


def summarize(result: SweepResult, probes=PROBES) -> dict:
    out: dict = {}
    for probe in probes:
        B, g = result.curve(probe)
        if B.size < 6:
            continue
        lo, hi = plateaus(B, g)
        out[f"{probe}_plateau_low_per_s"] = lo
        out[f"{probe}_plateau_high_per_s"] = hi
        out[f"{probe}_midpoint_B_nT"] = midpoint_crossing(B, g)
        Bs, gs = low_field_subset(B, g)
        if Bs.size >= 5:
            tf: ThresholdFit = quadratic_threshold_fit(list(zip(Bs, gs)))
            out[f"{probe}_threshold_plateau_per_s"] = tf.plateau
            out[f"{probe}_threshold_exponent"] = tf.exponent
    ratios = []
    by_B: dict = {}
    for r in result.rows:
        if r.fit.trusted:
            by_B.setdefault(r.B_nT, {})[r.probe] = r.fit.Gamma0
    for B, d in sorted(by_B.items()):
        if "circular" in d and "linear" in d and d["circular"] > 0:
            ratios.append(d["linear"] / d["circular"])
    if ratios:
        out["gamma_ratio_median"] = float(np.median(ratios))
        out["gamma_ratio_min"] = float(np.min(ratios))
        out["gamma_ratio_max"] = float(np.max(ratios))
    if "circular_midpoint_B_nT" in out and "linear_midpoint_B_nT" in out:
        out["midpoint_ratio"] = out["linear_midpoint_B_nT"] / out["circular_midpoint_B_nT"]
    return out
