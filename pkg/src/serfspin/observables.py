"""Probe-absorption signals built from multipole moments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .angular import HalfInt, tensor_basis
from .dynamics import Trajectory
from .hilbert import SpinSystem
from .multipole import MultipoleSet, basis_stack, component_series

JONES = {
    "circular_plus": np.array([-1, -1j, 0]) / np.sqrt(2),
    "circular_minus": np.array([1, -1j, 0]) / np.sqrt(2),
    "linear_pi": np.array([0, 0, 1], dtype=complex),
}
ALIASES = {"circular": "circular_plus", "linear": "linear_pi"}

# multipole (L, M) read directly when no susceptibility table is supplied
DEFAULT_COMPONENT = {"circular_plus": (1, 1), "circular_minus": (1, -1), "linear_pi": (2, 2)}


class VanishingSignalError(ValueError):
    """A normalizing amplitude is zero, e.g. for an unpolarized state."""


@dataclass
class ProbeConfig:
    """Probe polarization plus optional susceptibility weights.

    ``chi_weights`` maps ``(L, M, F, Fp)`` to a 3x3 complex array of
    ``chi^{ij}_{LMFF'}``. Without it the designated multipole of manifold
    ``F`` (upper manifold if None) is returned directly.
    """

    polarization: str | np.ndarray = "circular_plus"
    chi_weights: dict | None = None
    path_scale: float = 1.0
    F: float | HalfInt | None = None

    def __post_init__(self):
        if isinstance(self.polarization, str):
            name = ALIASES.get(self.polarization, self.polarization)
            if name not in JONES:
                raise ValueError(f"unknown polarization {self.polarization!r}")
            self.polarization = name
        else:
            e = np.asarray(self.polarization, dtype=complex)
            if e.shape != (3,):
                raise ValueError("Jones vector must have 3 components")
            norm = np.linalg.norm(e)
            if norm == 0:
                raise ValueError("Jones vector must be nonzero")
            self.polarization = e / norm
        if self.chi_weights is not None:
            self.chi_weights = {
                (int(L), int(M), HalfInt.of(F), HalfInt.of(Fp)): np.asarray(w, dtype=complex).reshape(3, 3)
                for (L, M, F, Fp), w in self.chi_weights.items()
            }

    @property
    def jones(self) -> np.ndarray:
        if isinstance(self.polarization, str):
            return JONES[self.polarization]
        return self.polarization

    def default_component(self) -> tuple[int, int]:
        if not isinstance(self.polarization, str):
            raise ValueError("an explicit Jones vector needs a chi_weights table")
        return DEFAULT_COMPONENT[self.polarization]


@dataclass
class FidSignal:
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.shape != self.values.shape:
            raise ValueError("times and values must have equal length")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")


def _upper(system: SpinSystem, probe: ProbeConfig) -> HalfInt:
    return system.F_values[0] if probe.F is None else HalfInt.of(probe.F)


def _contract(e: np.ndarray, chi: np.ndarray) -> float:
    return float(np.real(e.conj() @ np.imag(chi) @ e))


def absorption_exponent(ms: MultipoleSet, probe: ProbeConfig, system: SpinSystem | None = None) -> float:
    """Optical-depth exponent of one multipole set."""
    if probe.chi_weights is None:
        L, M = probe.default_component()
        if probe.F is not None:
            F = HalfInt.of(probe.F)
        elif system is not None:
            F = system.F_values[0]
        else:
            F = max(k[2] for k in ms.keys())
        return float(np.real(ms.get(L, M, F, F)))

    chi = np.zeros((3, 3), dtype=complex)
    for key, value in ms.entries.items():
        w = probe.chi_weights.get(key)
        if w is None:
            if abs(value) > 1e-14:
                raise ValueError(f"chi_weights has no entry for nonzero multipole {key}")
            continue
        chi += w * value
    return probe.path_scale * _contract(probe.jones, chi)


def synth_fid(traj: Trajectory, system: SpinSystem, probe: ProbeConfig, intensity: bool = False) -> FidSignal:
    """Per-sample absorption exponent, or ``I/I0 = exp(-exponent)`` if ``intensity``."""
    if probe.chi_weights is None:
        L, M = probe.default_component()
        F = _upper(system, probe)
        values = component_series(traj, system, L, M, F).real
    else:
        basis = tensor_basis(system)
        coeffs = np.einsum("kij,nij->nk", basis_stack(basis).conj(), traj.states)
        weights = np.zeros((len(basis), 3, 3), dtype=complex)
        for i, t in enumerate(basis):
            w = probe.chi_weights.get(t.key)
            if w is not None:
                weights[i] = w
            elif np.max(np.abs(coeffs[:, i])) > 1e-14:
                raise ValueError(f"chi_weights has no entry for nonzero multipole {t.key}")
        chi = np.einsum("nk,kij->nij", coeffs, weights)
        e = probe.jones
        values = probe.path_scale * np.real(np.einsum("i,nij,j->n", e.conj(), np.imag(chi), e))
    if intensity:
        values = np.exp(-values)
    return FidSignal(traj.times.copy(), values)


def _envelope_at(times: np.ndarray, series: np.ndarray, t0: float, period: float) -> float:
    # the complex multipole series is the analytic signal of its real part
    lo, hi = t0 - period / 2, t0 + period / 2
    if lo < times[0]:
        lo, hi = times[0], times[0] + period
    if hi > times[-1]:
        lo, hi = max(times[0], times[-1] - period), times[-1]
    sel = (times >= lo) & (times <= hi)
    return float(np.mean(np.abs(series[sel])))


def eta_br(traj: Trajectory, system: SpinSystem, t0: float, F=None) -> float:
    """Birefringent-to-Larmor oscillator ratio ``|rho_22| / |rho_11|`` at ``t0``."""
    if not traj.times[0] <= t0 <= traj.times[-1]:
        raise ValueError(f"t0={t0} outside trajectory span")
    F = system.F_values[0] if F is None else HalfInt.of(F)
    larmor = component_series(traj, system, 1, 1, F)
    biref = component_series(traj, system, 2, 2, F)
    i0 = int(np.argmin(np.abs(traj.times - t0)))
    if np.max(np.abs(larmor)) < 1e-14:
        raise VanishingSignalError("Larmor coherence vanishes; state is unpolarized")

    phase = np.unwrap(np.angle(larmor))
    j0, j1 = max(i0 - 5, 0), min(i0 + 5, len(phase) - 1)
    omega = abs(phase[j1] - phase[j0]) / (traj.times[j1] - traj.times[j0])
    span = traj.times[-1] - traj.times[0]
    period = min(2 * np.pi / omega, span) if omega > 0 else span

    den = _envelope_at(traj.times, larmor, t0, period)
    if den < 1e-14:
        raise VanishingSignalError("Larmor envelope vanishes at t0")
    return _envelope_at(traj.times, biref, t0, period) / den
