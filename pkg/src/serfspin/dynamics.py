"""Mean-field spin-exchange master equation and its fixed-step integrator.

The right-hand side is::

    drho/dt = A_hfs [I.S, rho]/i + omega_B [S_z, rho]/i
              + R_SE (4 alpha S.<S> - A.S) - R_SD A.S

with ``rho = alpha + A.S``. By default coherences between the two hyperfine
manifolds are projected out, which also removes the hyperfine term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .hilbert import SpinSystem, _require_hermitian, alpha_part

GAMMA_E_DEFAULT = 2 * math.pi * 28.024  # rad s^-1 nT^-1
A_HFS_RB87 = 2 * math.pi * 6.834682610904e9 / 2  # rad/s; hyperfine splitting / (I + 1/2)


class StabilityError(ValueError):
    """Time step too large for the explicit integrator."""

    def __init__(self, dt: float, required: float):
        super().__init__(f"dt={dt:.6g} s violates the stability guard; need dt <= {required:.6g} s")
        self.dt = dt
        self.required = required


class IntegrationError(RuntimeError):
    """Integration aborted because an invariant drifted."""


@dataclass(frozen=True)
class SimParams:
    omega_B: float = 0.0
    R_SE: float = 1e4
    R_SD: float = 147.0
    A_hfs: float = A_HFS_RB87
    project_hyperfine: bool = True
    gamma_e: float = GAMMA_E_DEFAULT
    # False keeps only the part of 4 alpha S.<S> linear in rho (alpha -> identity/dim)
    nonlinear: bool = True

    def __post_init__(self):
        if self.R_SE < 0 or self.R_SD < 0:
            raise ValueError("rates R_SE and R_SD must be non-negative")
        if not math.isfinite(self.omega_B):
            raise ValueError("omega_B must be finite")

    @classmethod
    def from_field(cls, B_nT: float, **kw) -> "SimParams":
        gamma = kw.get("gamma_e", GAMMA_E_DEFAULT)
        return cls(omega_B=gamma * B_nT, **kw)

    def with_(self, **kw) -> "SimParams":
        return replace(self, **kw)

    def max_rate(self) -> float:
        rate = max(self.R_SE, abs(self.omega_B), self.R_SD)
        if not self.project_hyperfine:
            rate = max(rate, abs(self.A_hfs))
        return rate


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    params: SimParams

    def __len__(self) -> int:
        return len(self.times)


def project_block_diagonal(mat: np.ndarray, system: SpinSystem) -> np.ndarray:
    """Zero every element coupling different hyperfine manifolds."""
    return np.where(system.block_mask, mat, 0)


def _commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


def _rhs(rho: np.ndarray, system: SpinSystem, params: SimParams) -> np.ndarray:
    sx, sy, sz = system.S_ops
    alpha = alpha_part(rho, system)
    AS = rho - alpha
    s_mean = [np.trace(rho @ op).real for op in system.S_ops]
    S_dot = s_mean[0] * sx + s_mean[1] * sy + s_mean[2] * sz
    if params.nonlinear:
        exchange = 4 * alpha @ S_dot
    else:
        exchange = (4 / system.dim) * S_dot
    out = -1j * params.omega_B * _commutator(sz, rho)
    out += params.R_SE * (exchange - AS) - params.R_SD * AS
    if params.project_hyperfine:
        return project_block_diagonal(out, system)
    return out - 1j * params.A_hfs * _commutator(system.IS, rho)


def liouville_rhs(rho: np.ndarray, system: SpinSystem, params: SimParams) -> np.ndarray:
    """Time derivative of ``rho`` under hyperfine, Zeeman, spin-exchange and spin-destruction terms."""
    rho = np.asarray(rho, dtype=complex)
    _require_hermitian(rho)
    return _rhs(rho, system, params)


def stability_limit(params: SimParams) -> float:
    """Largest step allowed by the guard ``dt * max_rate <= 0.1``."""
    rate = params.max_rate()
    return math.inf if rate == 0 else 0.1 / rate


class CompiledRHS:
    """``liouville_rhs`` rewritten as matrices acting on vectorized states.

    Every piece is obtained by probing ``_rhs`` term by term with elementary
    matrices, so this is the same equation in Liouville-space form:
    ``rhs(v) = L v + R_SE * sum_j <S_j>(v) N_j v``; in the linear-theory
    variant ``N`` vanishes. With the hyperfine projection on, only same-F
    elements are carried.
    """

    def __init__(self, system: SpinSystem, params: SimParams):
        self.system = system
        self.params = params
        d = system.dim
        if params.project_hyperfine:
            self.index = np.flatnonzero(system.block_mask.reshape(-1))
        else:
            self.index = np.arange(d * d)
        n = self.index.size
        pos = {k: i for i, k in enumerate(self.index)}
        self.transpose = np.array([pos[(k % d) * d + k // d] for k in self.index])

        linear = params.with_(R_SE=0.0)
        L = np.empty((n, n), dtype=complex)
        N = np.empty((3, n, n), dtype=complex)
        for col, k in enumerate(self.index):
            E = np.zeros((d, d), dtype=complex)
            E.flat[k] = 1.0
            L[:, col] = _rhs(E, system, linear).reshape(-1)[self.index]
            L[:, col] -= params.R_SE * (E - alpha_part(E, system)).reshape(-1)[self.index]
            base = 4 * alpha_part(E, system)
            for j, op in enumerate(system.S_ops):
                term = base @ op
                if params.project_hyperfine:
                    term = project_block_diagonal(term, system)
                N[j, :, col] = term.reshape(-1)[self.index]
                if not params.nonlinear:
                    # 4 S_j <S_j> / dim: linear in E, so it belongs in L
                    lin = (4 / d) * np.trace(E @ op) * op
                    if params.project_hyperfine:
                        lin = project_block_diagonal(lin, system)
                    L[:, col] += params.R_SE * lin.reshape(-1)[self.index]
        if not params.nonlinear:
            N[:] = 0
        self.L = L
        self.N = N
        self.s_rows = np.stack([op.T.reshape(-1)[self.index] for op in system.S_ops])

    def vec(self, rho: np.ndarray) -> np.ndarray:
        return np.asarray(rho, dtype=complex).reshape(-1)[self.index]

    def unvec(self, v: np.ndarray) -> np.ndarray:
        d = self.system.dim
        out = np.zeros(d * d, dtype=complex)
        out[self.index] = v
        return out.reshape(d, d)

    def hermitize(self, v: np.ndarray) -> np.ndarray:
        return (v + v[self.transpose].conj()) / 2

    def __call__(self, v: np.ndarray) -> np.ndarray:
        if not self.params.nonlinear:
            return self.L @ v
        s = (self.s_rows @ v).real
        return self.L @ v + self.params.R_SE * (s @ (self.N @ v))


def evolve(rho0: np.ndarray, system: SpinSystem, params: SimParams, t_end: float, dt: float,
           sample_every: int = 1) -> Trajectory:
    """Integrate with classical RK4 at fixed ``dt``, sampling every ``sample_every`` steps."""
    if dt <= 0 or t_end < 0:
        raise ValueError("need dt > 0 and t_end >= 0")
    if sample_every < 1:
        raise ValueError("sample_every must be >= 1")
    limit = stability_limit(params)
    if dt > limit * (1 + 1e-12):
        raise StabilityError(dt, limit)

    rho = np.array(rho0, dtype=complex)
    _require_hermitian(rho)
    if params.project_hyperfine:
        rho = project_block_diagonal(rho, system)
    tr0 = np.trace(rho).real

    n_steps = int(round(t_end / dt))
    n_samples = n_steps // sample_every + 1
    times = np.arange(n_samples) * (sample_every * dt)
    states = np.empty((n_samples, system.dim, system.dim), dtype=complex)
    states[0] = rho

    f = CompiledRHS(system, params)
    v = f.vec(rho)
    diag = np.array([i for i, k in enumerate(f.index) if k % (system.dim + 1) == 0])
    half = dt / 2
    for step in range(1, n_steps + 1):
        k1 = f(v)
        k2 = f(v + half * k1)
        k3 = f(v + half * k2)
        k4 = f(v + dt * k3)
        v = f.hermitize(v + (dt / 6) * (k1 + 2 * k2 + 2 * k3 + k4))
        if step % sample_every == 0:
            drift = abs(v[diag].sum().real - tr0)
            if drift > 1e-6 or not np.isfinite(drift):
                raise IntegrationError(f"trace drift {drift:.3g} at t={step * dt:.6g} s")
            states[step // sample_every] = f.unvec(v)
    return Trajectory(times, states, params)
