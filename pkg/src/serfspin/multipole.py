"""Irreducible multipole coefficients rho_LM(F, F') of density matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .angular import HalfInt, Number, TensorOperator
from .dynamics import Trajectory
from .hilbert import SpinSystem


def _key(L: int, M: int, F: Number, Fp: Number) -> tuple:
    return (int(L), int(M), HalfInt.of(F), HalfInt.of(Fp))


@dataclass
class MultipoleSet:
    """Map ``(L, M, F, Fp) -> rho_LM(F, Fp)``; half-integers stored as :class:`HalfInt`."""

    entries: dict

    def __getitem__(self, key) -> complex:
        return self.entries[_key(*key)]

    def get(self, L, M, F, Fp, default=0j) -> complex:
        return self.entries.get(_key(L, M, F, Fp), default)

    def keys(self):
        return self.entries.keys()

    def __len__(self) -> int:
        return len(self.entries)

    def scaled_sum(self, a: complex, other: "MultipoleSet", b: complex) -> "MultipoleSet":
        return MultipoleSet({k: a * v + b * other.entries[k] for k, v in self.entries.items()})

    def reality_violation(self) -> float:
        """Max deviation from ``rho_LM(F,F')* = (-1)^(F-F'+M) rho_L-M(F',F)``."""
        worst = 0.0
        for (L, M, F, Fp), v in self.entries.items():
            partner = self.entries.get((L, -M, Fp, F))
            if partner is None:
                continue
            sign = -1 if ((F.twice_value - Fp.twice_value) // 2 + M) % 2 else 1
            worst = max(worst, abs(np.conj(v) - sign * partner))
        return worst


def basis_stack(basis: list[TensorOperator]) -> np.ndarray:
    return np.stack([t.matrix for t in basis])


def decompose(rho: np.ndarray, basis: list[TensorOperator]) -> MultipoleSet:
    """``rho_LM(F,F') = Tr(T_LM(F,F')^dagger rho)`` for every basis element."""
    rho = np.asarray(rho)
    coeffs = np.einsum("kij,ij->k", basis_stack(basis).conj(), rho)
    return MultipoleSet({t.key: complex(c) for t, c in zip(basis, coeffs)})


def reconstruct(ms: MultipoleSet, basis: list[TensorOperator]) -> np.ndarray:
    """Resum ``sum rho_LM(F,F') T_LM(F,F')``; every basis key must be present."""
    missing = [t.key for t in basis if t.key not in ms.entries]
    if missing:
        raise KeyError(f"multipole set lacks {len(missing)} entries, e.g. {missing[0]}")
    coeffs = np.array([ms.entries[t.key] for t in basis])
    return np.einsum("k,kij->ij", coeffs, basis_stack(basis))


def component_series(traj: Trajectory, system: SpinSystem, L: int, M: int, F: Number,
                     Fp: Number | None = None) -> np.ndarray:
    """Complex time series of one multipole coefficient along a trajectory."""
    from .angular import tensor_operator

    Fp = F if Fp is None else Fp
    F, Fp = HalfInt.of(F), HalfInt.of(Fp)
    if F not in system.F_values or Fp not in system.F_values:
        raise ValueError(f"no hyperfine manifold F={F}/F'={Fp} for I={system.I}")
    lo = abs(F.twice_value - Fp.twice_value) // 2
    hi = (F.twice_value + Fp.twice_value) // 2
    if not lo <= L <= hi or abs(M) > L:
        raise ValueError(f"(L={L}, M={M}) out of range for F={F}, F'={Fp}")
    T = tensor_operator(system, L, M, F, Fp).matrix
    return np.einsum("ij,nij->n", T.conj(), traj.states)
