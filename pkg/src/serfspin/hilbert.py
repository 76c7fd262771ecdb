"""Ground-state Hilbert space of an alkali atom: electron spin 1/2 plus nuclear spin I.

Operators are expressed in the coupled ``|F m>`` basis, upper hyperfine manifold
first and ``m`` descending inside each manifold. Density matrices are plain
complex ``ndarray`` objects; :func:`check_density_matrix` validates them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import bisect

from .angular import HalfInt, Number, clebsch_gordan

SUPPORTED_TWICE_I = (1, 2, 3, 5, 7)

_PAULI = (
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)


def spin_matrices(j: Number) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cartesian spin matrices for spin ``j`` in the ``|j m>`` basis, m descending."""
    j2 = HalfInt.of(j).twice_value
    jf = j2 / 2
    ms = jf - np.arange(j2 + 1)
    jp = np.zeros((j2 + 1, j2 + 1), dtype=complex)
    for i in range(1, j2 + 1):
        m = ms[i]
        jp[i - 1, i] = np.sqrt(jf * (jf + 1) - m * (m + 1))
    jx = (jp + jp.conj().T) / 2
    jy = (jp - jp.conj().T) / 2j
    jz = np.diag(ms).astype(complex)
    return jx, jy, jz


@dataclass(frozen=True, eq=False)
class SpinSystem:
    """Operators of the coupled electron-nuclear ground state.

    ``U`` maps coupled-basis coordinates to the uncoupled nuclear (x) electron
    product basis; it is kept for partial traces over the electron.
    """

    I: HalfInt
    dim: int
    S_ops: tuple[np.ndarray, np.ndarray, np.ndarray]
    I_ops: tuple[np.ndarray, np.ndarray, np.ndarray]
    F_ops: tuple[np.ndarray, np.ndarray, np.ndarray]
    IS: np.ndarray
    basis_labels: tuple[tuple[HalfInt, HalfInt], ...]
    U: np.ndarray = field(repr=False)

    @property
    def F_values(self) -> tuple[HalfInt, ...]:
        return tuple(dict.fromkeys(F for F, _ in self.basis_labels))

    @property
    def n_nuclear(self) -> int:
        return self.I.twice_value + 1

    def block_slice(self, F: Number) -> slice:
        F = HalfInt.of(F)
        idx = [i for i, (Fi, _) in enumerate(self.basis_labels) if Fi == F]
        if not idx:
            raise ValueError(f"F={F} not present for I={self.I}")
        return slice(idx[0], idx[-1] + 1)

    @property
    def block_mask(self) -> np.ndarray:
        """Boolean dim x dim mask of same-F matrix elements."""
        Fs = np.array([F.twice_value for F, _ in self.basis_labels])
        return Fs[:, None] == Fs[None, :]

    def S_spherical(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(S_-1, S_0, S_+1)`` with ``S_+-1 = -+(S_x +- i S_y)/sqrt(2)``."""
        sx, sy, sz = self.S_ops
        return ((sx - 1j * sy) / np.sqrt(2), sz, -(sx + 1j * sy) / np.sqrt(2))


def build_system(I: Number) -> SpinSystem:
    I = HalfInt.of(I)
    if I.twice_value not in SUPPORTED_TWICE_I:
        raise ValueError(
            f"nuclear spin I={I} unsupported; choose one of "
            + ", ".join(str(HalfInt(t)) for t in SUPPORTED_TWICE_I)
        )
    nI = I.twice_value + 1
    dim = 2 * nI
    ix, iy, iz = spin_matrices(I)
    sx, sy, sz = spin_matrices(HalfInt(1))
    eye_n, eye_e = np.eye(nI), np.eye(2)
    unc_I = [np.kron(op, eye_e) for op in (ix, iy, iz)]
    unc_S = [np.kron(eye_n, op) for op in (sx, sy, sz)]

    mIs = [HalfInt(I.twice_value - 2 * a) for a in range(nI)]
    mSs = [HalfInt(1), HalfInt(-1)]
    labels = []
    U = np.zeros((dim, dim))
    col = 0
    for F in (I + HalfInt(1), I - HalfInt(1)):
        if F.twice_value < 0:
            continue
        for b in range(F.twice_value + 1):
            m = HalfInt(F.twice_value - 2 * b)
            for a, mI in enumerate(mIs):
                for s, mS in enumerate(mSs):
                    U[2 * a + s, col] = clebsch_gordan(I, HalfInt(1), mI, mS, F, m)
            labels.append((F, m))
            col += 1

    def to_coupled(op: np.ndarray) -> np.ndarray:
        out = U.T @ op @ U
        out.setflags(write=False)
        return out

    S_ops = tuple(to_coupled(op) for op in unc_S)
    I_ops = tuple(to_coupled(op) for op in unc_I)
    F_ops = tuple(to_coupled(a + b) for a, b in zip(unc_I, unc_S))
    IS = to_coupled(sum(a @ b for a, b in zip(unc_I, unc_S)))
    U.setflags(write=False)
    return SpinSystem(I, dim, S_ops, I_ops, F_ops, IS, tuple(labels), U)


def check_density_matrix(rho: np.ndarray, *, herm_tol: float = 1e-12, trace_tol: float = 1e-12,
                         pos_tol: float = 1e-9) -> None:
    """Raise ``ValueError`` unless ``rho`` is Hermitian, unit-trace and positive."""
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError(f"density matrix must be square, got shape {rho.shape}")
    herm = np.max(np.abs(rho - rho.conj().T))
    if herm > herm_tol:
        raise ValueError(f"density matrix not Hermitian (max |rho - rho^H| = {herm:.3g})")
    tr = np.trace(rho)
    if abs(tr - 1) > trace_tol:
        raise ValueError(f"density matrix trace {tr.real:.15g} != 1")
    lo = np.linalg.eigvalsh((rho + rho.conj().T) / 2)[0]
    if lo < -pos_tol:
        raise ValueError(f"density matrix has negative eigenvalue {lo:.3g}")


def _require_hermitian(rho: np.ndarray, tol: float = 1e-10) -> None:
    scale = max(1.0, float(np.max(np.abs(rho))))
    if np.max(np.abs(rho - rho.conj().T)) > tol * scale:
        raise ValueError("input matrix is not Hermitian")


def electron_partial_traces(rho: np.ndarray, system: SpinSystem) -> tuple[np.ndarray, list[np.ndarray]]:
    """Nuclear-space matrices ``Tr_e(rho)`` and ``Tr_e(rho sigma_j)``."""
    nI = system.n_nuclear
    U = system.U
    r = (U @ rho @ U.T).reshape(nI, 2, nI, 2)
    tr_e = np.einsum("asbs->ab", r)
    # Tr_e(rho sigma_j) = sum_{s,t} rho[a s, b t] sigma_j[t, s]
    with_pauli = [np.einsum("asbt,ts->ab", r, p) for p in _PAULI]
    return tr_e, with_pauli


def embed_nuclear(op: np.ndarray, system: SpinSystem) -> np.ndarray:
    """Nuclear operator ``op`` (x) identity on the electron, in the coupled basis."""
    U = system.U
    return U.T @ np.kron(op, np.eye(2)) @ U


def decompose_alpha_A(rho: np.ndarray, system: SpinSystem) -> tuple[np.ndarray, list[np.ndarray]]:
    """Split ``rho = alpha + A . S`` into its nuclear and electronic parts.

    Returns ``alpha`` and the three ``A_j``, all embedded in the coupled space.
    """
    rho = np.asarray(rho, dtype=complex)
    _require_hermitian(rho)
    tr_e, with_pauli = electron_partial_traces(rho, system)
    alpha = embed_nuclear(tr_e / 2, system)
    A = [embed_nuclear(m, system) for m in with_pauli]
    return alpha, A


def alpha_part(rho: np.ndarray, system: SpinSystem) -> np.ndarray:
    """Nuclear part ``alpha`` of ``rho`` (no Hermiticity check; linear in ``rho``)."""
    nI = system.n_nuclear
    U = system.U
    r = (U @ rho @ U.T).reshape(nI, 2, nI, 2)
    tr_e = r[:, 0, :, 0] + r[:, 1, :, 1]
    return U.T @ np.kron(tr_e / 2, np.eye(2)) @ U


def _thermal(system: SpinSystem, Fn: np.ndarray, beta: float) -> np.ndarray:
    w, v = np.linalg.eigh(Fn)
    p = np.exp(beta * (w - w.max()))
    rho = (v * p) @ v.conj().T
    return rho / np.trace(rho).real


def spin_temperature_state(system: SpinSystem, P: float, direction=(1.0, 0.0, 0.0)) -> np.ndarray:
    """Spin-temperature state ``exp(beta F.n)/Z`` with electron polarization ``P`` along ``n``."""
    if not 0 <= P < 1:
        raise ValueError(f"polarization must satisfy 0 <= P < 1, got {P}")
    n = np.asarray(direction, dtype=float)
    norm = np.linalg.norm(n)
    if norm == 0:
        raise ValueError("direction must be nonzero")
    n = n / norm
    if P == 0:
        return np.eye(system.dim, dtype=complex) / system.dim

    Fn = sum(c * op for c, op in zip(n, system.F_ops))
    Sn = sum(c * op for c, op in zip(n, system.S_ops))

    def excess(beta: float) -> float:
        return 2 * np.trace(_thermal(system, Fn, beta) @ Sn).real - P

    hi = 1.0
    while excess(hi) < 0:
        hi *= 2
    beta = bisect(excess, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    rho = _thermal(system, Fn, beta)
    return (rho + rho.conj().T) / 2


def expect_S_spherical(rho: np.ndarray, system: SpinSystem) -> np.ndarray:
    """``[<S_-1>, <S_0>, <S_+1>]`` with ``<S_k> = Tr(rho S_k)``."""
    return np.array([np.trace(rho @ op) for op in system.S_spherical()])


def expect(rho: np.ndarray, op: np.ndarray) -> complex:
    return complex(np.trace(rho @ op))
