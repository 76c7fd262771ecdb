"""Linear spin-exchange superoperator, its eigenmodes, and the mean-field coupling.

States live in the block-diagonal Liouville space: the same-F elements of the
density matrix, flattened row-major (34 numbers for I = 3/2). The master
equation splits exactly into::

    drho/dt = G rho + 2 R_SE sum_k s^k Q_k rho,     s^k = (-1)^k <S_-k>

where ``G`` is the linear superoperator (Zeeman, linearized spin exchange,
spin destruction) and ``Q_k`` carries the part of ``4 alpha S.<S>`` that is
quadratic in the polarization. ``s^k`` evolves like the ``M = k`` dipole
multipole, so ``Q_k`` raises the magnetic quantum number by ``k``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .angular import HalfInt, TensorOperator, tensor_basis
from .dynamics import SimParams, project_block_diagonal
from .hilbert import SpinSystem, alpha_part, expect_S_spherical

K_VALUES = (-1, 0, 1)


class DefectiveSuperOpError(np.linalg.LinAlgError):
    """Eigenvector matrix too ill-conditioned to biorthonormalize."""


@dataclass(frozen=True, eq=False)
class LiouvilleSpace:
    """Index bookkeeping for vectorized block-diagonal operators."""

    system: SpinSystem
    index: np.ndarray
    tensors: list[TensorOperator]
    tensor_matrix: np.ndarray  # columns: vectorized same-F tensor operators

    @classmethod
    def of(cls, system: SpinSystem) -> "LiouvilleSpace":
        index = np.flatnonzero(system.block_mask.reshape(-1))
        tensors = [t for t in tensor_basis(system) if t.F == t.Fp]
        tm = np.column_stack([t.matrix.reshape(-1)[index] for t in tensors])
        return cls(system, index, tensors, tm)

    @property
    def size(self) -> int:
        return self.index.size

    def vec(self, mat: np.ndarray) -> np.ndarray:
        return np.asarray(mat, dtype=complex).reshape(-1)[self.index]

    def unvec(self, v: np.ndarray) -> np.ndarray:
        d = self.system.dim
        out = np.zeros(d * d, dtype=complex)
        out[self.index] = v
        return out.reshape(d, d)

    def tensor_coords(self, v: np.ndarray) -> np.ndarray:
        """Coefficients ``Tr(T^dagger rho)`` of a vectorized operator."""
        return self.tensor_matrix.conj().T @ v

    def tensor_labels(self) -> list[tuple[int, int, HalfInt]]:
        return [(t.L, t.M, t.F) for t in self.tensors]


@dataclass(frozen=True, eq=False)
class LinearSuperOp:
    matrix: np.ndarray
    params: SimParams
    space: LiouvilleSpace

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return self.space.unvec(self.matrix @ self.space.vec(rho))


def linear_action(rho: np.ndarray, system: SpinSystem, params: SimParams) -> np.ndarray:
    """``G rho``, written out in operator form."""
    sz = system.S_ops[2]
    alpha = alpha_part(rho, system)
    s_mean = [np.trace(rho @ op) for op in system.S_ops]
    S_dot = sum(c * op for c, op in zip(s_mean, system.S_ops))
    out = -1j * params.omega_B * (sz @ rho - rho @ sz)
    out += params.R_SE * (alpha - rho + (4 / system.dim) * S_dot)
    out -= params.R_SD * (rho - alpha)
    return project_block_diagonal(out, system)


def build_linear(system: SpinSystem, params: SimParams, space: LiouvilleSpace | None = None) -> LinearSuperOp:
    """Assemble ``G`` column by column on the block-diagonal Liouville space."""
    space = space or LiouvilleSpace.of(system)
    n = space.size
    G = np.empty((n, n), dtype=complex)
    for col in range(n):
        e = np.zeros(n, dtype=complex)
        e[col] = 1.0
        G[:, col] = space.vec(linear_action(space.unvec(e), system, params))
    G.setflags(write=False)
    return LinearSuperOp(G, params, space)


def q_matrices(system: SpinSystem, space: LiouvilleSpace | None = None) -> dict[int, np.ndarray]:
    """``Q_k rho = 2 P[(alpha(rho) - Tr(rho)/dim) S_k]`` as matrices, k = -1, 0, +1."""
    space = space or LiouvilleSpace.of(system)
    n = space.size
    S_sph = dict(zip(K_VALUES, system.S_spherical()))
    out = {k: np.empty((n, n), dtype=complex) for k in K_VALUES}
    eye = np.eye(system.dim)
    for col in range(n):
        e = np.zeros(n, dtype=complex)
        e[col] = 1.0
        rho = space.unvec(e)
        nuclear = alpha_part(rho, system) - np.trace(rho) / system.dim * eye
        for k in K_VALUES:
            out[k][:, col] = space.vec(project_block_diagonal(2 * nuclear @ S_sph[k], system))
    return out


def mean_field_weights(rho: np.ndarray, system: SpinSystem) -> dict[int, complex]:
    """``s^k = (-1)^k <S_-k>``, the factor multiplying ``Q_k``."""
    s = dict(zip(K_VALUES, expect_S_spherical(rho, system)))
    return {k: (-1) ** k * s[-k] for k in K_VALUES}


@dataclass(eq=False)
class EigenMode:
    lam: complex
    L: int
    M: int
    branch: str  # "+" slow, "-" fast, "mixed" if classification ambiguous
    right_vec: np.ndarray = field(repr=False)
    left_vec: np.ndarray = field(repr=False)
    overlap: float = 1.0

    @property
    def label(self) -> tuple[int, int, str]:
        return (self.L, self.M, self.branch)


def _classify(v: np.ndarray, space: LiouvilleSpace) -> tuple[int, int, float, dict]:
    c = space.tensor_coords(v)
    w = np.abs(c) ** 2
    w = w / w.sum()
    weights: dict[tuple[int, int], float] = {}
    for (L, M, _), wi in zip(space.tensor_labels(), w):
        weights[(L, M)] = weights.get((L, M), 0.0) + float(wi)
    (L, M), best = max(weights.items(), key=lambda kv: kv[1])
    return L, M, best, weights


def eigenmodes(sop: LinearSuperOp, *, cond_limit: float = 1e10) -> list[EigenMode]:
    """Dense eigen-decomposition of ``G`` with (L, M, branch) labels.

    ``G`` commutes with rotations about z and preserves tensor rank on the
    block-diagonal space, so it is block-diagonal in (L, M) in the tensor
    basis. Each block is decomposed on its own, which keeps degenerate
    eigenvalues from mixing different (L, M). If the blocks are not
    decoupled to roundoff the whole matrix is decomposed at once.
    """
    space = sop.space
    T = space.tensor_matrix
    G_t = T.conj().T @ sop.matrix @ T
    labels = space.tensor_labels()
    sectors: dict[tuple[int, int], list[int]] = {}
    for i, (L, M, _) in enumerate(labels):
        sectors.setdefault((L, M), []).append(i)

    scale = max(np.abs(G_t).max(), 1e-300)
    mask = np.zeros(G_t.shape, dtype=bool)
    for idx in sectors.values():
        mask[np.ix_(idx, idx)] = True
    separable = np.abs(G_t[~mask]).max(initial=0.0) <= 1e-12 * scale

    n = space.size
    lams = np.empty(n, dtype=complex)
    R_t = np.zeros((n, n), dtype=complex)
    if separable:
        col = 0
        for idx in sectors.values():
            w, v = scipy.linalg.eig(G_t[np.ix_(idx, idx)])
            lams[col:col + len(idx)] = w
            R_t[np.ix_(idx, range(col, col + len(idx)))] = v
            col += len(idx)
    else:
        lams, R_t = scipy.linalg.eig(G_t)

    R = T @ R_t
    cond = np.linalg.cond(R)
    if not np.isfinite(cond) or cond > cond_limit:
        raise DefectiveSuperOpError(f"eigenvector matrix condition number {cond:.3g} exceeds {cond_limit:.3g}")
    Linv = np.linalg.inv(R)

    modes = []
    for i in range(n):
        L, M, best, _ = _classify(R[:, i], space)
        modes.append(EigenMode(complex(lams[i]), L, M, "+", R[:, i].copy(), Linv[i].copy(), best))

    groups: dict[tuple[int, int], list[EigenMode]] = {}
    for m in modes:
        if m.overlap < 0.5:
            m.branch = "mixed"
            warnings.warn(f"eigenmode at lambda={m.lam:.6g} has ambiguous (L, M) classification "
                          f"(overlap {m.overlap:.3f})", RuntimeWarning, stacklevel=2)
        else:
            groups.setdefault((m.L, m.M), []).append(m)
    for group in groups.values():
        group.sort(key=lambda m: (abs(m.lam.real), m.lam.imag))
        for j, m in enumerate(group):
            m.branch = "+" if j == 0 else "-" if j == 1 else f"-{j}"
    modes.sort(key=lambda m: (m.L, m.M, m.branch != "+", m.branch))
    return modes


def find_mode(modes: list[EigenMode], L: int, M: int, branch: str = "+") -> EigenMode:
    for m in modes:
        if (m.L, m.M, m.branch) == (L, M, branch):
            return m
    raise KeyError(f"no eigenmode labelled (L={L}, M={M}, {branch})")


def q_coefficients(system: SpinSystem, modes: list[EigenMode],
                   space: LiouvilleSpace | None = None) -> dict[tuple, complex]:
    """``Q{k}`` between eigenmodes: ``(k, source label, target label) -> left(target) Q_k right(source)``."""
    Qs = q_matrices(system, space)
    R = np.column_stack([m.right_vec for m in modes])
    Lv = np.vstack([m.left_vec for m in modes])
    out = {}
    for k, Qk in Qs.items():
        Qe = Lv @ Qk @ R
        for a, tgt in enumerate(modes):
            for b, src in enumerate(modes):
                out[(k, src.label, tgt.label)] = complex(Qe[a, b])
    return out


@dataclass
class PerturbativePrediction:
    """Driven birefringent response predicted from the slow dipole modes."""

    lam: dict  # M -> predicted complex exponent of the M = +-2 coherence
    mode_amplitudes: dict  # (L, M, branch) -> eigen-coefficient at t0
    multipole_amplitude: dict  # M -> rho_2M(F_upper, F_upper) at t0
    t0: float
    larmor: dict  # M -> lambda_+ of the (1, M) mode
    degenerate: bool = False
    warnings: list = field(default_factory=list)


def perturbative_birefringent(system: SpinSystem, params: SimParams, rho0: np.ndarray,
                              t0: float | None = None, L: int = 2,
                              degenerate_tol: float = 1e-6) -> PerturbativePrediction:
    """First-order mean-field prediction for the ``L = |M| = 2`` coherence.

    The dipole modes and ``s^k`` are taken on their slow branch only, as at
    long times; their product drives each target mode through ``Q_k`` with
    denominator ``-lambda_target + lambda_1m + lambda_1k``. Denominators
    below ``degenerate_tol * R_SE`` are flagged and skipped.
    """
    t0 = 3.0 / params.R_SE if t0 is None else t0
    space = LiouvilleSpace.of(system)
    sop = build_linear(system, params, space)
    modes = eigenmodes(sop)
    Qs = q_matrices(system, space)
    notes = []

    P = 2 * float(np.linalg.norm([np.trace(rho0 @ op).real for op in system.S_ops]))
    if P > 0.3:
        notes.append(f"polarization P={P:.3g} exceeds the low-polarization threshold 0.3")
        warnings.warn(notes[-1], RuntimeWarning, stacklevel=2)

    v0 = space.vec(project_block_diagonal(np.asarray(rho0, dtype=complex), system))
    slow = {m: find_mode(modes, 1, m, "+") for m in K_VALUES}
    c_slow = {m: (slow[m].left_vec @ v0) * np.exp(slow[m].lam * t0) for m in K_VALUES}
    S_sph = dict(zip(K_VALUES, system.S_spherical()))
    # s^k from the slow dipole mode alone: (-1)^k Tr(S_-k rho_slow)
    s_slow = {}
    for k in K_VALUES:
        rho_k = space.unvec(slow[k].right_vec * c_slow[k])
        s_slow[k] = (-1) ** k * np.trace(rho_k @ S_sph[-k])

    F_up = system.F_values[0]
    tol = degenerate_tol * params.R_SE
    degenerate = False
    amps, lam_br, multipole = {}, {}, {}
    for M in (-L, L):
        multipole[M] = 0j
        targets = [m for m in modes if m.L == L and m.M == M]
        for tgt in targets:
            total = 0j
            for m in K_VALUES:
                k = M - m
                if k not in K_VALUES:
                    continue
                denom = -tgt.lam + slow[m].lam + slow[k].lam
                if abs(denom) < tol:
                    degenerate = True
                    notes.append(f"near-zero denominator {denom:.3g} for target {tgt.label}")
                    continue
                coupling = tgt.left_vec @ Qs[k] @ slow[m].right_vec
                total += 2 * params.R_SE * s_slow[k] * c_slow[m] * coupling / denom
                lam_br[M] = slow[m].lam + slow[k].lam
            amps[tgt.label] = total
            coeff = space.tensor_coords(tgt.right_vec)
            pos = space.tensor_labels().index((L, M, F_up))
            multipole[M] += total * coeff[pos]
    return PerturbativePrediction(lam_br, amps, multipole, t0,
                                  {m: slow[m].lam for m in K_VALUES}, degenerate, notes)
