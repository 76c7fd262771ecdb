"""Angular-momentum algebra on small half-integer spins.

Clebsch-Gordan coefficients use the Racah sum with exact integer factorials
(Condon-Shortley phases). Irreducible tensor operators ``T_LM(F, F')`` are
built on the coupled ``|F m>`` basis of a :class:`~serfspin.hilbert.SpinSystem`.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from math import factorial, sqrt
from typing import TYPE_CHECKING, Union

import numpy as np

if TYPE_CHECKING:
    from .hilbert import SpinSystem

Number = Union[int, float, Fraction, "HalfInt"]


@dataclass(frozen=True, order=True)
class HalfInt:
    """An exact half-integer, stored as twice its value."""

    twice_value: int

    @classmethod
    def of(cls, x: Number) -> "HalfInt":
        if isinstance(x, HalfInt):
            return x
        two = Fraction(x) * 2
        if two.denominator != 1:
            raise ValueError(f"{x!r} is not a half-integer")
        return cls(int(two))

    def __float__(self) -> float:
        return self.twice_value / 2

    def __int__(self) -> int:
        if self.twice_value % 2:
            raise ValueError(f"{self} is not an integer")
        return self.twice_value // 2

    def __neg__(self) -> "HalfInt":
        return HalfInt(-self.twice_value)

    def __add__(self, other: Number) -> "HalfInt":
        return HalfInt(self.twice_value + HalfInt.of(other).twice_value)

    def __sub__(self, other: Number) -> "HalfInt":
        return HalfInt(self.twice_value - HalfInt.of(other).twice_value)

    def __str__(self) -> str:
        if self.twice_value % 2 == 0:
            return str(self.twice_value // 2)
        return f"{self.twice_value}/2"


def _twice(x: Number) -> int:
    return HalfInt.of(x).twice_value


@lru_cache(maxsize=None)
def _cg_twice(j1: int, j2: int, m1: int, m2: int, J: int, M: int) -> float:
    # all arguments are doubled quantum numbers
    if m1 + m2 != M:
        return 0.0
    if abs(m1) > j1 or abs(m2) > j2 or abs(M) > J:
        return 0.0
    if (j1 + m1) % 2 or (j2 + m2) % 2 or (J + M) % 2:
        return 0.0
    if J > j1 + j2 or J < abs(j1 - j2) or (j1 + j2 + J) % 2:
        return 0.0

    a = (j1 + j2 - J) // 2
    b = (j1 - j2 + J) // 2
    c = (-j1 + j2 + J) // 2
    d = (j1 + j2 + J) // 2 + 1
    prefactor = Fraction((J + 1) * factorial(a) * factorial(b) * factorial(c), factorial(d))
    prefactor *= (
        factorial((j1 + m1) // 2)
        * factorial((j1 - m1) // 2)
        * factorial((j2 + m2) // 2)
        * factorial((j2 - m2) // 2)
        * factorial((J + M) // 2)
        * factorial((J - M) // 2)
    )

    total = Fraction(0)
    for k in range(0, a + 1):
        dens = (
            k,
            a - k,
            (j1 - m1) // 2 - k,
            (j2 + m2) // 2 - k,
            (J - j2 + m1) // 2 + k,
            (J - j1 - m2) // 2 + k,
        )
        if min(dens) < 0:
            continue
        denom = 1
        for n in dens:
            denom *= factorial(n)
        total += Fraction((-1) ** k, denom)

    if total == 0:
        return 0.0
    sign = 1.0 if total > 0 else -1.0
    # exact value is sign * sqrt(prefactor * total**2)
    return sign * sqrt(prefactor * total * total)


def clebsch_gordan(j1: Number, j2: Number, m1: Number, m2: Number, J: Number, M: Number) -> float:
    """Return ``<j1 m1 j2 m2 | J M>`` (Condon-Shortley).

    Arguments that violate the triangle rule or ``m1 + m2 = M`` give 0.
    """
    return _cg_twice(_twice(j1), _twice(j2), _twice(m1), _twice(m2), _twice(J), _twice(M))


@dataclass(frozen=True)
class TensorOperator:
    """Orthonormal irreducible tensor ``T_LM(F, Fp)`` as a dense matrix."""

    L: int
    M: int
    F: HalfInt
    Fp: HalfInt
    matrix: np.ndarray

    @property
    def key(self) -> tuple:
        return (self.L, self.M, self.F, self.Fp)


def tensor_operator(system: "SpinSystem", L: int, M: int, F: Number, Fp: Number) -> TensorOperator:
    F, Fp = HalfInt.of(F), HalfInt.of(Fp)
    mat = np.zeros((system.dim, system.dim), dtype=complex)
    for i, (Fi, mi) in enumerate(system.basis_labels):
        if Fi != F:
            continue
        for j, (Fj, mj) in enumerate(system.basis_labels):
            if Fj != Fp:
                continue
            phase = -1.0 if ((Fp.twice_value - mj.twice_value) // 2) % 2 else 1.0
            mat[i, j] = phase * clebsch_gordan(F, Fp, mi, -mj, L, M)
    mat.setflags(write=False)
    return TensorOperator(L, M, F, Fp, mat)


def tensor_basis(system: "SpinSystem") -> list[TensorOperator]:
    """All ``T_LM(F, F')`` on the coupled space, ordered by (F, F', L, M).

    F runs from the upper to the lower hyperfine manifold, M from -L to L.
    """
    basis = []
    for F in system.F_values:
        for Fp in system.F_values:
            lo = abs(F.twice_value - Fp.twice_value) // 2
            hi = (F.twice_value + Fp.twice_value) // 2
            for L in range(lo, hi + 1):
                for M in range(-L, L + 1):
                    basis.append(tensor_operator(system, L, M, F, Fp))
    return basis
