import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from serfspin.angular import HalfInt
from serfspin.hilbert import (
    SUPPORTED_TWICE_I, build_system, check_density_matrix, decompose_alpha_A, expect_S_spherical,
    spin_temperature_state,
)

from conftest import random_density, random_hermitian

SYSTEMS = [build_system(t / 2) for t in SUPPORTED_TWICE_I]


def commutator(a, b):
    return a @ b - b @ a


class TestBuildSystem:
    def test_rb87_dimensions(self, rb87):
        assert rb87.dim == 8
        assert [rb87.block_slice(F).stop - rb87.block_slice(F).start for F in rb87.F_values] == [5, 3]
        assert rb87.F_values == (HalfInt(4), HalfInt(2))

    def test_unsupported_spin_rejected(self):
        with pytest.raises(ValueError, match="unsupported"):
            build_system(4.5)

    @pytest.mark.parametrize("system", SYSTEMS, ids=lambda s: f"I={s.I}")
    def test_spin_algebra(self, system):
        for ops in (system.S_ops, system.I_ops, system.F_ops):
            x, y, z = ops
            for a, b, c in ((x, y, z), (y, z, x), (z, x, y)):
                assert np.max(np.abs(commutator(a, b) - 1j * c)) <= 1e-13
        assert np.trace(system.S_ops[2] @ system.S_ops[2]).real == pytest.approx(system.dim / 4, abs=1e-13)

    @pytest.mark.parametrize("system", SYSTEMS, ids=lambda s: f"I={s.I}")
    def test_hyperfine_diagonal_in_coupled_basis(self, system):
        I = float(system.I)
        expected = [(float(F) * (float(F) + 1) - I * (I + 1) - 0.75) / 2 for F, _ in system.basis_labels]
        np.testing.assert_allclose(system.IS, np.diag(expected), atol=1e-13)

    def test_rb87_hyperfine_values(self, rb87):
        d = np.diag(rb87.IS).real
        np.testing.assert_allclose(d[:5], 0.75, atol=1e-14)
        np.testing.assert_allclose(d[5:], -1.25, atol=1e-14)

    def test_basis_labels_descend_in_m(self, rb87):
        ms = [float(m) for F, m in rb87.basis_labels if F == HalfInt(4)]
        assert ms == [2, 1, 0, -1, -2]
        np.testing.assert_allclose(np.diag(rb87.F_ops[2]).real, [2, 1, 0, -1, -2, 1, 0, -1], atol=1e-13)


class TestCheckDensityMatrix:
    def test_accepts_valid(self, rb87):
        check_density_matrix(random_density(8, np.random.default_rng(1)))

    @pytest.mark.parametrize("bad", [
        np.diag([2.0, -1, 0, 0, 0, 0, 0, 0]),
        np.eye(8) / 4,
        np.triu(np.ones((8, 8))) / 8,
    ])
    def test_rejects_invalid(self, bad):
        with pytest.raises(ValueError):
            check_density_matrix(bad)


class TestDecomposeAlphaA:
    def test_maximally_mixed(self, rb87):
        alpha, A = decompose_alpha_A(np.eye(8) / 8, rb87)
        np.testing.assert_allclose(alpha, np.eye(8) / 8, atol=1e-15)
        assert all(np.max(np.abs(a)) < 1e-15 for a in A)

    def test_electron_up_nuclear_mixed(self, rb87):
        # (nuclear identity/4) x |up><up| = identity/8 + S_z/2
        rho = np.eye(8) / 8 + rb87.S_ops[2] / 2
        alpha, A = decompose_alpha_A(rho, rb87)
        assert np.max(np.abs(A[2])) > 0.1
        assert np.max(np.abs(A[0])) < 1e-15 and np.max(np.abs(A[1])) < 1e-15

    def test_rejects_non_hermitian(self, rb87):
        with pytest.raises(ValueError):
            decompose_alpha_A(np.triu(np.ones((8, 8))), rb87)

    @pytest.mark.parametrize("system", SYSTEMS, ids=lambda s: f"I={s.I}")
    def test_reconstruction_on_random_states(self, system):
        rng = np.random.default_rng(7)
        for _ in range(100):
            rho = random_hermitian(system.dim, rng)
            alpha, A = decompose_alpha_A(rho, system)
            rebuilt = alpha + sum(a @ s for a, s in zip(A, system.S_ops))
            assert np.max(np.abs(rebuilt - rho)) <= 1e-12

    def test_alpha_commutes_with_electron_spin(self, rb87):
        alpha, A = decompose_alpha_A(random_density(8, np.random.default_rng(3)), rb87)
        for s in rb87.S_ops:
            assert np.max(np.abs(commutator(alpha, s))) < 1e-13
            for a in A:
                assert np.max(np.abs(commutator(a, s))) < 1e-13


class TestSpinTemperature:
    def test_zero_polarization(self, rb87):
        np.testing.assert_allclose(spin_temperature_state(rb87, 0.0), np.eye(8) / 8)

    def test_rejects_full_polarization(self, rb87):
        with pytest.raises(ValueError):
            spin_temperature_state(rb87, 1.0)

    def test_defining_condition(self, rb87):
        rho = spin_temperature_state(rb87, 0.1, (1, 0, 0))
        assert 2 * np.trace(rho @ rb87.S_ops[0]).real == pytest.approx(0.1, abs=1e-10)
        check_density_matrix(rho)

    def test_matches_closed_form_temperature(self, rb87):
        # for a spin temperature state the electron polarization is tanh(beta/2)
        P = 0.37
        Fz = rb87.F_ops[2]
        rho = expm(2 * math.atanh(P) * Fz)
        rho /= np.trace(rho)
        np.testing.assert_allclose(spin_temperature_state(rb87, P, (0, 0, 1)), rho, atol=1e-12)

    def test_populations_monotone(self, rb87):
        pops = np.diag(spin_temperature_state(rb87, 0.5, (0, 0, 1))).real
        assert np.all(np.diff(pops[:5]) < 0) and np.all(np.diff(pops[5:]) < 0)

    @settings(max_examples=25, deadline=None)
    @given(P=st.floats(0.01, 0.95), theta=st.floats(0, math.pi), phi=st.floats(0, 2 * math.pi))
    def test_commutes_with_F_along_axis(self, rb87, P, theta, phi):
        n = (math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta))
        rho = spin_temperature_state(rb87, P, n)
        Fn = sum(c * op for c, op in zip(n, rb87.F_ops))
        assert np.max(np.abs(commutator(rho, Fn))) <= 1e-12
        Sn = sum(c * op for c, op in zip(n, rb87.S_ops))
        assert 2 * np.trace(rho @ Sn).real == pytest.approx(P, abs=1e-10)


class TestSphericalExpectations:
    def test_mixed_state(self, rb87):
        assert np.max(np.abs(expect_S_spherical(np.eye(8) / 8, rb87))) < 1e-15

    def test_longitudinal(self, rb87):
        s = expect_S_spherical(spin_temperature_state(rb87, 0.3, (0, 0, 1)), rb87)
        np.testing.assert_allclose(s, [0, 0.15, 0], atol=1e-10)

    def test_transverse(self, rb87):
        s_m, s_0, s_p = expect_S_spherical(spin_temperature_state(rb87, 0.1, (1, 0, 0)), rb87)
        assert s_p == pytest.approx(-0.05 / math.sqrt(2), abs=1e-10)
        assert s_m == pytest.approx(0.05 / math.sqrt(2), abs=1e-10)
        assert abs(s_0) < 1e-12

    def test_conjugation_symmetry(self, rb87):
        s = expect_S_spherical(random_density(8, np.random.default_rng(5)), rb87)
        assert np.conj(s[2]) == pytest.approx(-s[0], abs=1e-14)
        assert np.conj(s[1]) == pytest.approx(s[1], abs=1e-14)
