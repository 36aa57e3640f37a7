import numpy as np
import pytest
from scipy.special import eval_laguerre, gammaln

from twachain.errors import DimensionCapError
from twachain.fock import (
    build_generators,
    destroy,
    diagonal_wigner_radial,
    fock_wigner_table,
    laguerre_scaled,
    number,
    wigner_of_density,
)
from twachain.model import ChainParams


def params(**kw):
    base = dict(L=1, n=2, delta=5.6, U=0.0, J=2.2, zeta=0.0, gamma=1.0)
    base.update(kw)
    return ChainParams(**base)


class TestOperators:
    def test_number_operator_diagonal(self):
        d = 7
        a = destroy(d)
        n = (a.conj().T @ a).toarray()
        assert np.allclose(n, np.diag(np.arange(d)))
        assert np.allclose(number(d).toarray(), np.diag(np.arange(d)))

    def test_two_level_hamiltonian(self):
        H, jumps = build_generators(params(), (2,))
        assert np.allclose(H.toarray(), np.diag([0.0, -5.6]))
        assert len(jumps) == 1  # single loss channel for L = 1

    def test_two_photon_drive_element(self):
        # d=3, n=2: only |0> <-> |2| coupling with element zeta*sqrt(2)/2
        H, _ = build_generators(params(zeta=4.0, delta=0.0), (3,))
        dense = H.toarray()
        assert dense[2, 0] == pytest.approx(4.0 * np.sqrt(2.0) / 2.0)
        assert dense[0, 2] == pytest.approx(4.0 * np.sqrt(2.0) / 2.0)
        assert dense[1, 0] == 0 and dense[2, 1] == 0

    def test_two_site_jump_operators(self):
        H, jumps = build_generators(params(L=2, U=0.5, zeta=4.5), (4, 4))
        assert len(jumps) == 2
        assert H.shape == (16, 16)
        assert np.allclose(H.toarray(), H.toarray().conj().T)

    def test_dimension_cap(self):
        with pytest.raises(DimensionCapError):
            build_generators(params(L=2), (200, 200), dimension_cap=1000)


class TestLaguerre:
    def test_matches_scipy_at_moderate_arguments(self):
        x = np.linspace(0.0, 30.0, 7)
        b = laguerre_scaled(12, 0, x)
        for n in (0, 3, 12):
            expected = np.exp(-0.5 * x) * eval_laguerre(n, x)
            assert np.allclose(b[n], expected, rtol=1e-10, atol=1e-12)

    def test_large_argument_no_overflow(self):
        x = np.array([400.0])
        b = laguerre_scaled(256, 0, x)
        assert np.all(np.isfinite(b))
        assert np.max(np.abs(b)) <= 1.5  # scaled functions stay O(1)


class TestWigner:
    def test_fock_table_normalisation(self):
        r = np.linspace(0, 12, 4001)
        table = fock_wigner_table(40, r)
        integral = 2 * np.pi * np.trapz(table * r[None, :], r, axis=1)
        assert np.allclose(integral, 1.0, atol=1e-6)

    def test_vacuum_wigner(self):
        r = np.array([0.0, 0.5, 1.0])
        w = diagonal_wigner_radial(np.array([1.0]), r)
        assert np.allclose(w, (2 / np.pi) * np.exp(-2 * r**2))

    def test_thermal_mixture_matches_gaussian(self):
        # geometric weights with nbar must give the closed-form Gaussian
        nbar = 2.0
        k = np.arange(200)
        w = (nbar / (nbar + 1)) ** k / (nbar + 1)
        r = np.linspace(0, 6, 50)
        w_fock = diagonal_wigner_radial(w, r)
        sigma2 = nbar + 0.5
        w_exact = np.exp(-(r**2) / sigma2) / (np.pi * sigma2)
        assert np.allclose(w_fock, w_exact, atol=1e-10)

    def test_coherent_state_density_matrix(self):
        # off-diagonal check: W of |beta> is a displaced vacuum Gaussian
        beta = 1.3 - 0.6j
        d = 30
        k = np.arange(d)
        amps = np.exp(-0.5 * abs(beta) ** 2) * beta**k / np.exp(0.5 * gammaln(k + 1))
        rho = np.outer(amps, amps.conj())
        x = np.linspace(-3, 3, 31)
        y = np.linspace(-3, 3, 33)
        W = wigner_of_density(rho, x, y)
        X, Y = np.meshgrid(x, y, indexing="ij")
        expected = (2 / np.pi) * np.exp(
            -2 * ((X - beta.real) ** 2 + (Y - beta.imag) ** 2)
        )
        assert np.max(np.abs(W - expected)) < 1e-8

    def test_fock_one_wigner_negativity(self):
        # |1>: W(0) = -2/pi, a genuinely negative quasiprobability
        rho = np.diag([0.0, 1.0])
        W = wigner_of_density(rho, np.array([0.0]), np.array([0.0]))
        assert W[0, 0] == pytest.approx(-2 / np.pi)
