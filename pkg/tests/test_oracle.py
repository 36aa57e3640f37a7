import numpy as np
import pytest

from twachain.errors import CutoffLeakageError, DimensionCapError
from twachain.model import ChainParams
from twachain.oracle import (
    FockConfig,
    delta_n_stats,
    evolve_dense,
    evolve_mcwf,
)


def params(**kw):
    base = dict(L=1, n=2, delta=5.6, U=0.5, J=2.2, zeta=0.0, gamma=1.0)
    base.update(kw)
    return ChainParams(**base)


class TestMcwf:
    def test_dark_state_stays_dark(self):
        series = evolve_mcwf(params(zeta=0.0), FockConfig((8,)), 16,
                             np.linspace(0, 5, 6), seed=1)
        assert np.all(series.n == 0)
        assert np.all(series.dn == 0)
        assert series.mean_jumps == 0

    def test_pure_decay_from_fock_one(self):
        # single amplitude-damped mode: n(t) = e^{-gamma t}
        p = params(U=0.0, zeta=0.0)
        t = np.linspace(0, 2, 9)
        series = evolve_mcwf(p, FockConfig((4,)), 3000, t, seed=2, initial=(1,))
        expected = np.exp(-t)
        resid = np.abs(series.n[0] - expected)
        # binomial error per checkpoint
        se = np.sqrt(np.clip(expected * (1 - expected), 1e-12, None) / 3000)
        assert np.all(resid[1:] < 4 * se[1:] + 0.005)

    def test_mcwf_matches_dense_single_site(self):
        # driven Kerr mode: cross-validation between the two solvers
        p = params(zeta=2.0, U=0.5)
        t = np.linspace(0, 10, 11)
        cfg = FockConfig((24,))
        dense, _ = evolve_dense(p, cfg, t)
        mc = evolve_mcwf(p, cfg, 1000, t, seed=3)
        resid = np.abs(mc.n[0] - dense.n[0])
        assert np.all(resid <= 3.0 * mc.n_se[0] + 1e-3)
        resid_dn = np.abs(mc.dn[0] - dense.dn[0])
        assert np.all(resid_dn <= 3.0 * mc.dn_se[0] + 1e-3)

    def test_cutoff_leakage_detected(self):
        p = params(zeta=6.0, U=0.1)
        with pytest.raises(CutoffLeakageError):
            evolve_mcwf(p, FockConfig((6,)), 8, np.linspace(0, 4, 5), seed=4)

    def test_determinism(self):
        p = params(zeta=2.0, U=0.5)
        t = np.linspace(0, 2, 3)
        a = evolve_mcwf(p, FockConfig((20,)), 8, t, seed=5)
        b = evolve_mcwf(p, FockConfig((20,)), 8, t, seed=5)
        assert np.array_equal(a.n, b.n)
        assert np.array_equal(a.dn, b.dn)

    def test_two_site_runs_and_counts_jumps(self):
        p = params(L=2, zeta=4.5, U=0.5)
        t = np.linspace(0, 2, 3)
        series = evolve_mcwf(p, FockConfig((24, 20)), 8, t, seed=6)
        assert series.n.shape == (2, 3)
        assert series.mean_jumps > 0
        assert series.max_leakage < 1e-6

    def test_dimension_cap(self):
        with pytest.raises(DimensionCapError):
            FockConfig((200, 200), dimension_cap=1000)


class TestDense:
    def test_trace_preserved_long_run(self):
        p = params(zeta=2.0, U=0.5)
        cfg = FockConfig((20,))
        t = np.linspace(0, 50, 26)
        series, snaps = evolve_dense(p, cfg, t, snapshot_times=np.array([50.0]))
        _, rho = snaps[-1]
        assert abs(np.trace(rho).real - 1.0) < 1e-8
        assert np.max(np.abs(rho - rho.conj().T)) < 1e-10

    def test_vacuum_fixed_point_without_drive(self):
        p = params(zeta=0.0)
        series, _ = evolve_dense(p, FockConfig((6,)), np.linspace(0, 5, 6))
        assert np.allclose(series.n[0], 0.0, atol=1e-12)

    def test_decay_rate(self):
        p = params(U=0.0, zeta=0.0)
        rho0 = np.zeros((4, 4), dtype=complex)
        rho0[1, 1] = 1.0
        t = np.linspace(0, 3, 7)
        series, _ = evolve_dense(p, FockConfig((4,)), t, initial_rho=rho0)
        assert np.allclose(series.n[0], np.exp(-t), atol=1e-7)


def test_delta_n_stats_matches_direct():
    rng = np.random.default_rng(0)
    x = rng.normal(5.0, 1.0, (500, 3))
    y = rng.normal(30.0, 5.0, (500, 3)) + 2 * x
    dn, se = delta_n_stats(x, y)
    assert np.allclose(dn, y.mean(axis=0) - x.mean(axis=0) ** 2)
    assert np.all(se > 0)
