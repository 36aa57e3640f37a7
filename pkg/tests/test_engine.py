import numpy as np
import pytest
from scipy.linalg import expm

from twachain.engine import (
    FieldEnsemble,
    advance,
    drift,
    evolve_replicas,
    linear_mode_matrix,
    load_checkpoint,
    make_replica_pair,
    phase_kick,
    save_checkpoint,
)
from twachain.errors import NonFiniteFieldError, PerturbSiteOutOfRangeError
from twachain.model import ChainParams
from twachain.rng import TrajectoryStreams


def params(**kw):
    base = dict(L=2, n=2, delta=5.6, U=0.1, J=2.2, zeta=4.5, gamma=1.0)
    base.update(kw)
    return ChainParams(**base)


def classical_energy(p, fields):
    a2 = np.abs(fields) ** 2
    e = np.sum(-p.delta * a2 + 0.5 * p.U * a2**2, axis=-1)
    hop = np.sum(np.conj(fields[..., 1:]) * fields[..., :-1], axis=-1)
    return e - p.J * 2 * hop.real


class TestDrift:
    def test_vacuum_is_fixed_point_for_two_photon_drive(self):
        p = params(L=4, zeta=6.0, U=0.0)
        out = drift(p, np.zeros(4, dtype=complex))
        assert np.all(out == 0)

    def test_linear_terms_by_hand(self):
        # L=2, U=0, zeta=0, alpha=(1, 0)
        p = params(U=0.0, zeta=0.0)
        out = drift(p, np.array([1.0 + 0j, 0.0 + 0j]))
        assert out[0] == pytest.approx(1j * p.delta - p.gamma / 2)
        assert out[1] == pytest.approx(1j * p.J)

    def test_bulk_kerr_magnitude(self):
        # isolated real field: |f| = |delta - U (a^2 - 1)| * a
        p = params(L=3, J=0.0, zeta=0.0, U=0.4)
        a = 1.7
        out = drift(p, np.array([0.0, a, 0.0], dtype=complex))
        assert abs(out[1]) == pytest.approx(abs(p.delta - p.U * (a**2 - 1)) * a)

    def test_classical_kerr_has_no_symmetrisation_offset(self):
        p = params(L=1, J=0.0, zeta=0.0, U=0.3, gamma=1.0)
        a = np.array([1.2 + 0.1j])
        quantum = drift(p, a)
        classical = drift(p, a, classical=True)
        assert classical[0] == pytest.approx(quantum[0] - 1j * p.U * a[0])


class TestStepping:
    def test_single_lossy_site_decay(self):
        # J=0 decouples the chain; site 1 obeys alpha' = (i delta - gamma/2) alpha
        p = params(U=0.0, zeta=0.0, J=0.0)
        ens = FieldEnsemble(np.array([[1.0 + 0j, 0.0 + 0j]]))
        advance(ens, p, 1e-4, 1.0, noiseless=True)
        expected = np.exp((1j * p.delta - p.gamma / 2) * 1.0)
        assert abs(ens.fields[0, 0] - expected) < 1e-6
        assert abs(abs(ens.fields[0, 0]) - np.exp(-0.5)) < 1e-6

    def test_closed_system_norm_conserved_per_step(self):
        p = params(L=8, gamma=0.0, zeta=0.0)
        rng = np.random.default_rng(0)
        f = rng.normal(size=(3, 8)) + 1j * rng.normal(size=(3, 8))
        ens = FieldEnsemble(f.copy())
        dt = 1e-3
        before = np.sum(np.abs(ens.fields) ** 2, axis=1)
        advance(ens, p, dt, dt, noiseless=True)
        after = np.sum(np.abs(ens.fields) ** 2, axis=1)
        assert np.all(np.abs(after - before) < 50 * dt**3 * np.abs(before))

    def test_deterministic_part_is_second_order(self):
        # step-halving on the noiseless nonlinear system over t in [0, 1]
        p = params(L=4, zeta=3.0)
        rng = np.random.default_rng(1)
        f0 = rng.normal(size=(1, 4)) + 1j * rng.normal(size=(1, 4))
        errs = []
        dts = [4e-3, 2e-3, 1e-3]
        ref = FieldEnsemble(f0.copy())
        advance(ref, p, 2.5e-5, 1.0, noiseless=True)
        for dt in dts:
            ens = FieldEnsemble(f0.copy())
            advance(ens, p, dt, 1.0, noiseless=True)
            errs.append(np.max(np.abs(ens.fields - ref.fields)))
        orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert np.all(orders > 1.9)

    def test_linear_chain_matches_matrix_exponential(self):
        # second-order scheme: 1e-6 agreement needs dt ~ 2e-5 at these scales
        p = params(L=6, U=0.0, zeta=0.0)
        rng = np.random.default_rng(2)
        f0 = rng.normal(size=(1, 6)) + 1j * rng.normal(size=(1, 6))
        exact = f0 @ expm(linear_mode_matrix(p) * 5.0).T
        errs = {}
        for dt in (1e-3, 2e-5):
            ens = FieldEnsemble(f0.copy())
            advance(ens, p, dt, 5.0, noiseless=True)
            errs[dt] = np.max(np.abs(ens.fields - exact))
        assert errs[2e-5] < 1e-6
        # and the coarse default converges at second order toward it
        assert errs[1e-3] < 1e-3
        assert errs[1e-3] / errs[2e-5] > 0.25 * (1e-3 / 2e-5) ** 2

    def test_gp_conservation_closed_chain(self):
        p = params(L=8, gamma=0.0, zeta=0.0)
        rng = np.random.default_rng(3)
        f0 = rng.normal(size=(1, 8)) + 1j * rng.normal(size=(1, 8))
        ens = FieldEnsemble(f0.copy())
        norm0 = np.sum(np.abs(f0) ** 2)
        e0 = classical_energy(p, f0[0])
        advance(ens, p, 1e-4, 10.0, noiseless=True, classical=True)
        norm1 = np.sum(np.abs(ens.fields) ** 2)
        e1 = classical_energy(p, ens.fields[0])
        assert abs(norm1 - norm0) / norm0 < 1e-8
        assert abs(e1 - e0) / abs(e0) < 1e-6

    def test_gp_vacuum_stays_dark_for_higher_order_drive(self):
        # n = 3: drive is quadratic in the field, so a tiny seed only decays
        p = params(L=3, n=3, delta=7.0, J=4.0, zeta=1.4)
        ens = FieldEnsemble(np.full((1, 3), 1e-6 + 0j))
        advance(ens, p, 1e-3, 20.0, noiseless=True, classical=True)
        assert np.max(np.abs(ens.fields)) < 1e-6

    def test_noise_statistics(self):
        # pure accumulation: delta=J=zeta=U=0, gamma damping balanced out by
        # checking over a short window where drift is negligible
        p = params(L=2, delta=0.0, U=0.0, J=0.0, zeta=0.0, gamma=2.0)
        n_traj = 100_000
        ens = FieldEnsemble(np.zeros((n_traj, 2), dtype=complex))
        streams = TrajectoryStreams(11, n_traj)
        T = 0.2  # short: variance ~ gamma/2 * T with O(gamma T) damping bias
        advance(ens, p, 1e-3, T, streams)
        for site in (0, 1):
            for comp in (ens.fields[:, site].real, ens.fields[:, site].imag):
                var = comp.var()
                target = p.gamma / 2 * T / 2  # per real component
                # damping gives a small deterministic correction factor
                target *= (1 - np.exp(-2 * p.gamma / 2 * T)) / (2 * p.gamma / 2 * T)
                se = target * np.sqrt(2.0 / n_traj)
                assert abs(var - target) < 3 * se

    def test_non_finite_field_raises_with_location(self):
        p = params(L=2, U=5.0, zeta=0.0, J=0.0, gamma=0.0)
        ens = FieldEnsemble(np.array([[1e90 + 0j, 0.0 + 0j]]))
        with pytest.raises(NonFiniteFieldError) as err:
            advance(ens, p, 1.0, 5.0, noiseless=True)
        assert err.value.trajectory == 0
        assert err.value.site == 0

    def test_determinism_and_chunk_invariance(self):
        p = params(L=4, zeta=3.5)
        for chunk in (7, 64, 4096):
            ens = FieldEnsemble(np.zeros((5, 4), dtype=complex))
            advance(ens, p, 1e-2, 1.0, TrajectoryStreams(5, 5), max_chunk=chunk)
            if chunk == 7:
                ref = ens.fields.copy()
            else:
                assert np.array_equal(ens.fields, ref)


class TestReplicas:
    def test_zero_perturbation_keeps_replicas_identical(self):
        p = params(L=4, zeta=3.5)
        ens = FieldEnsemble(np.ones((6, 4), dtype=complex))
        a, b = evolve_replicas(ens, 1, 0.0, p, 1e-2, 2.0, TrajectoryStreams(1, 6))
        assert np.array_equal(a.fields, b.fields)

    def test_phase_kick_preserves_magnitude(self):
        ens = FieldEnsemble(np.array([[1.0 + 2.0j, 0.5 - 0.5j]]))
        kicked = phase_kick(ens, 0, 1e-2)
        assert abs(kicked.fields[0, 0]) == pytest.approx(abs(ens.fields[0, 0]))
        assert kicked.fields[0, 1] == ens.fields[0, 1]

    def test_perturb_site_out_of_range(self):
        ens = FieldEnsemble(np.ones((1, 3), dtype=complex))
        with pytest.raises(PerturbSiteOutOfRangeError):
            make_replica_pair(ens, 3, 1e-2)

    def test_shared_noise_reproduces_joint_run(self):
        # evolving [a; a] with shared pair noise must equal evolving a once
        p = params(L=3, zeta=2.0)
        f0 = np.ones((4, 3), dtype=complex)
        single = FieldEnsemble(f0.copy())
        advance(single, p, 1e-2, 1.0, TrajectoryStreams(9, 4))
        a, b = evolve_replicas(FieldEnsemble(f0.copy()), 0, 0.0, p, 1e-2, 1.0,
                               TrajectoryStreams(9, 4))
        assert np.array_equal(a.fields, single.fields)
        assert np.array_equal(b.fields, single.fields)


def test_checkpoint_roundtrip(tmp_path):
    p = params(L=3, zeta=2.0)
    ens = FieldEnsemble(np.ones((4, 3), dtype=complex))
    streams = TrajectoryStreams(21, 4)
    advance(ens, p, 1e-2, 0.5, streams)
    path = tmp_path / "state.npz"
    save_checkpoint(path, ens, streams)
    restored, streams2 = load_checkpoint(path)
    assert restored.time == ens.time
    assert np.array_equal(restored.fields, ens.fields)
    # continuing from the checkpoint matches continuing the original
    advance(ens, p, 1e-2, 0.5, streams)
    advance(restored, p, 1e-2, 0.5, streams2)
    assert np.array_equal(restored.fields, ens.fields)
