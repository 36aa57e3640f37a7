"""Stochastic integration of the phase-space Langevin equations.

The equations of motion for the complex fields ``alpha_l`` are, after moving
the ``i`` to the right-hand side,

    d(alpha_1)/dt = i f(alpha_1) + i J alpha_2 - i zeta conj(alpha_1)^(n-1)
                    - (gamma/2) alpha_1 + noise,
    d(alpha_l)/dt = i f(alpha_l) + i J (alpha_{l-1} + alpha_{l+1}),
    d(alpha_L)/dt = i f(alpha_L) + i J alpha_{L-1} - (gamma/2) alpha_L + noise,

with ``f(alpha) = delta*alpha - U(|alpha|^2 - 1)*alpha``.  The classical
(Gross-Pitaevskii) limit drops the noise and uses ``U |alpha|^2 alpha``.
Noise enters only at the two lossy boundary sites as an additive complex
increment of variance ``gamma/2 * dt`` per step.

Integration is a fixed-step stochastic Heun scheme: the additive-noise
increment is drawn once per step and applied to both the predictor and the
final update, so the deterministic part is second order while the noise term
retains strong order one.  Trajectories are advanced independently (parallel
across trajectories) and each consumes its own counter-based stream, which
makes results bit-reproducible regardless of chunking or thread count.

A word on step size: Heun weakly amplifies undamped oscillations, by a factor
``1 + (w*dt)^4/8`` per step at local frequency ``w ~ |delta - U |alpha|^2|``.
For strongly driven chains where ``U |alpha|^2`` can spike to O(50), keep
``dt <= 2e-3``; the integrator aborts with NonFiniteFieldError rather than
propagate an overflowed trajectory.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .errors import NonFiniteFieldError, PerturbSiteOutOfRangeError
from .model import ChainParams
from .rng import TrajectoryStreams

_FIELD_BOUND = 1e150  # abort threshold; catches NaN and pre-overflow values


@dataclass
class FieldEnsemble:
    """A set of trajectories at a common time; ``fields`` is (n_traj, L)."""

    fields: np.ndarray
    time: float = 0.0

    @property
    def n_traj(self) -> int:
        return self.fields.shape[0]

    @property
    def n_sites(self) -> int:
        return self.fields.shape[1]


def drift(params: ChainParams, fields: np.ndarray, classical: bool = False) -> np.ndarray:
    """Deterministic part of d(alpha)/dt, vectorised over leading axes.

    ``classical=True`` uses the Gross-Pitaevskii nonlinearity
    ``U |alpha|^2 alpha`` instead of the symmetrised ``U (|alpha|^2 - 1) alpha``.
    """
    fields = np.asarray(fields, dtype=np.complex128)
    a2 = fields.real**2 + fields.imag**2
    offset = 0.0 if classical else 1.0
    out = 1j * (params.delta * fields - params.U * (a2 - offset) * fields)
    if params.L > 1:
        out[..., :-1] += 1j * params.J * fields[..., 1:]
        out[..., 1:] += 1j * params.J * fields[..., :-1]
    out[..., 0] += -1j * params.zeta * np.conj(fields[..., 0]) ** (params.n - 1)
    out[..., 0] += -0.5 * params.gamma * fields[..., 0]
    if params.L > 1:
        out[..., -1] += -0.5 * params.gamma * fields[..., -1]
    return out


@njit(cache=True, parallel=True, fastmath=True)
def _heun_chunk(fields, noise, n_noise, dt, delta, u, j, zeta, ndrive, gamma,
                classical, has_noise, bad_step, bad_site):
    n_traj, L = fields.shape
    n_steps = noise.shape[1]
    offset = 0.0 if classical else 1.0
    for t in prange(n_traj):
        a = fields[t]
        d1 = np.empty(L, dtype=np.complex128)
        d2 = np.empty(L, dtype=np.complex128)
        pred = np.empty(L, dtype=np.complex128)
        nrow = t % n_noise
        for s in range(n_steps):
            for l in range(L):
                al = a[l]
                a2 = al.real * al.real + al.imag * al.imag
                v = 1j * (delta * al - u * (a2 - offset) * al)
                if l > 0:
                    v += 1j * j * a[l - 1]
                if l < L - 1:
                    v += 1j * j * a[l + 1]
                d1[l] = v
            w = 1.0 + 0.0j
            for _ in range(ndrive - 1):
                w *= np.conj(a[0])
            d1[0] += -1j * zeta * w - 0.5 * gamma * a[0]
            if L > 1:
                d1[L - 1] += -0.5 * gamma * a[L - 1]
            for l in range(L):
                pred[l] = a[l] + dt * d1[l]
            if has_noise:
                pred[0] += noise[nrow, s, 0]
                if L > 1:
                    pred[L - 1] += noise[nrow, s, 1]
            for l in range(L):
                al = pred[l]
                a2 = al.real * al.real + al.imag * al.imag
                v = 1j * (delta * al - u * (a2 - offset) * al)
                if l > 0:
                    v += 1j * j * pred[l - 1]
                if l < L - 1:
                    v += 1j * j * pred[l + 1]
                d2[l] = v
            w = 1.0 + 0.0j
            for _ in range(ndrive - 1):
                w *= np.conj(pred[0])
            d2[0] += -1j * zeta * w - 0.5 * gamma * pred[0]
            if L > 1:
                d2[L - 1] += -0.5 * gamma * pred[L - 1]
            bad = -1
            for l in range(L):
                al = a[l] + 0.5 * dt * (d1[l] + d2[l])
                a[l] = al
            if has_noise:
                a[0] += noise[nrow, s, 0]
                if L > 1:
                    a[L - 1] += noise[nrow, s, 1]
            for l in range(L):
                re = a[l].real
                im = a[l].imag
                if not (-_FIELD_BOUND < re < _FIELD_BOUND) or not (
                    -_FIELD_BOUND < im < _FIELD_BOUND
                ):
                    bad = l
                    break
            if bad >= 0:
                bad_step[t] = s
                bad_site[t] = bad
                break


def steps_for(duration: float, dt: float) -> int:
    return int(round(duration / dt))


def advance(
    ensemble: FieldEnsemble,
    params: ChainParams,
    dt: float,
    duration: float,
    streams: TrajectoryStreams | None = None,
    *,
    classical: bool = False,
    noiseless: bool = False,
    shared_pair_noise: bool = False,
    observer=None,
    sample_spacing: float | None = None,
    max_chunk: int = 4096,
) -> FieldEnsemble:
    """Advance the ensemble in place by ``duration`` (rounded to whole steps).

    ``observer(t, fields)`` is called every ``sample_spacing`` time units
    (rounded to whole steps); the fields argument is a read-only view.

    With ``shared_pair_noise`` the ensemble must hold replica pairs stacked as
    ``[a_0..a_{N-1}, b_0..b_{N-1}]``; pair ``i`` consumes the noise stream of
    trajectory ``i``, so both replicas see identical increments.

    Raises
    ------
    NonFiniteFieldError
        if any trajectory leaves the finite range; the ensemble is left at
        the failing chunk for inspection.
    """
    fields = ensemble.fields
    n_traj = fields.shape[0]
    n_noise = n_traj // 2 if shared_pair_noise else n_traj
    if shared_pair_noise and 2 * n_noise != n_traj:
        raise ValueError("shared_pair_noise requires an even trajectory count")
    if not noiseless and streams is None:
        raise ValueError("streams are required for noisy integration")
    n_steps = steps_for(duration, dt)
    stride = n_steps + 1
    if observer is not None:
        if sample_spacing is None:
            raise ValueError("observer requires sample_spacing")
        stride = max(1, steps_for(sample_spacing, dt))
    scale = -1j * np.sqrt(params.gamma / 2.0) * np.sqrt(dt / 2.0)
    bad_step = np.full(n_traj, -1, dtype=np.int64)
    bad_site = np.zeros(n_traj, dtype=np.int64)
    done = 0
    view = fields.view()
    view.flags.writeable = False
    while done < n_steps:
        chunk = min(max_chunk, n_steps - done)
        if noiseless:
            noise = np.zeros((1, chunk, 2), dtype=np.complex128)
        else:
            raw = np.empty((n_noise, chunk, 2), dtype=np.complex128)
            for i in range(n_noise):
                block = streams[i].standard_normal((chunk, 2, 2))
                raw[i] = block[..., 0] + 1j * block[..., 1]
            noise = raw * scale
        sub = 0
        while sub < chunk:
            # stop at the next observation boundary so samples land on the grid
            span = min(stride - (done + sub) % stride, chunk - sub)
            _heun_chunk(
                fields, noise[:, sub : sub + span], noise.shape[0],
                dt, params.delta, params.U, params.J, params.zeta, params.n,
                params.gamma, classical, not noiseless, bad_step, bad_site,
            )
            if np.any(bad_step >= 0):
                t_idx = int(np.argmax(bad_step >= 0))
                t_bad = ensemble.time + (done + sub + bad_step[t_idx] + 1) * dt
                raise NonFiniteFieldError(t_idx, bad_site[t_idx], t_bad)
            sub += span
            if observer is not None and (done + sub) % stride == 0:
                observer(ensemble.time + (done + sub) * dt, view)
        done += chunk
    ensemble.time += n_steps * dt
    return ensemble


def phase_kick(ensemble: FieldEnsemble, site: int, epsilon: float) -> FieldEnsemble:
    """Replica with the phase of ``site`` rotated by ``epsilon`` (an isometry)."""
    if not 0 <= site < ensemble.n_sites:
        raise PerturbSiteOutOfRangeError(
            f"site {site} outside chain of length {ensemble.n_sites}"
        )
    kicked = ensemble.fields.copy()
    kicked[:, site] *= np.exp(1j * epsilon)
    return FieldEnsemble(kicked, ensemble.time)


def make_replica_pair(ensemble: FieldEnsemble, site: int, epsilon: float) -> FieldEnsemble:
    """Stack ``[a; b]`` where replica b carries the phase kick at ``site``."""
    b = phase_kick(ensemble, site, epsilon)
    return FieldEnsemble(np.concatenate([ensemble.fields, b.fields], axis=0), ensemble.time)


def evolve_replicas(
    ensemble: FieldEnsemble,
    perturb_site: int,
    epsilon: float,
    params: ChainParams,
    dt: float,
    duration: float,
    streams: TrajectoryStreams,
    *,
    observer=None,
    sample_spacing: float | None = None,
) -> tuple[FieldEnsemble, FieldEnsemble]:
    """Evolve perturbed/unperturbed replicas under identical noise.

    The caller is responsible for the ensemble being in the steady state.
    ``observer(t, fields_a, fields_b)`` is called on the sampling grid.
    Returns the two replicas at the final time.
    """
    pair = make_replica_pair(ensemble, perturb_site, epsilon)
    n = ensemble.n_traj

    wrapped = None
    if observer is not None:
        def wrapped(t, fields):
            observer(t, fields[:n], fields[n:])

    advance(
        pair, params, dt, duration, streams,
        shared_pair_noise=True, observer=wrapped, sample_spacing=sample_spacing,
    )
    return (
        FieldEnsemble(pair.fields[:n], pair.time),
        FieldEnsemble(pair.fields[n:], pair.time),
    )


def linear_mode_matrix(params: ChainParams) -> np.ndarray:
    """Single-particle generator A with d(alpha)/dt = A alpha for U = zeta = 0.

    The noiseless field equations are then linear and solved exactly by
    ``expm(A t)``; used as an independent oracle for the integrator.
    """
    L = params.L
    A = np.zeros((L, L), dtype=np.complex128)
    np.fill_diagonal(A, 1j * params.delta)
    for l in range(L - 1):
        A[l, l + 1] += 1j * params.J
        A[l + 1, l] += 1j * params.J
    for site in params.dissipative_sites():
        A[site, site] += -0.5 * params.gamma
    return A


CHECKPOINT_VERSION = 1


def save_checkpoint(path, ensemble: FieldEnsemble, streams: TrajectoryStreams) -> None:
    """Binary trajectory checkpoint: time, fields, and per-trajectory RNG state."""
    states = []
    for i in range(len(streams)):
        st = streams[i].bit_generator.state
        states.append(
            np.concatenate(
                [
                    np.asarray(st["state"]["counter"], dtype=np.uint64),
                    np.asarray(st["state"]["key"], dtype=np.uint64),
                    np.asarray(st["buffer"], dtype=np.uint64),
                    np.array(
                        [st["buffer_pos"], st["has_uint32"], st["uinteger"]],
                        dtype=np.uint64,
                    ),
                ]
            )
        )
    np.savez_compressed(
        path,
        version=np.array([CHECKPOINT_VERSION]),
        time=np.array([ensemble.time]),
        fields=ensemble.fields,
        rng_state=np.stack(states),
        seed=np.array([streams.seed], dtype=np.uint64),
    )


def load_checkpoint(path) -> tuple[FieldEnsemble, TrajectoryStreams]:
    with np.load(path) as data:
        version = int(data["version"][0])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        fields = data["fields"]
        time = float(data["time"][0])
        rng_state = data["rng_state"]
        seed = int(data["seed"][0])
    streams = TrajectoryStreams(seed, fields.shape[0])
    for i in range(fields.shape[0]):
        row = rng_state[i]
        g = streams[i]
        st = g.bit_generator.state
        st["state"]["counter"] = row[0:4]
        st["state"]["key"] = row[4:6]
        st["buffer"] = row[6:10]
        st["buffer_pos"] = int(row[10])
        st["has_uint32"] = int(row[11])
        st["uinteger"] = int(row[12])
        g.bit_generator.state = st
    return FieldEnsemble(fields.copy(), time), streams
