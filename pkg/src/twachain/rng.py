"""Counter-based random number streams.

Every stochastic object in a run is drawn from a Philox substream keyed by
``(seed, stream_id)``.  A trajectory's stream depends only on the master seed
and its own index, so ensembles are bit-reproducible no matter how
trajectories are chunked or scheduled.
"""
from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def mix_seed(master_seed: int, label: str) -> int:
    """Derive a sub-seed from a master seed and a text label.

    Used by the sweep harness so each point gets an independent, stable seed
    that does not depend on execution order.
    """
    key = int(master_seed) & _MASK64
    digest = hashlib.blake2b(
        label.encode("utf-8"), digest_size=8, key=key.to_bytes(8, "little")
    ).digest()
    return int.from_bytes(digest, "little")


def stream(seed: int, stream_id: int) -> np.random.Generator:
    """Philox generator for substream ``stream_id`` of ``seed``."""
    key = np.array([int(seed) & _MASK64, int(stream_id) & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


class TrajectoryStreams:
    """Lazily constructed per-trajectory generators for one ensemble.

    Generators are created on first access and keep their state across
    chunked integration, so the noise sequence seen by trajectory ``i`` is a
    single uninterrupted Philox stream.
    """

    def __init__(self, seed: int, n_traj: int):
        self.seed = int(seed)
        self.n_traj = int(n_traj)
        self._gens: list[np.random.Generator | None] = [None] * self.n_traj

    def __len__(self) -> int:
        return self.n_traj

    def __getitem__(self, i: int) -> np.random.Generator:
        g = self._gens[i]
        if g is None:
            g = stream(self.seed, i)
            self._gens[i] = g
        return g

    def normals(self, shape_per_traj: tuple[int, ...]) -> np.ndarray:
        """Draw standard normals of ``shape_per_traj`` from every stream.

        Returns an array of shape ``(n_traj, *shape_per_traj)``.
        """
        out = np.empty((self.n_traj,) + tuple(shape_per_traj))
        for i in range(self.n_traj):
            out[i] = self[i].standard_normal(shape_per_traj)
        return out
