"""Truncated Fock-space operators and Wigner transforms.

Matrices are built for one or two sites (the exact-dynamics domain).  Wigner
evaluation uses scaled associated-Laguerre recurrences

    B_n^(k)(x) = sqrt(n!/(n+k)!) x^(k/2) e^(-x/2) L_n^(k)(x),

which stay O(1) for all (n, k, x) of interest, so no intermediate overflow
occurs even at cutoff 256.
"""
from __future__ import annotations

import numpy as np
from scipy import sparse
from scipy.special import gammaln

from .errors import DimensionCapError
from .model import ChainParams

DEFAULT_DIMENSION_CAP = 20_000


def destroy(d: int) -> sparse.csr_matrix:
    """Annihilation operator in a d-dimensional Fock space."""
    return sparse.diags(np.sqrt(np.arange(1, d)), 1, format="csr", dtype=np.complex128)


def number(d: int) -> sparse.csr_matrix:
    return sparse.diags(np.arange(d, dtype=float), 0, format="csr", dtype=np.complex128)


def site_operator(op: sparse.spmatrix, site: int, dims: tuple[int, ...]) -> sparse.csr_matrix:
    """Embed a single-mode operator at ``site`` in the tensor-product space."""
    mats = []
    for s, d in enumerate(dims):
        mats.append(op if s == site else sparse.identity(d, dtype=np.complex128, format="csr"))
    out = mats[0]
    for m in mats[1:]:
        out = sparse.kron(out, m, format="csr")
    return out


def build_generators(
    params: ChainParams, cutoffs: tuple[int, ...], dimension_cap: int = DEFAULT_DIMENSION_CAP
):
    """Hamiltonian and jump operators for a chain of L <= 2 sites.

    Returns ``(H, jumps)`` as sparse matrices in the truncated product basis.
    The n-photon drive acts on site 1 as (zeta/n)(adag^n + a^n).
    """
    if params.L > 2:
        raise DimensionCapError("exact generators are limited to L <= 2")
    if len(cutoffs) != params.L:
        raise ValueError("one cutoff per site required")
    dim = int(np.prod(cutoffs))
    if dim > dimension_cap:
        raise DimensionCapError(f"Hilbert dimension {dim} exceeds cap {dimension_cap}")
    dims = tuple(int(d) for d in cutoffs)
    H = sparse.csr_matrix((dim, dim), dtype=np.complex128)
    ops_a = [site_operator(destroy(d), s, dims) for s, d in enumerate(dims)]
    for a in ops_a:
        n_op = (a.conj().T @ a).tocsr()
        H = H - params.delta * n_op + 0.5 * params.U * (n_op @ n_op - n_op)
    if params.L == 2:
        hop = ops_a[1].conj().T @ ops_a[0]
        H = H - params.J * (hop + hop.conj().T)
    a1n = ops_a[0] ** params.n
    H = H + (params.zeta / params.n) * (a1n.conj().T + a1n)
    jumps = [np.sqrt(params.gamma) * ops_a[site] for site in params.dissipative_sites()]
    return H.tocsr(), jumps


# ---------------------------------------------------------------------------
# Wigner transforms
# ---------------------------------------------------------------------------

def laguerre_scaled(n_max: int, k: int, x: np.ndarray) -> np.ndarray:
    """B_n^(k)(x) for n = 0..n_max, as an array of shape (n_max+1, len(x))."""
    x = np.asarray(x, dtype=float)
    out = np.empty((n_max + 1, x.size))
    if k == 0:
        b0 = np.exp(-0.5 * x)
    else:
        with np.errstate(divide="ignore"):
            logx = np.log(np.where(x > 0, x, 1.0))
        b0 = np.where(x > 0, np.exp(0.5 * k * logx - 0.5 * x - 0.5 * gammaln(k + 1)), 0.0)
    out[0] = b0
    if n_max >= 1:
        out[1] = b0 * (k + 1 - x) / np.sqrt(k + 1.0)
    for n in range(1, n_max):
        out[n + 1] = (
            (2 * n + k + 1 - x) * out[n] - np.sqrt(n * (n + k) * 1.0) * out[n - 1]
        ) * (np.sqrt((n + 1.0) / (n + 1.0 + k)) / (n + 1.0))
    return out


def fock_wigner_table(n_max: int, r: np.ndarray) -> np.ndarray:
    """W_k(|alpha| = r) for Fock states k = 0..n_max; shape (n_max+1, len(r)).

    W_k(alpha) = (2/pi) (-1)^k e^{-2 r^2} L_k(4 r^2).
    """
    r = np.asarray(r, dtype=float)
    b = laguerre_scaled(n_max, 0, 4.0 * r**2)
    signs = (-1.0) ** np.arange(n_max + 1)
    return (2.0 / np.pi) * signs[:, None] * b


def diagonal_wigner_radial(weights: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Wigner function of a diagonal Fock mixture, evaluated at radii ``r``."""
    weights = np.asarray(weights, dtype=float)
    table = fock_wigner_table(weights.size - 1, r)
    return weights @ table


def wigner_of_density(rho: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Wigner function of a single-mode density matrix on a cartesian grid.

    Returns W with shape (len(x), len(y)).  Uses
    W_{|m><n|}(alpha) = (2/pi)(-1)^n B_n^(m-n)(4|alpha|^2) e^{-i(m-n)phi}
    for m >= n, plus the conjugate block.
    """
    rho = np.asarray(rho)
    d = rho.shape[0]
    X, Y = np.meshgrid(np.asarray(x, float), np.asarray(y, float), indexing="ij")
    r2 = (X**2 + Y**2).ravel()
    phi = np.arctan2(Y, X).ravel()
    x4 = 4.0 * r2
    W = np.zeros(r2.size)
    signs = (-1.0) ** np.arange(d)
    for k in range(d):
        diag = np.asarray([rho[n + k, n] for n in range(d - k)])
        if not np.any(diag):
            continue
        b = laguerre_scaled(d - 1 - k, k, x4)  # rows n = 0..d-1-k
        radial = (signs[: d - k] * diag) @ b
        if k == 0:
            W += radial.real
        else:
            # rho_{n+k,n} pairs with e^{-i k phi}; hermiticity doubles the real part
            W += 2.0 * np.real(radial * np.exp(-1j * k * phi))
    return (2.0 / np.pi) * W.reshape(X.shape)
