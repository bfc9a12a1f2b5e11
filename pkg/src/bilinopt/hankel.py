"""Hankel data matrices, persistence-of-excitation certificates, recovery.

The stacked data matrix of horizon T built from an experiment of length L is

    G_T(L) = [ H_1(x_[0,L-T]); H_T(u_[0,L-1]); H_T(w_[0,L-1]) ],

with w(t) = x(t) kron u(t).  The data is T-persistently exciting when G_T(L)
has full row rank; a :class:`RankCertificate` records the SVD-based decision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .systems import BilinearSystem, Trajectory

DEFAULT_REL_RANK_TOL = 1e-9


class RankDeficientError(RuntimeError):
    """An operation required a full-row-rank data matrix."""

    def __init__(self, certificate: "RankCertificate"):
        self.certificate = certificate
        super().__init__(
            f"matrix {certificate.shape} has numerical rank "
            f"{certificate.rank} < {certificate.shape[0]} "
            f"(tolerance {certificate.tolerance:.3e})")


def hankel(signal: np.ndarray, depth: int) -> np.ndarray:
    """Block Hankel matrix of the given depth.

    ``signal`` is (length, d); column j stacks ``signal[j : j+depth]``.
    Result shape is (d*depth, length-depth+1).
    """
    signal = np.atleast_2d(np.asarray(signal, dtype=float))
    length, d = signal.shape
    if not 1 <= depth <= length:
        raise ValueError(f"depth {depth} out of range for signal of length {length}")
    cols = length - depth + 1
    H = np.empty((d * depth, cols))
    for k in range(depth):
        H[k * d:(k + 1) * d, :] = signal[k:k + cols].T
    return H


@dataclass(frozen=True)
class RankCertificate:
    """SVD-based numerical rank decision for a data matrix."""

    shape: tuple[int, int]
    singular_values: np.ndarray
    rank: int
    tolerance: float
    full_row_rank: bool

    def to_dict(self) -> dict:
        return {
            "shape": list(self.shape),
            "rank": self.rank,
            "tolerance": self.tolerance,
            "full_row_rank": self.full_row_rank,
            "singular_values": [float(f"{s:.16g}") for s in self.singular_values],
        }


def rank_certificate(M: np.ndarray, rel_tol: float = DEFAULT_REL_RANK_TOL) -> RankCertificate:
    """Numerical rank of M with tolerance ``rel_tol * sigma_max * max(shape)``."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        raise ValueError("matrix is empty")
    sv = np.linalg.svd(M, compute_uv=False)
    tol = rel_tol * sv[0] * max(M.shape)
    rank = int(np.count_nonzero(sv > tol))
    return RankCertificate(M.shape, sv, rank, float(tol), rank == M.shape[0])


def min_data_length(n: int, m: int, T: int) -> int:
    """Smallest L for which G_T(L) can possibly have full row rank."""
    if n < 1 or m < 1 or T < 1:
        raise ValueError("n, m, T must be positive")
    return (m * n + m + 1) * T + n - 1


@dataclass(frozen=True)
class DataMatrices:
    """Hankel blocks of one experiment at horizon T.

    Attributes
    ----------
    H1x : (n, L-T+1) first states of each window
    HTu : (m T, L-T+1) input windows
    HTxu : (m n T, L-T+1) windows of w = x kron u
    HT1x : (n (T+1), L-T+1) depth-(T+1) state windows
    GT : row-stack [H1x; HTu; HTxu]
    """

    T: int
    L: int
    n: int
    m: int
    H1x: np.ndarray
    HTu: np.ndarray
    HTxu: np.ndarray
    HT1x: np.ndarray
    GT: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "GT", np.vstack([self.H1x, self.HTu, self.HTxu]))

    @property
    def cols(self) -> int:
        """Number of data windows, L - T + 1."""
        return self.GT.shape[1]

    @property
    def HTx(self) -> np.ndarray:
        """Depth-T state windows H_T(x_[0,L-1]): first nT rows of HT1x."""
        return self.HT1x[: self.n * self.T]

    @property
    def HTx_shift(self) -> np.ndarray:
        """Shifted state windows H_T(x_[1,L]): last nT rows of HT1x."""
        return self.HT1x[self.n:]

    def certificate(self, rel_tol: float = DEFAULT_REL_RANK_TOL) -> RankCertificate:
        return rank_certificate(self.GT, rel_tol)

    def to_dict(self, rel_tol: float = DEFAULT_REL_RANK_TOL) -> dict:
        return {
            "T": self.T, "L": self.L, "n": self.n, "m": self.m,
            "GT_shape": list(self.GT.shape),
            "certificate": self.certificate(rel_tol).to_dict(),
        }


def build_data_matrices(traj: Trajectory, T: int) -> DataMatrices:
    """Assemble all Hankel blocks of an experiment at horizon T."""
    L = traj.length
    if not 1 <= T <= L:
        raise ValueError(f"horizon T={T} exceeds data length L={L}")
    n, m = traj.n, traj.m
    x = traj.states
    u = traj.inputs
    w = traj.kron_sequence()
    return DataMatrices(
        T=T, L=L, n=n, m=m,
        H1x=hankel(x[: L - T + 1], 1),
        HTu=hankel(u, T),
        HTxu=hankel(w, T),
        HT1x=hankel(x, T + 1),
    )


def truncated_pinv(M: np.ndarray, rel_tol: float = DEFAULT_REL_RANK_TOL) -> np.ndarray:
    """SVD pseudo-inverse truncated with the same policy as :func:`rank_certificate`."""
    U, sv, Vt = np.linalg.svd(M, full_matrices=False)
    tol = rel_tol * (sv[0] if sv.size else 0.0) * max(M.shape)
    keep = sv > tol
    inv = np.zeros_like(sv)
    inv[keep] = 1.0 / sv[keep]
    return (Vt.T * inv) @ U.T


def recover_markov_blocks(dm: DataMatrices,
                          rel_tol: float = DEFAULT_REL_RANK_TOL
                          ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Recover (O_T, P_T, Q_T) from data as H_T(x_[1,L]) G_T(L)^+.

    Requires G_T(L) full row rank; for T = 1 the blocks are (A, B, N).
    """
    cert = dm.certificate(rel_tol)
    if not cert.full_row_rank:
        raise RankDeficientError(cert)
    OPQ = dm.HTx_shift @ truncated_pinv(dm.GT, rel_tol)
    n, m, T = dm.n, dm.m, dm.T
    O = OPQ[:, :n]
    P = OPQ[:, n:n + m * T]
    Q = OPQ[:, n + m * T:]
    return O, P, Q


def identify_system(dm: DataMatrices,
                    rel_tol: float = DEFAULT_REL_RANK_TOL) -> BilinearSystem:
    """Recover (A, B, N) by one-step least squares over all data windows.

    Stacks every transition x(t+1) = [A B N] [x(t); u(t); w(t)] contained in
    the Hankel blocks.  Exact for noiseless data whenever the stacked
    regressor has full row rank (implied by T-persistency of excitation).
    """
    n, m, T = dm.n, dm.m, dm.T
    xs = np.hstack([dm.HTx[t * n:(t + 1) * n] for t in range(T)])
    us = np.hstack([dm.HTu[t * m:(t + 1) * m] for t in range(T)])
    ws = np.hstack([dm.HTxu[t * n * m:(t + 1) * n * m] for t in range(T)])
    ys = np.hstack([dm.HT1x[(t + 1) * n:(t + 2) * n] for t in range(T)])
    Z = np.vstack([xs, us, ws])
    cert = rank_certificate(Z, rel_tol)
    if not cert.full_row_rank:
        raise RankDeficientError(cert)
    theta = ys @ truncated_pinv(Z, rel_tol)
    A = theta[:, :n]
    B = theta[:, n:n + m]
    N = theta[:, n + m:]
    return BilinearSystem(A, B, N)


def markov_blocks_from_model(sys: BilinearSystem, T: int
                             ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Build (O_T, P_T, Q_T) directly from (A, B, N).

    O_T stacks A, A^2, ..., A^T; P_T and Q_T are block lower-triangular
    Toeplitz in A^k B and A^k N.  Test-support construction: the data path
    never uses the true matrices.
    """
    n, m = sys.n, sys.m
    A, B, N = sys.A, sys.B, sys.N
    powers = [np.eye(n)]
    for _ in range(T):
        powers.append(A @ powers[-1])
    O = np.vstack(powers[1:T + 1])
    P = np.zeros((n * T, m * T))
    Q = np.zeros((n * T, m * n * T))
    for i in range(T):
        for j in range(i + 1):
            P[i * n:(i + 1) * n, j * m:(j + 1) * m] = powers[i - j] @ B
            Q[i * n:(i + 1) * n, j * m * n:(j + 1) * m * n] = powers[i - j] @ N
    return O, P, Q
