"""Two-way map between coefficient vectors and length-T trajectories.

Any length-T input/state trajectory of the data-generating system can be
written as ``[x_[0,T]; u_[0,T-1]] = [HT1x; HTu] alpha``; conversely an alpha
whose reconstructed windows satisfy the bilinear self-consistency constraint

    xbar kron ubar (per time step)  ==  HTxu alpha

reconstructs a genuine system trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hankel import DataMatrices, RankDeficientError, truncated_pinv, DEFAULT_REL_RANK_TOL
from .systems import Trajectory


@dataclass(frozen=True)
class Alpha:
    """Coefficient vector expressed against one set of data matrices."""

    coefficients: np.ndarray
    dm: DataMatrices

    def __post_init__(self):
        coeff = np.asarray(self.coefficients, dtype=float).reshape(-1)
        if coeff.shape[0] != self.dm.cols:
            raise ValueError(
                f"alpha has length {coeff.shape[0]}, data has {self.dm.cols} windows")
        object.__setattr__(self, "coefficients", coeff)
        coeff.setflags(write=False)


@dataclass(frozen=True)
class ReconstructedTrajectory:
    """Trajectory read off the data matrices for a given alpha."""

    states: np.ndarray  # (T+1, n)
    inputs: np.ndarray  # (T, m)
    consistency_residual: float

    def as_trajectory(self) -> Trajectory:
        return Trajectory(self.states, self.inputs)


def _pointwise_kron(states: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    """Stack x(t) kron u(t) over t into one vector of length T*n*m."""
    T = inputs.shape[0]
    return (states[:T, :, None] * inputs[:, None, :]).reshape(-1)


def check_bilinear_consistency(alpha: Alpha) -> float:
    """Inf-norm residual of the bilinear self-consistency constraint.

    Zero residual certifies that the reconstruction of ``alpha`` is a genuine
    trajectory of the (unknown) data-generating system.
    """
    dm = alpha.dm
    a = alpha.coefficients
    xbar = (dm.HTx @ a).reshape(dm.T, dm.n)
    ubar = (dm.HTu @ a).reshape(dm.T, dm.m)
    lhs = _pointwise_kron(xbar, ubar)
    rhs = dm.HTxu @ a
    return float(np.max(np.abs(lhs - rhs))) if rhs.size else 0.0


def reconstruct(alpha: Alpha) -> ReconstructedTrajectory:
    """Read the trajectory ``(HT1x alpha, HTu alpha)`` off the data."""
    dm = alpha.dm
    a = alpha.coefficients
    states = (dm.HT1x @ a).reshape(dm.T + 1, dm.n)
    inputs = (dm.HTu @ a).reshape(dm.T, dm.m)
    return ReconstructedTrajectory(states, inputs, check_bilinear_consistency(alpha))


def represent(traj: Trajectory, dm: DataMatrices,
              rel_tol: float = DEFAULT_REL_RANK_TOL) -> Alpha:
    """Minimum-norm alpha representing a length-T trajectory of the same system.

    Solves ``GT alpha = [x(0); u_[0,T-1]; w_[0,T-1]]`` by truncated
    pseudo-inverse; requires GT full row rank.
    """
    if traj.length != dm.T:
        raise ValueError(f"trajectory has {traj.length} inputs, expected T={dm.T}")
    cert = dm.certificate(rel_tol)
    if not cert.full_row_rank:
        raise RankDeficientError(cert)
    b = np.concatenate([
        traj.states[0],
        traj.inputs.reshape(-1),
        traj.kron_sequence().reshape(-1),
    ])
    a = truncated_pinv(dm.GT, rel_tol) @ b
    return Alpha(a, dm)


def basis_alpha(dm: DataMatrices, j: int) -> Alpha:
    """Alpha selecting the j-th recorded data window."""
    a = np.zeros(dm.cols)
    a[j] = 1.0
    return Alpha(a, dm)
