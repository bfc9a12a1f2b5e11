import numpy as np
import pytest

from bilinopt.hankel import RankDeficientError, build_data_matrices
from bilinopt.represent import (Alpha, basis_alpha,
                                check_bilinear_consistency, reconstruct,
                                represent)
from bilinopt.systems import Trajectory, random_system, simulate
from conftest import make_system_and_data


def _fresh_trajectory(sys_, T, seed):
    gen = np.random.default_rng(seed)
    return simulate(sys_, gen.standard_normal(sys_.n) * 0.3,
                    gen.uniform(-0.5, 0.5, (T, sys_.m)))


def test_round_trip_small():
    sys_, _, dm = make_system_and_data(2, 1, 3, seed=0)
    new = _fresh_trajectory(sys_, 3, seed=99)
    alpha = represent(new, dm)
    rec = reconstruct(alpha)
    np.testing.assert_allclose(rec.states, new.states, atol=1e-8)
    np.testing.assert_allclose(rec.inputs, new.inputs, atol=1e-8)
    assert rec.consistency_residual < 1e-8


def test_consistency_flags_foreign_trajectory():
    sys_a, _, dm = make_system_and_data(2, 1, 3, seed=1)
    sys_b = random_system(2, 1, seed=77)
    foreign = _fresh_trajectory(sys_b, 3, seed=5)
    alpha = represent(foreign, dm)
    # representation matches x(0), u and w exactly, but the reconstruction
    # cannot be a trajectory of the data-generating system
    assert check_bilinear_consistency(alpha) > 1e-3


def test_basis_alpha_reads_recorded_window():
    _, traj, dm = make_system_and_data(2, 1, 3, seed=2)
    j = 4
    rec = reconstruct(basis_alpha(dm, j))
    np.testing.assert_allclose(rec.states, traj.states[j:j + 4], atol=1e-10)
    np.testing.assert_allclose(rec.inputs, traj.inputs[j:j + 3], atol=1e-10)
    assert rec.consistency_residual < 1e-10


def test_represent_checks_horizon():
    sys_, _, dm = make_system_and_data(2, 1, 3, seed=3)
    wrong = _fresh_trajectory(sys_, 4, seed=0)
    with pytest.raises(ValueError):
        represent(wrong, dm)


def test_represent_requires_full_rank():
    sys_ = random_system(2, 1, seed=4)
    flat = simulate(sys_, np.ones(2), np.zeros((12, 1)))
    dm = build_data_matrices(flat, 2)
    with pytest.raises(RankDeficientError):
        represent(_fresh_trajectory(sys_, 2, seed=1), dm)


def test_alpha_length_validation():
    _, _, dm = make_system_and_data(2, 1, 3, seed=5)
    with pytest.raises(ValueError):
        Alpha(np.zeros(dm.cols + 1), dm)


def test_reconstruction_as_trajectory():
    sys_, _, dm = make_system_and_data(2, 1, 3, seed=6)
    rec = reconstruct(represent(_fresh_trajectory(sys_, 3, seed=2), dm))
    traj = rec.as_trajectory()
    assert traj.length == 3
    np.testing.assert_array_equal(traj.states, rec.states)
