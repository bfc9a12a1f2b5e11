import numpy as np
import pytest

from bilinopt.hankel import (DataMatrices, RankDeficientError,
                             build_data_matrices, hankel, identify_system,
                             markov_blocks_from_model, min_data_length,
                             rank_certificate, recover_markov_blocks,
                             truncated_pinv)
from bilinopt.systems import (Trajectory, fixture_problem, load_fixture,
                              random_system, simulate)
from conftest import make_system_and_data


def test_hankel_structure():
    sig = np.arange(1.0, 6.0)[:, None]  # 1..5 scalar signal
    H = hankel(sig, 2)
    np.testing.assert_allclose(H, [[1, 2, 3, 4], [2, 3, 4, 5]])


def test_hankel_vector_signal():
    sig = np.array([[1.0, 10.0], [2.0, 20.0], [3.0, 30.0]])
    H = hankel(sig, 2)
    assert H.shape == (4, 2)
    np.testing.assert_allclose(H[:, 0], [1, 10, 2, 20])


def test_hankel_depth_range():
    with pytest.raises(ValueError):
        hankel(np.zeros((3, 1)), 4)


def test_min_data_length_values():
    assert min_data_length(1, 1, 20) == 60
    assert min_data_length(5, 1, 10) == 74
    assert min_data_length(3, 2, 50) == 452
    with pytest.raises(ValueError):
        min_data_length(0, 1, 1)


def test_rank_certificate_trivial():
    cert = rank_certificate(np.eye(3))
    assert cert.rank == 3 and cert.full_row_rank
    v = np.arange(1.0, 4.0)
    cert = rank_certificate(np.outer(v, v))
    assert cert.rank == 1 and not cert.full_row_rank


def test_data_matrix_shapes_example1():
    sys_ = load_fixture("example1")
    p = fixture_problem("example1")
    rng = np.random.default_rng(0)
    inputs = rng.uniform(-1, 1, (60, 1))
    traj = simulate(sys_, np.asarray(p["experiment_x0"], float), inputs)
    dm = build_data_matrices(traj, 20)
    assert dm.GT.shape == (41, 41)
    assert dm.HT1x.shape == (21, 41)
    assert dm.cols == 41


def test_data_matrix_blocks_consistent(rng):
    _, traj, dm = make_system_and_data(2, 1, 3, seed=4)
    j = 5  # window starting at time j
    np.testing.assert_allclose(dm.H1x[:, j], traj.states[j])
    np.testing.assert_allclose(dm.HTu[:, j], traj.inputs[j:j + 3].reshape(-1))
    np.testing.assert_allclose(dm.HTx[:, j], traj.states[j:j + 3].reshape(-1))
    np.testing.assert_allclose(dm.HT1x[:, j],
                               traj.states[j:j + 4].reshape(-1))


def test_truncated_pinv_matches_numpy(rng):
    M = rng.standard_normal((4, 7))
    np.testing.assert_allclose(truncated_pinv(M), np.linalg.pinv(M),
                               atol=1e-10)


def test_recover_markov_blocks_match_model():
    for seed in range(3):
        sys_, traj, dm = make_system_and_data(2, 1, 3, seed=seed)
        O, P, Q = recover_markov_blocks(dm)
        Om, Pm, Qm = markov_blocks_from_model(sys_, 3)
        np.testing.assert_allclose(O, Om, atol=1e-8)
        np.testing.assert_allclose(P, Pm, atol=1e-8)
        np.testing.assert_allclose(Q, Qm, atol=1e-8)


def test_recover_requires_full_rank():
    sys_ = random_system(2, 1, seed=0)
    traj = simulate(sys_, np.ones(2), np.zeros((12, 1)))  # zero inputs: no PE
    dm = build_data_matrices(traj, 2)
    with pytest.raises(RankDeficientError):
        recover_markov_blocks(dm)


def test_identify_system_exact():
    for seed in range(3):
        sys_, _, dm = make_system_and_data(3, 2, 2, seed=seed)
        sid = identify_system(dm)
        np.testing.assert_allclose(sid.A, sys_.A, atol=1e-10)
        np.testing.assert_allclose(sid.B, sys_.B, atol=1e-10)
        np.testing.assert_allclose(sid.N, sys_.N, atol=1e-10)


def test_identify_requires_rank():
    sys_ = random_system(2, 1, seed=1)
    traj = simulate(sys_, np.zeros(2), np.zeros((10, 1)))
    dm = build_data_matrices(traj, 1)
    with pytest.raises(RankDeficientError):
        identify_system(dm)


def test_build_data_matrices_bad_horizon():
    sys_ = random_system(2, 1, seed=2)
    traj = simulate(sys_, np.zeros(2), np.zeros((5, 1)))
    with pytest.raises(ValueError):
        build_data_matrices(traj, 6)
