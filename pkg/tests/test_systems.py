import json

import numpy as np
import pytest

from bilinopt.systems import (BilinearSystem, DivergenceError, Trajectory,
                              fixture_problem, is_pair_controllable,
                              load_fixture, random_system, simulate, step)


def test_step_matches_definition(rng):
    sys_ = random_system(3, 2, seed=7)
    x = rng.standard_normal(3)
    u = rng.standard_normal(2)
    expected = sys_.A @ x + sys_.B @ u
    for j in range(3):
        expected += x[j] * (sys_.n_block(j) @ u)
    np.testing.assert_allclose(step(sys_, x, u), expected, rtol=0, atol=1e-14)


def test_step_equals_kron_form(rng):
    # x+ = A x + B u + N (x kron u) with N = [N_1 ... N_n]
    sys_ = random_system(2, 2, seed=3)
    x = rng.standard_normal(2)
    u = rng.standard_normal(2)
    kron = np.kron(x, u)
    np.testing.assert_allclose(step(sys_, x, u),
                               sys_.A @ x + sys_.B @ u + sys_.N @ kron,
                               atol=1e-14)


def test_simulate_shapes_and_consistency(rng):
    sys_ = random_system(3, 1, seed=1)
    inputs = 0.1 * rng.standard_normal((8, 1))
    x0 = rng.standard_normal(3)
    traj = simulate(sys_, x0, inputs)
    assert traj.states.shape == (9, 3)
    assert traj.inputs.shape == (8, 1)
    assert traj.length == 8 and traj.n == 3 and traj.m == 1
    np.testing.assert_allclose(traj.states[0], x0)
    for t in range(8):
        np.testing.assert_allclose(
            traj.states[t + 1], step(sys_, traj.states[t], inputs[t]),
            atol=1e-13)


def test_kron_sequence_ordering():
    states = np.array([[1.0, 2.0], [3.0, 4.0]])
    inputs = np.array([[5.0]])
    traj = Trajectory(states, inputs)
    np.testing.assert_allclose(traj.kron_sequence(),
                               [[5.0, 10.0]])  # x(0) kron u(0)


def test_simulate_divergence_raises():
    sys_ = BilinearSystem(np.array([[3.0]]), np.array([[0.0]]),
                          np.array([[0.0]]))
    with pytest.raises(DivergenceError):
        simulate(sys_, np.array([1.0]), np.zeros((200, 1)))


def test_random_system_deterministic_and_controllable():
    a = random_system(4, 2, seed=11)
    b = random_system(4, 2, seed=11)
    np.testing.assert_array_equal(a.A, b.A)
    np.testing.assert_array_equal(a.N, b.N)
    assert is_pair_controllable(a.A, np.hstack([a.B, a.N]))


def test_fixtures_shapes():
    e1 = load_fixture("example1")
    assert (e1.n, e1.m) == (1, 1)
    e2 = load_fixture("example2")
    assert (e2.n, e2.m) == (5, 1)
    e3 = load_fixture("example3")
    assert (e3.n, e3.m) == (3, 2)
    # example 1 dynamics: x+ = x + 0.1 x u
    np.testing.assert_allclose(e1.A, [[1.0]])
    np.testing.assert_allclose(e1.B, [[0.0]])
    np.testing.assert_allclose(e1.N, [[0.1]])
    assert np.all(e3.B == 0.0)


def test_fixture_problem_fields():
    for name in ("example1", "example2", "example3"):
        p = fixture_problem(name)
        for key in ("Q", "R", "x0", "xf", "T", "L"):
            assert key in p, f"{name} missing {key}"
    assert fixture_problem("example1")["T"] == 20
    assert fixture_problem("example2")["L"] == 74
    assert fixture_problem("example3")["T"] == 50


def test_system_dict_roundtrip(tmp_path):
    sys_ = random_system(3, 2, seed=5)
    again = BilinearSystem.from_dict(sys_.to_dict())
    np.testing.assert_array_equal(sys_.A, again.A)
    np.testing.assert_array_equal(sys_.B, again.B)
    np.testing.assert_array_equal(sys_.N, again.N)
    p = tmp_path / "sys.json"
    p.write_text(json.dumps(sys_.to_dict()))
    loaded = BilinearSystem.from_json(p)
    np.testing.assert_array_equal(sys_.N, loaded.N)


def test_bad_shapes_rejected():
    with pytest.raises(ValueError):
        BilinearSystem(np.ones((2, 3)), np.ones((2, 1)), np.ones((2, 2)))
    with pytest.raises(ValueError):
        BilinearSystem(np.eye(2), np.ones((2, 1)), np.ones((2, 3)))
