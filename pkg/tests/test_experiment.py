import numpy as np
import pytest

from bilinopt.experiment import (ExperimentConfig, SimulatedPlant,
                                 design_experiment, random_experiment)
from bilinopt.hankel import min_data_length
from bilinopt.systems import load_fixture, random_system, simulate


def test_simulated_plant_protocol():
    sys_ = random_system(2, 1, seed=0)
    plant = SimulatedPlant(sys_, np.array([0.5, -0.2]))
    x = plant.reset()
    np.testing.assert_allclose(x, [0.5, -0.2])
    u = np.array([0.1])
    x1 = plant.step(u)
    ref = simulate(sys_, np.array([0.5, -0.2]), u[None, :]).states[1]
    np.testing.assert_allclose(x1, ref, atol=1e-14)
    # reset rewinds
    np.testing.assert_allclose(plant.reset(), [0.5, -0.2])


def test_random_experiment_deterministic():
    sys_ = random_system(2, 1, seed=1)
    a = random_experiment(sys_, np.zeros(2), 20, 0.5, seed=9)
    b = random_experiment(sys_, np.zeros(2), 20, 0.5, seed=9)
    np.testing.assert_array_equal(a.inputs, b.inputs)
    assert a.length == 20
    assert float(np.max(np.abs(a.inputs))) <= 0.5


def test_design_experiment_small_system():
    sys_ = random_system(2, 1, seed=3)
    plant = SimulatedPlant(sys_, np.zeros(2))
    res = design_experiment(plant, ExperimentConfig(T=3, epsilon=1e-2, seed=0))
    assert res.certificate.full_row_rank
    assert res.L <= 3 * min_data_length(2, 1, 3)
    ranks = [entry["rank_after"] for entry in res.log]
    assert all(r2 >= r1 for r1, r2 in zip(ranks, ranks[1:]))
    assert ranks[-1] == res.dm.GT.shape[0]


def test_design_experiment_example2_reaches_min_length():
    sys_ = load_fixture("example2")
    plant = SimulatedPlant(sys_, np.zeros(5))
    res = design_experiment(plant, ExperimentConfig(T=10, epsilon=1e-2,
                                                    seed=0))
    assert res.certificate.full_row_rank
    assert res.L == min_data_length(5, 1, 10) == 74


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(T=0)
    with pytest.raises(ValueError):
        ExperimentConfig(T=2, epsilon=0.0)
