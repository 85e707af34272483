import numpy as np
import pytest

from Gauss_core.gauss_core import identity, permute_players, transposition
from Sim_lab.sim_lab import (
    METHODS,
    GeneratorSpec,
    mse_with_matching,
    simulate,
    stage_seed,
    two_role_experiment,
    two_role_model,
)


def test_stage_seed_is_stable_and_distinct():
    assert stage_seed(0, "shared", 1) == stage_seed(0, "shared", 1)
    seeds = {stage_seed(0, "shared", 1), stage_seed(0, "shared", 2), stage_seed(0, "select", 1),
             stage_seed(1, "shared", 1)}
    assert len(seeds) == 4
    assert all(0 <= s < 2 ** 63 for s in seeds)


def test_simulated_frames_are_permuted_roles(swap_model3):
    data = simulate(GeneratorSpec(swap_model3, 50, 3))
    assert data.y.shape == (50, 3, 2)
    assert len(data) == 50
    for i in range(50):
        q = [p for p in swap_model3.regimes[0].perm_dist.support if p.as_array().tolist() == data.perm_maps[i].tolist()]
        assert len(q) == 1
        assert np.allclose(data.y[i], permute_players(q[0], data.roles[i]))
    assert data.frames[7].frame_index == 7
    assert np.array_equal(data.frames[7].y, data.y[7])


def test_simulation_is_seeded(swap_model3):
    a = simulate(GeneratorSpec(swap_model3, 20, 5))
    b = simulate(GeneratorSpec(swap_model3, 20, 5))
    assert np.array_equal(a.y, b.y)


def test_simulated_frequencies_follow_weights(swap_model3):
    data = simulate(GeneratorSpec(swap_model3, 20000, 6))
    identity_share = np.mean(np.all(data.perm_maps == np.arange(3), axis=1))
    assert identity_share == pytest.approx(0.7, abs=0.02)
    assert np.all(data.regimes == 0)


def test_two_role_model_layout():
    model = two_role_model(1.5, 0.3)
    reg = model.regimes[0]
    assert np.allclose(reg.formation.means, [[1.5, 0.0], [-1.5, 0.0]])
    assert reg.perm_dist.weight_of(transposition(2, 0, 1)) == pytest.approx(0.3)
    assert reg.perm_dist.weight_of(identity(2)) == pytest.approx(0.7)


def test_mse_with_matching_ignores_role_labels():
    truth = np.array([[1.0, 0.0], [-1.0, 0.0]])
    assert mse_with_matching(truth[::-1], truth) == pytest.approx(0.0)
    assert mse_with_matching(truth + [0.0, 1.0], truth) == pytest.approx(1.0)


def test_two_role_experiment_table():
    table = two_role_experiment([0.5, 2.0], p=0.2, n=400, reps=2, seed=1, max_iter=30)
    assert list(table.columns) == ["delta", "method", "mse_mean", "mse_std"]
    assert len(table) == 2 * len(METHODS)
    assert set(table["method"]) == set(METHODS)
    assert (table["mse_mean"] >= 0).all()


def test_two_role_experiment_threads_agree():
    one = two_role_experiment([1.0], n=300, reps=2, seed=4, threads=1, max_iter=20)
    many = two_role_experiment([1.0], n=300, reps=2, seed=4, threads=2, max_iter=20)
    assert np.allclose(one["mse_mean"], many["mse_mean"])



@pytest.mark.slow
def test_two_role_mse_ordering():
    table = two_role_experiment([0.25, 0.5, 2.0], p=0.2, n=5000, reps=5, seed=0, threads=4)
    mse = table.set_index(["delta", "method"])["mse_mean"]
    for delta in (0.25, 0.5):
        assert mse[(delta, "hard")] >= 5.0 * mse[(delta, "permutation")]
    assert (table.loc[table["delta"] == 2.0, "mse_mean"] < 0.01).all()
