import numpy as np
import pytest

from Assignment.hungarian import CostMatrix, fit_hard_assignment, hungarian
from Gauss_core.errors import ContractViolationError, InsufficientDataError
from Gauss_core.gauss_core import Permutation, all_permutations, identity
from Perm_gmm.perm_gmm import PermDistribution, Regime, RegimeModel
from Sim_lab.sim_lab import GeneratorSpec, mse_with_matching, simulate


def test_matches_brute_force_on_seven_roles(rng):
    perms = all_permutations(7)
    for _ in range(3):
        c = rng.normal(size=(7, 7))
        cost = CostMatrix(c)
        best = min(cost.total(q) for q in perms)
        assert cost.total(hungarian(c)) == pytest.approx(best)
        assert cost.total(hungarian(c, tie_break=False)) == pytest.approx(best)


def test_ties_pick_smallest_map():
    assert hungarian(np.zeros((4, 4))) == identity(4)
    c = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    assert hungarian(c) == Permutation((1, 2, 0))
    c = np.array([[0.0, 0.0], [0.0, 0.0]])
    assert hungarian(c) == identity(2)


def test_tie_break_is_lexicographic_among_optima(rng):
    c = rng.integers(0, 3, size=(5, 5)).astype(float)
    cost = CostMatrix(c)
    best = min(cost.total(q) for q in all_permutations(5))
    optima = sorted(q.map for q in all_permutations(5) if cost.total(q) == best)
    assert hungarian(c).map == optima[0]


def test_single_role():
    assert hungarian(np.array([[3.0]])) == identity(1)


def test_rejects_bad_matrices():
    with pytest.raises(ContractViolationError):
        hungarian(np.zeros((2, 3)))
    with pytest.raises(ContractViolationError):
        hungarian(np.array([[0.0, np.inf], [1.0, 0.0]]))


def test_hard_assignment_objective_is_monotone(swap_model3):
    y = simulate(GeneratorSpec(swap_model3, 300, 1)).y
    trace = []
    f = fit_hard_assignment(y, max_iter=30, tol=0.0, trace=trace)
    assert f.d == 3
    assert len(trace) == 30
    assert np.all(np.diff(trace) >= -1e-9)


def test_hard_assignment_recovers_separated_roles(formation3):
    dist = PermDistribution(tuple(all_permutations(3)), np.full(6, 1.0 / 6.0))
    model = RegimeModel((Regime(formation3, dist, 1.0),))
    y = simulate(GeneratorSpec(model, 1000, 2)).y
    f = fit_hard_assignment(y, threads=2)
    assert mse_with_matching(f.means, formation3.means) < 0.01


def test_hard_assignment_threads_agree(swap_model3):
    y = simulate(GeneratorSpec(swap_model3, 200, 3)).y
    one = fit_hard_assignment(y, max_iter=10, threads=1)
    many = fit_hard_assignment(y, max_iter=10, threads=3)
    assert np.allclose(one.means, many.means)


def test_hard_assignment_needs_frames():
    with pytest.raises(InsufficientDataError):
        fit_hard_assignment(np.zeros((0, 3, 2)))
