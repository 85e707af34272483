import numpy as np
import pytest

from Gauss_core.errors import ContractViolationError, InsufficientDataError
from Gauss_core.gauss_core import identity
from Perm_gmm.perm_gmm import PermDistribution, Regime, RegimeModel
from Shared_gmm.shared_gmm import (
    SharedFit,
    build_independent_dataset,
    fit_shared_gmm,
    init_shared,
    initial_pi,
    shared_from_dict,
    shared_log_likelihood,
    shared_to_dict,
)
from Sim_lab.sim_lab import GeneratorSpec, simulate


def _no_swap_frames(formation, n=900, seed=1):
    model = RegimeModel((Regime(formation, PermDistribution((identity(formation.d),), np.ones(1)), 1.0),))
    return simulate(GeneratorSpec(model, n, seed)).y


def test_dataset_uses_every_frame_once_per_player(rng):
    y = rng.normal(size=(23, 3, 2))
    ds = build_independent_dataset(y, seed=4)
    assert ds.m == 7 and ds.d == 3
    assert np.array_equal(np.sort(ds.source_index.ravel()), np.arange(21))
    for j in range(ds.m):
        for l in range(ds.d):
            assert np.array_equal(ds.z[j, l], y[ds.source_index[j, l], l])


def test_dataset_is_seeded(rng):
    y = rng.normal(size=(30, 3, 2))
    a = build_independent_dataset(y, seed=9)
    b = build_independent_dataset(y, seed=9)
    c = build_independent_dataset(y, seed=10)
    assert np.array_equal(a.source_index, b.source_index)
    assert not np.array_equal(a.source_index, c.source_index)


def test_dataset_needs_d_frames(rng):
    with pytest.raises(InsufficientDataError):
        build_independent_dataset(rng.normal(size=(2, 3, 2)))


def test_initial_pi_rows():
    pi = initial_pi(11)
    assert pi[0, 0] == pytest.approx(0.5)
    assert pi[0, 1] == pytest.approx(0.05)
    assert np.allclose(pi.sum(axis=1), 1.0)
    assert np.array_equal(initial_pi(1), np.ones((1, 1)))


def test_shared_fit_rejects_bad_pi(formation3):
    with pytest.raises(ContractViolationError):
        SharedFit(formation3, np.full((3, 3), 0.5))
    with pytest.raises(ContractViolationError):
        SharedFit(formation3, np.eye(2))


def test_trace_is_monotone_and_starts_at_init(formation3):
    y = _no_swap_frames(formation3)
    ds = build_independent_dataset(y, seed=0)
    init = init_shared(y)
    fit = fit_shared_gmm(ds, init, max_iter=50, tol=1e-10)
    assert fit.loglik_trace[0] == pytest.approx(shared_log_likelihood(ds, init))
    assert len(fit.loglik_trace) == fit.n_iter + 1
    assert np.all(np.diff(fit.loglik_trace) >= -1e-8)
    assert fit.loglik_trace[-1] == pytest.approx(shared_log_likelihood(ds, fit))


def test_single_update_with_infinite_tol(formation3):
    y = _no_swap_frames(formation3, n=300)
    fit = fit_shared_gmm(build_independent_dataset(y), init_shared(y), max_iter=20, tol=float("inf"))
    assert fit.n_iter == 1
    assert fit.converged


def test_separated_players_give_diagonal_pi(formation3):
    y = _no_swap_frames(formation3)
    fit = fit_shared_gmm(build_independent_dataset(y), init_shared(y))
    assert np.all(np.diag(fit.pi) > 0.95)
    assert np.allclose(fit.formation.means, formation3.means, atol=0.15)


def test_dict_round_trip_keeps_fit(formation3):
    y = _no_swap_frames(formation3, n=300)
    fit = fit_shared_gmm(build_independent_dataset(y), init_shared(y), max_iter=5)
    back = shared_from_dict(shared_to_dict(fit, seed=3))
    assert np.allclose(back.pi, fit.pi)
    assert np.allclose(back.formation.covariances, fit.formation.covariances)
    assert back.loglik_trace == fit.loglik_trace


def test_dimension_mismatch(formation3, rng):
    ds = build_independent_dataset(rng.normal(size=(20, 2, 2)))
    with pytest.raises(ContractViolationError):
        fit_shared_gmm(ds, SharedFit(formation3, initial_pi(3)))
