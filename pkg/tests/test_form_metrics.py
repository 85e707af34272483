import numpy as np
import pytest
from scipy.integrate import dblquad
from scipy.linalg import sqrtm
from scipy.stats import multivariate_normal

from Gauss_core.errors import ContractViolationError, InsufficientDataError
from Gauss_core.gauss_core import Formation, RoleGaussian
from Form_metrics.form_metrics import (
    bhattacharyya_gaussian,
    cluster_time_share,
    embedding_distance,
    formation_distance_matrix,
    formation_overlap_index,
    kmeans,
    mixture_wasserstein,
    projection_directions,
    sliced_embedding,
    substitution_distance_report,
    w2_gaussian,
    w2_squared,
)


def _random_spd(rng):
    a = rng.normal(size=(2, 2))
    return a @ a.T + 0.1 * np.eye(2)


def test_w2_translation_only():
    a = RoleGaussian([0.0, 0.0], np.eye(2))
    b = RoleGaussian([3.0, 4.0], np.eye(2))
    assert w2_gaussian(a, b) == pytest.approx(5.0)


def test_w2_scaled_covariance():
    a = RoleGaussian([0.0, 0.0], np.eye(2))
    b = RoleGaussian([0.0, 0.0], 4.0 * np.eye(2))
    assert w2_gaussian(a, b) == pytest.approx(np.sqrt(2.0))


def test_w2_matches_matrix_square_root(rng):
    for _ in range(5):
        s1, s2 = _random_spd(rng), _random_spd(rng)
        a = RoleGaussian(rng.normal(size=2), s1)
        b = RoleGaussian(rng.normal(size=2), s2)
        root = sqrtm(s2)
        cross = np.real(sqrtm(root @ s1 @ root))
        expected = np.sum((a.mu - b.mu) ** 2) + np.trace(s1) + np.trace(s2) - 2.0 * np.trace(cross)
        assert w2_squared(a, b) == pytest.approx(expected, rel=1e-8, abs=1e-10)


def test_bhattacharyya_closed_form():
    a = RoleGaussian([0.0, 0.0], np.eye(2))
    b = RoleGaussian([2.0, 0.0], np.eye(2))
    assert bhattacharyya_gaussian(a, b) == pytest.approx(np.exp(-0.5))
    assert bhattacharyya_gaussian(a, a) == pytest.approx(1.0)


def test_overlap_index_edges(formation3):
    single = Formation((formation3.roles[0],))
    assert formation_overlap_index(single) == 0.0
    same = Formation((formation3.roles[0],) * 3)
    assert formation_overlap_index(same) == pytest.approx(1.0)
    assert 0.0 < formation_overlap_index(formation3) < 1.0


def test_mixture_wasserstein_ignores_role_order(formation3):
    assert mixture_wasserstein(formation3, formation3.relabel([2, 0, 1])) == pytest.approx(0.0, abs=1e-6)
    shifted = Formation.from_arrays(formation3.means + [1.0, 0.0], formation3.covariances)
    assert mixture_wasserstein(formation3, shifted) == pytest.approx(np.sqrt(3.0), rel=1e-6)
    with pytest.raises(ContractViolationError):
        mixture_wasserstein(formation3, Formation(formation3.roles[:2]))


def test_distance_matrix_symmetric(formation3):
    shifted = Formation.from_arrays(formation3.means + 0.5, formation3.covariances)
    wide = Formation.from_arrays(formation3.means * 1.5, formation3.covariances)
    forms = [formation3, shifted, wide]
    one = formation_distance_matrix(forms, threads=1)
    many = formation_distance_matrix(forms, threads=3)
    assert np.allclose(one, one.T)
    assert np.allclose(np.diag(one), 0.0)
    assert np.allclose(one, many)


def test_embedding_shape_and_order(formation3):
    e = sliced_embedding(formation3, m=4)
    assert e.matrix.shape == (3, 4)
    assert e.v.shape == (12,)
    assert np.all(np.diff(e.matrix, axis=0) >= 0)
    assert np.allclose(e.v[:3], np.sort(formation3.means[:, 0]))
    assert np.allclose(projection_directions(2), [[1.0, 0.0], [0.0, 1.0]], atol=1e-12)


def test_embedding_distance(formation3):
    e = sliced_embedding(formation3)
    assert embedding_distance(e, sliced_embedding(formation3.relabel([1, 2, 0]))) == pytest.approx(0.0)
    with pytest.raises(ContractViolationError):
        embedding_distance(e, sliced_embedding(formation3, m=3))


def _family(base, offsets, rng):
    out = []
    for off in offsets:
        for _ in range(4):
            means = base.means + off + rng.normal(scale=0.05, size=base.means.shape)
            out.append(Formation.from_arrays(means, base.covariances))
    return out


def test_kmeans_separates_families(formation3, rng):
    forms = _family(formation3, [0.0, 5.0, -5.0], rng)
    result = kmeans([sliced_embedding(f) for f in forms], k=3, restarts=5, seed=0)
    assert result.k == 3
    labels = result.labels
    for g in range(3):
        assert len(set(labels[4 * g:4 * g + 4])) == 1
    assert len(set(labels)) == 3
    for c, rep in enumerate(result.representatives):
        assert labels[rep] == c


def test_kmeans_is_seeded(formation3, rng):
    forms = _family(formation3, [0.0, 1.0], rng)
    emb = [sliced_embedding(f) for f in forms]
    a = kmeans(emb, k=2, seed=7)
    b = kmeans(emb, k=2, seed=7)
    assert np.array_equal(a.labels, b.labels)
    with pytest.raises(InsufficientDataError):
        kmeans(emb, k=20)


def test_substitution_report_tags(formation3):
    forms = [formation3, formation3.relabel([1, 0, 2]),
             Formation.from_arrays(formation3.means + 1.0, formation3.covariances)]
    table = substitution_distance_report(forms, boundaries=[300.0, 900.0], segment_ids=[0, 1, 2])
    assert table["substitution"].tolist() == ["first", "last"]
    assert table["distance"].iloc[0] == pytest.approx(0.0, abs=1e-6)
    assert table["boundary_t"].tolist() == [300.0, 900.0]
    two = substitution_distance_report(forms[:2])
    assert two["substitution"].tolist() == ["first;last"]
    with pytest.raises(InsufficientDataError):
        substitution_distance_report(forms[:1])


def test_cluster_time_share_rows_sum_to_100():
    table = cluster_time_share([0, 1, 1, 0], ["home", "home", "away", "away"], [30.0, 10.0, 5.0, 15.0])
    share = table.set_index("team")
    assert share.loc["home", "cluster_0"] == pytest.approx(75.0)
    assert share.loc["away", "cluster_1"] == pytest.approx(25.0)
    assert np.allclose(share.sum(axis=1), 100.0)


@pytest.mark.filterwarnings("ignore::sklearn.exceptions.ConvergenceWarning")
def test_kmeans_duplicate_formations_keep_representatives():
    emb = [np.zeros(4)] * 4 + [np.ones(4)]
    result = kmeans(emb, k=3, restarts=2, seed=0)
    assert result.k == 3
    assert len(result.representatives) == 3
    assert all(0 <= r < 5 for r in result.representatives)
    assert set(result.labels) <= {0, 1, 2}


def _sliced_w2_monte_carlo(f1, f2, rng, n_dirs=10_000):
    theta = rng.uniform(0.0, np.pi, size=n_dirs)
    dirs = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    p1 = np.sort(f1.means @ dirs.T, axis=0)
    p2 = np.sort(f2.means @ dirs.T, axis=0)
    return float(np.sqrt(np.mean((p1 - p2) ** 2)))


def test_embedding_distance_matches_monte_carlo_sliced_w2(rng):
    cov = np.stack([np.eye(2)] * 11)
    for _ in range(10):
        means = rng.uniform(-30.0, 30.0, size=(11, 2))
        moved = means + rng.normal(scale=2.0, size=2) + rng.normal(scale=0.2, size=(11, 2))
        f1, f2 = Formation.from_arrays(means, cov), Formation.from_arrays(moved, cov)
        exact = embedding_distance(sliced_embedding(f1), sliced_embedding(f2))
        assert exact == pytest.approx(_sliced_w2_monte_carlo(f1, f2, rng), rel=0.05)


@pytest.mark.slow
def test_bhattacharyya_matches_quadrature(rng):
    for _ in range(10):
        g = []
        for _ in range(2):
            a = rng.normal(size=(2, 2))
            g.append(RoleGaussian(rng.normal(scale=1.5, size=2), a @ a.T + 0.5 * np.eye(2)))
        d1, d2 = multivariate_normal(g[0].mu, g[0].sigma), multivariate_normal(g[1].mu, g[1].sigma)
        spread = 10.0 * np.sqrt(max(np.linalg.eigvalsh(g[0].sigma)[-1], np.linalg.eigvalsh(g[1].sigma)[-1]))
        lo = np.minimum(g[0].mu, g[1].mu) - spread
        hi = np.maximum(g[0].mu, g[1].mu) + spread
        area, _ = dblquad(lambda y, x: np.sqrt(d1.pdf([x, y]) * d2.pdf([x, y])),
                          lo[0], hi[0], lo[1], hi[1], epsabs=1e-10, epsrel=1e-10)
        assert bhattacharyya_gaussian(g[0], g[1]) == pytest.approx(area, abs=1e-6)
