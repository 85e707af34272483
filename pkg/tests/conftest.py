import os

import numpy as np
import pandas as pd
import pytest

from Gauss_core.gauss_core import Formation, all_permutations, identity, transposition
from Perm_gmm.perm_gmm import PermDistribution, Regime, RegimeModel


def three_role_formation(scale: float = 1.0) -> Formation:
    means = np.array([[-2.0, 0.0], [0.0, 1.5], [2.0, -0.5]]) * scale
    covs = np.stack([
        np.array([[0.30, 0.05], [0.05, 0.20]]),
        np.array([[0.25, -0.04], [-0.04, 0.35]]),
        np.array([[0.20, 0.00], [0.00, 0.30]]),
    ])
    return Formation.from_arrays(means, covs)


def write_match_csv(path: str, d: int = 3, lineups=(("L1", 400),), dt: float = 1.0, seed: int = 0,
                    degenerate_rows=(), incomplete_rows=()) -> str:
    """Synthetic tracking file: players around fixed spots, possession alternating every 50 rows."""
    rng = np.random.default_rng(seed)
    spots = np.stack([np.linspace(-30, 30, d), np.tile([-10.0, 10.0], d)[:d]], axis=1)
    rows = []
    i = 0
    for lineup, n in lineups:
        for _ in range(n):
            pos = spots + rng.normal(scale=2.0, size=(d, 2))
            if i in degenerate_rows:
                pos[:, 0] = 5.0
            row = {"t": round(i * dt, 6)}
            for k in range(d):
                row[f"player{k + 1}_x"] = pos[k, 0]
                row[f"player{k + 1}_y"] = pos[k, 1]
            if i in incomplete_rows:
                row["player1_x"] = ""
            row["possession"] = "H" if (i // 50) % 2 == 0 else "A"
            row["lineup"] = lineup
            rows.append(row)
            i += 1
    pd.DataFrame(rows).to_csv(path, index=False)
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def formation3():
    return three_role_formation()


@pytest.fixture
def swap_model3(formation3):
    """One regime, three roles, the identity plus two transpositions."""
    support = (identity(3), transposition(3, 0, 1), transposition(3, 1, 2))
    return RegimeModel((Regime(formation3, PermDistribution(support, np.array([0.7, 0.2, 0.1])), 1.0),))


@pytest.fixture
def full_model3(rng):
    """Two regimes over all six permutations of three roles with random weights."""
    perms = tuple(all_permutations(3))
    regimes = []
    for r, v in enumerate((0.4, 0.6)):
        means = rng.normal(scale=2.0, size=(3, 2))
        a = rng.normal(size=(3, 2, 2))
        covs = np.einsum("kab,kcb->kac", a, a) + 0.3 * np.eye(2)
        w = rng.dirichlet(np.ones(len(perms)))
        regimes.append(Regime(Formation.from_arrays(means, covs), PermDistribution(perms, w), v))
    return RegimeModel(tuple(regimes))


@pytest.fixture
def match_csv(tmp_path):
    return write_match_csv(os.path.join(tmp_path, "match.csv"))
