"""
sim_lab.py
- samples frames from a known RegimeModel, keeping the latent regime and permutation per frame
- two-role robustness experiment: MSE of role means for the permutation model,
  the shared-component GMM and the hard-assignment baseline over a grid of separations
"""
import logging
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Sequence, Union

import numpy as np
import pandas as pd

from Assignment.hungarian import fit_hard_assignment, hungarian
from Data_loader.data_loader import NormalizedFrame, Possession
from Gauss_core.errors import ContractViolationError
from Gauss_core.gauss_core import Formation, identity, transposition
from Perm_gmm.perm_gmm import PermDistribution, Regime, RegimeModel, fit, init_one_regime
from Perm_select.perm_select import CandidateSet
from Shared_gmm.shared_gmm import build_independent_dataset, fit_shared_gmm, init_shared

logger = logging.getLogger(__name__)

METHODS = ("permutation", "shared", "hard")


def stage_seed(master: int, *path: Union[int, str]) -> int:
    """Derives a 63-bit seed for one stage/job from the master seed via numpy SeedSequence."""
    words = [int(master) & 0xFFFFFFFFFFFFFFFF]
    for p in path:
        words.append(zlib.crc32(p.encode()) if isinstance(p, str) else int(p))
    return int(np.random.SeedSequence(words).generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


@dataclass(frozen=True, eq=False)
class GeneratorSpec:
    model: RegimeModel
    n: int
    seed: int = 0


@dataclass(frozen=True, eq=False)
class SimulatedData:
    frames: List[NormalizedFrame]
    y: np.ndarray          # (n, d, 2)
    regimes: np.ndarray    # (n,)
    perm_maps: np.ndarray  # (n, d), map of the permutation drawn for each frame
    roles: np.ndarray      # (n, d, 2), X before permutation

    def __len__(self) -> int:
        return len(self.frames)


def simulate(spec: GeneratorSpec) -> SimulatedData:
    model, n = spec.model, int(spec.n)
    rng = np.random.default_rng(spec.seed)
    d = model.d
    regimes = rng.choice(model.n_regimes, size=n, p=model.v)
    maps = np.empty((n, d), dtype=np.intp)
    x = np.empty((n, d, 2))
    for r, reg in enumerate(model.regimes):
        idx = np.flatnonzero(regimes == r)
        if idx.size == 0:
            continue
        pdist = reg.perm_dist
        picks = rng.choice(len(pdist.support), size=idx.size, p=pdist.weights)
        support_maps = np.stack([q.as_array() for q in pdist.support])
        maps[idx] = support_maps[picks]
        chol = np.linalg.cholesky(reg.formation.covariances)              # (d, 2, 2)
        noise = rng.standard_normal((idx.size, d, 2))
        x[idx] = reg.formation.means[None] + np.einsum("kce,ike->ikc", chol, noise)

    # y = Q x: player l occupies role map[l]
    y = np.take_along_axis(x, maps[:, :, None], axis=1)
    frames = [
        NormalizedFrame(y=y[i], frame_mean=np.zeros(2), frame_std=np.ones(2), timestamp=float(i),
                        frame_index=i, segment_id=0, possession=Possession.UNASSIGNED)
        for i in range(n)
    ]
    return SimulatedData(frames=frames, y=y, regimes=regimes, perm_maps=maps, roles=x)


def two_role_model(delta: float, p: float = 0.2) -> RegimeModel:
    """Roles at (delta, 0) and (-delta, 0) with unit covariance; the players swap with probability p."""
    formation = Formation.from_arrays(np.array([[delta, 0.0], [-delta, 0.0]]), np.stack([np.eye(2)] * 2))
    dist = PermDistribution((identity(2), transposition(2, 0, 1)), np.array([1.0 - p, p]))
    return RegimeModel((Regime(formation, dist, 1.0),))


def mse_with_matching(mu_hat: np.ndarray, mu_true: np.ndarray) -> float:
    """Mean over roles of the squared error, after matching estimated roles to true ones."""
    mu_hat = np.asarray(mu_hat, dtype=float)
    mu_true = np.asarray(mu_true, dtype=float)
    cost = ((mu_hat[:, None, :] - mu_true[None, :, :]) ** 2).sum(axis=2)
    match = hungarian(cost, tie_break=False)
    return float(cost[np.arange(cost.shape[0]), match.as_array()].mean())


def _one_rep(delta: float, p: float, n: int, seed: int, max_iter: int, tol: float) -> Dict[str, float]:
    truth = two_role_model(delta, p)
    data = simulate(GeneratorSpec(truth, n, seed))
    mu_true = truth.regimes[0].formation.means

    shared = fit_shared_gmm(build_independent_dataset(data.y, seed), init_shared(data.y), max_iter, tol)
    full = [identity(2), transposition(2, 0, 1)]
    cands = CandidateSet(perms=full, provenance=[{"min_pi_entry": 0.0} for _ in full])
    perm_model = fit(data.y, init_one_regime(shared, cands), max_iter, tol)
    hard = fit_hard_assignment(data.y, max_iter, tol)

    return {
        "permutation": mse_with_matching(perm_model.regimes[0].formation.means, mu_true),
        "shared": mse_with_matching(shared.formation.means, mu_true),
        "hard": mse_with_matching(hard.means, mu_true),
    }


def two_role_experiment(
    delta_grid: Sequence[float],
    p: float = 0.2,
    n: int = 5000,
    reps: int = 100,
    seed: int = 0,
    threads: int = 1,
    max_iter: int = 200,
    tol: float = 1e-7,
) -> pd.DataFrame:
    """Columns: delta, method, mse_mean, mse_std (one row per delta and method)."""
    deltas = [float(x) for x in delta_grid]
    if not deltas:
        raise ContractViolationError("delta_grid is empty")
    jobs = [(di, delta, rep, stage_seed(seed, "two_role", di, rep))
            for di, delta in enumerate(deltas) for rep in range(reps)]

    def run(job):
        _, delta, _, s = job
        return _one_rep(delta, p, n, s, max_iter, tol)

    if threads == 1:
        results = [run(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads or None) as pool:
            results = list(pool.map(run, jobs))

    rows = []
    for di, delta in enumerate(deltas):
        mine = [res for (dj, _, _, _), res in zip(jobs, results) if dj == di]
        for method in METHODS:
            vals = np.array([m[method] for m in mine])
            rows.append({"delta": delta, "method": method, "mse_mean": float(vals.mean()),
                         "mse_std": float(vals.std(ddof=1)) if vals.size > 1 else 0.0})
        logger.info("delta=%.3f: %s", delta, {r["method"]: round(r["mse_mean"], 5) for r in rows[-3:]})
    return pd.DataFrame(rows, columns=["delta", "method", "mse_mean", "mse_std"])
