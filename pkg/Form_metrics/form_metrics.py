"""
form_metrics.py
- Bhattacharyya coefficient between role Gaussians and the formation overlap index
- closed-form 2D Gaussian W2 and the mixture-Wasserstein distance between formations
  (uniform role weights, so the optimal coupling is a role matching)
- sliced embedding of role means and K-means clustering of formations
- substitution report and per-team time share per cluster (pandas tables)
"""
import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
from sklearn.cluster import KMeans

from Assignment.hungarian import hungarian
from Gauss_core.errors import ContractViolationError, InsufficientDataError
from Gauss_core.gauss_core import EPS_SIGMA, Formation, RoleGaussian, det_2x2, inv_2x2, regularize_covariance

logger = logging.getLogger(__name__)

DEFAULT_DIRECTIONS = 12
DEFAULT_K = 5
DEFAULT_RESTARTS = 10


# ---------- Overlap ----------
def bhattacharyya_gaussian(g1: RoleGaussian, g2: RoleGaussian) -> float:
    sigma_bar = regularize_covariance(0.5 * (g1.sigma + g2.sigma), EPS_SIGMA)
    diff = g1.mu - g2.mu
    maha = float(diff @ inv_2x2(sigma_bar) @ diff)
    log_det_ratio = float(np.log(det_2x2(sigma_bar))
                          - 0.5 * (np.log(det_2x2(g1.sigma)) + np.log(det_2x2(g2.sigma))))
    db = maha / 8.0 + 0.5 * log_det_ratio
    return float(np.exp(-max(db, 0.0)))


def formation_overlap_index(f: Formation) -> float:
    """Mean Bhattacharyya coefficient over unordered role pairs; 0 for a single role."""
    pairs = list(itertools.combinations(range(f.d), 2))
    if not pairs:
        return 0.0
    return float(np.mean([bhattacharyya_gaussian(f.roles[a], f.roles[b]) for a, b in pairs]))


# ---------- Wasserstein ----------
def w2_squared(g1: RoleGaussian, g2: RoleGaussian) -> float:
    """|dmu|^2 + tr S1 + tr S2 - 2 tr sqrt(S2^1/2 S1 S2^1/2), the last trace in 2x2 closed form."""
    mean_term = float(np.sum((g1.mu - g2.mu) ** 2))
    tr_prod = float(np.trace(g1.sigma @ g2.sigma))
    det_prod = float(det_2x2(g1.sigma) * det_2x2(g2.sigma))
    tr_sqrt = np.sqrt(max(tr_prod + 2.0 * np.sqrt(max(det_prod, 0.0)), 0.0))
    cov_term = float(np.trace(g1.sigma) + np.trace(g2.sigma) - 2.0 * tr_sqrt)
    return max(mean_term + cov_term, 0.0)


def w2_gaussian(g1: RoleGaussian, g2: RoleGaussian) -> float:
    return float(np.sqrt(w2_squared(g1, g2)))


def w2_cost_matrix(f1: Formation, f2: Formation) -> np.ndarray:
    return np.array([[w2_squared(a, b) for b in f2.roles] for a in f1.roles])


def mixture_wasserstein(f1: Formation, f2: Formation) -> float:
    if f1.d != f2.d:
        raise ContractViolationError(f"formations have {f1.d} and {f2.d} roles")
    cost = w2_cost_matrix(f1, f2)
    match = hungarian(cost, tie_break=False)
    return float(np.sqrt(max(cost[np.arange(f1.d), match.as_array()].sum(), 0.0)))


def formation_distance_matrix(formations: Sequence[Formation], threads: int = 1) -> np.ndarray:
    n = len(formations)
    pairs = [(a, b) for a in range(n) for b in range(a + 1, n)]

    def job(ab):
        return mixture_wasserstein(formations[ab[0]], formations[ab[1]])

    if threads == 1 or len(pairs) <= 1:
        values = [job(p) for p in pairs]
    else:
        with ThreadPoolExecutor(max_workers=threads or None) as pool:
            values = list(pool.map(job, pairs))
    out = np.zeros((n, n))
    for (a, b), v in zip(pairs, values):
        out[a, b] = out[b, a] = v
    return out


# ---------- Embedding ----------
@dataclass(frozen=True, eq=False)
class EmbeddingVector:
    matrix: np.ndarray  # (d, m), column j sorted ascending

    @property
    def v(self) -> np.ndarray:
        return self.matrix.reshape(-1, order="F")

    @property
    def d(self) -> int:
        return int(self.matrix.shape[0])

    @property
    def m(self) -> int:
        return int(self.matrix.shape[1])


def projection_directions(m: int = DEFAULT_DIRECTIONS) -> np.ndarray:
    theta = np.arange(m) * np.pi / m
    return np.stack([np.cos(theta), np.sin(theta)], axis=1)


def sliced_embedding(f: Formation, m: int = DEFAULT_DIRECTIONS) -> EmbeddingVector:
    if m < 1:
        raise ContractViolationError("need at least one projection direction")
    proj = f.means @ projection_directions(m).T
    return EmbeddingVector(np.sort(proj, axis=0))


def embedding_distance(e1: EmbeddingVector, e2: EmbeddingVector) -> float:
    """||E1 - E2|| / sqrt(d m): root mean squared sorted-projection gap."""
    if e1.matrix.shape != e2.matrix.shape:
        raise ContractViolationError("embeddings differ in shape")
    return float(np.linalg.norm(e1.v - e2.v) / np.sqrt(e1.d * e1.m))


# ---------- Clustering ----------
@dataclass(frozen=True, eq=False)
class ClusterResult:
    labels: np.ndarray
    centroids: np.ndarray
    representatives: List[int]
    inertia: float

    @property
    def k(self) -> int:
        return int(self.centroids.shape[0])


def _as_matrix(embeddings) -> np.ndarray:
    rows = [e.v if isinstance(e, EmbeddingVector) else np.asarray(e, dtype=float).reshape(-1) for e in embeddings]
    return np.stack(rows) if rows else np.zeros((0, 0))


def kmeans(embeddings, k: int = DEFAULT_K, restarts: int = DEFAULT_RESTARTS, seed: int = 0,
           max_iter: int = 300) -> ClusterResult:
    """Lloyd's algorithm, k-means++ seeding, best inertia over `restarts` runs."""
    x = _as_matrix(embeddings)
    if x.shape[0] < k:
        raise InsufficientDataError(f"need at least {k} formations to form {k} clusters, got {x.shape[0]}",
                                    {"n": int(x.shape[0]), "k": k})
    km = KMeans(n_clusters=k, init="k-means++", n_init=restarts, random_state=seed,
                max_iter=max_iter, algorithm="lloyd")
    labels = km.fit_predict(x)
    centroids = km.cluster_centers_
    reps = []
    for c in range(k):
        members = np.flatnonzero(labels == c)
        if members.size == 0:
            # fewer distinct formations than clusters
            logger.warning("K-means cluster %d is empty; representative is the formation nearest its centroid", c)
            members = np.arange(x.shape[0])
        dist = np.linalg.norm(x[members] - centroids[c], axis=1)
        reps.append(int(members[np.argmin(dist)]))
    logger.info("K-means: %d formations into %d clusters, inertia %.6g", x.shape[0], k, km.inertia_)
    return ClusterResult(labels=labels.astype(int), centroids=centroids, representatives=reps,
                         inertia=float(km.inertia_))


# ---------- Tables ----------
def substitution_distance_report(formations: Sequence[Formation], boundaries: Optional[Sequence[float]] = None,
                                 segment_ids: Optional[Sequence] = None) -> pd.DataFrame:
    """One row per consecutive segment pair; `boundaries[i]` is the time segment i+1 starts."""
    if len(formations) < 2:
        raise InsufficientDataError("substitution report needs at least 2 segments")
    ids = list(segment_ids) if segment_ids is not None else list(range(len(formations)))
    rows = []
    last = len(formations) - 2
    for i in range(len(formations) - 1):
        tags = [t for t, hit in (("first", i == 0), ("last", i == last)) if hit]
        rows.append({
            "segment_before": ids[i],
            "segment_after": ids[i + 1],
            "boundary_t": float(boundaries[i]) if boundaries is not None else np.nan,
            "distance": mixture_wasserstein(formations[i], formations[i + 1]),
            "substitution": ";".join(tags),
        })
    return pd.DataFrame(rows)


def cluster_time_share(labels: Sequence[int], teams: Sequence[str], durations: Sequence[float]) -> pd.DataFrame:
    """Percentage of each team's time spent in each cluster (rows team, columns cluster)."""
    df = pd.DataFrame({"team": list(teams), "cluster": list(labels), "duration": list(durations)})
    if df.empty:
        return pd.DataFrame()
    table = df.pivot_table(index="team", columns="cluster", values="duration", aggfunc="sum", fill_value=0.0)
    share = table.div(table.sum(axis=1), axis=0) * 100.0
    share.columns = [f"cluster_{c}" for c in share.columns]
    return share.reset_index()
