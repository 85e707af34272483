"""
hungarian.py
- optimal player -> role assignment (scipy linear_sum_assignment) with
  deterministic tie-breaking (lexicographically smallest map among optima)
- hard-assignment baseline: per frame, give each player the role that
  maximizes total log-density, then refit role moments from the assigned points
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from Gauss_core.errors import ContractViolationError, InsufficientDataError
from Gauss_core.gauss_core import (
    EPS_SIGMA,
    Formation,
    FrameInput,
    Permutation,
    as_frame_array,
    naive_formation,
    regularize_covariance,
    role_log_density_matrix,
)

logger = logging.getLogger(__name__)

DEFAULT_MAX_ITER = 100
DEFAULT_TOL = 1e-7
TIE_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class CostMatrix:
    c: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ContractViolationError(f"cost matrix must be square, got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ContractViolationError("cost matrix has non-finite entries")
        object.__setattr__(self, "c", c)

    def total(self, q: Permutation) -> float:
        return float(self.c[np.arange(self.c.shape[0]), q.as_array()].sum())


def _optimum(c: np.ndarray) -> float:
    rows, cols = linear_sum_assignment(c)
    return float(c[rows, cols].sum())


def hungarian(c, tie_break: bool = True) -> Permutation:
    """
    Minimum-cost perfect matching; map[l] is the column given to row l.
    With tie_break, rows are fixed in order to the smallest column that keeps the optimum.
    """
    cost = c if isinstance(c, CostMatrix) else CostMatrix(c)
    m = cost.c
    d = m.shape[0]
    rows, cols = linear_sum_assignment(m)
    if not tie_break or d <= 1:
        return Permutation(tuple(int(k) for k in cols))

    best = float(m[rows, cols].sum())
    tol = TIE_RTOL * max(1.0, abs(best))
    free_rows = list(range(d))
    free_cols = list(range(d))
    fixed = [0] * d
    spent = 0.0
    for l in range(d):
        free_rows.remove(l)
        for k in sorted(free_cols):
            rest_cols = [j for j in free_cols if j != k]
            rest = _optimum(m[np.ix_(free_rows, rest_cols)]) if free_rows else 0.0
            if spent + m[l, k] + rest <= best + tol:
                fixed[l] = k
                spent += m[l, k]
                free_cols.remove(k)
                break
    return Permutation(tuple(fixed))


# ---------- Hard-assignment baseline ----------
def _assign_frames(lmat: np.ndarray) -> np.ndarray:
    """(n, d, d) log-densities -> (n, d) role of each player."""
    out = np.empty(lmat.shape[:2], dtype=np.intp)
    for i in range(lmat.shape[0]):
        _, cols = linear_sum_assignment(-lmat[i])
        out[i] = cols
    return out


def fit_hard_assignment(
    frames: FrameInput,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    eps: float = EPS_SIGMA,
    trace: Optional[List[float]] = None,
    threads: int = 1,
) -> Formation:
    """
    Starts from per-player empirical moments. Each iteration assigns every frame,
    records the mean assigned log-likelihood into `trace` (when given) and refits.
    """
    y = as_frame_array(frames)
    n, d = y.shape[0], y.shape[1]
    if n < 1:
        raise InsufficientDataError("hard assignment needs at least one frame")
    formation = naive_formation(y, eps)
    objective: List[float] = [] if trace is None else trace

    for it in range(1, max_iter + 1):
        lmat = role_log_density_matrix(y, formation.means, formation.covariances)
        if threads == 1 or n < 2:
            roles = _assign_frames(lmat)
        else:
            chunks = np.array_split(lmat, min(n, 64))
            with ThreadPoolExecutor(max_workers=threads or None) as pool:
                roles = np.concatenate(list(pool.map(_assign_frames, chunks)))

        picked = np.take_along_axis(lmat, roles[:, :, None], axis=2)[:, :, 0]
        objective.append(float(picked.sum(axis=1).mean()))

        # role k collects every point assigned to it, exactly one per frame
        by_role = np.empty((d, n, 2))
        by_role[roles.T, np.arange(n)[None, :].repeat(d, 0)] = y.transpose(1, 0, 2)
        mu = by_role.mean(axis=1)
        diff = by_role - mu[:, None, :]
        sigma = np.einsum("kic,kie->kce", diff, diff) / n
        formation = Formation.from_arrays(mu, regularize_covariance(sigma, eps))

        logger.debug("Hard assignment iter %d: mean assigned loglik %.10f", it, objective[-1])
        if len(objective) > 1 and abs(objective[-1] - objective[-2]) < tol:
            break

    logger.info("Hard assignment finished after %d iterations", len(objective))
    return formation
