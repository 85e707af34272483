"""
shared_gmm.py
- Builds the decorrelated dataset: each constructed frame takes player l's
  position from a distinct original frame, every player drawn equally often
- Fits the tied-component mixture: one mixture per player row, all rows
  sharing the d role Gaussians, row l weighted by pi[l, :]
- Output (SharedFit) seeds the permutation model and the candidate search
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from scipy.special import logsumexp

from Gauss_core.errors import ContractViolationError, InsufficientDataError
from Gauss_core.gauss_core import (
    EPS_SIGMA,
    Formation,
    FrameInput,
    as_frame_array,
    formation_from_dict,
    formation_to_dict,
    naive_formation,
    regularize_covariance,
    role_log_density_matrix,
)

logger = logging.getLogger(__name__)

DEFAULT_MAX_ITER = 200
DEFAULT_TOL = 1e-7
PI_ROW_TOL = 1e-8
EMPTY_COMPONENT_MASS = 1e-10


@dataclass(frozen=True, eq=False)
class IndependentDataset:
    z: np.ndarray             # (m, d, 2)
    source_index: np.ndarray  # (m, d), original frame index feeding z[j, l]

    @property
    def m(self) -> int:
        return int(self.z.shape[0])

    @property
    def d(self) -> int:
        return int(self.z.shape[1])


@dataclass(frozen=True, eq=False)
class SharedFit:
    formation: Formation
    pi: np.ndarray
    loglik_trace: List[float] = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=float)
        d = self.formation.d
        if pi.shape != (d, d):
            raise ContractViolationError(f"pi must be {d}x{d}, got {pi.shape}")
        if np.any(pi < 0) or np.any(np.abs(pi.sum(axis=1) - 1.0) > PI_ROW_TOL):
            raise ContractViolationError("pi rows must be probability vectors")
        object.__setattr__(self, "pi", pi)


# ---------- Dataset ----------
def build_independent_dataset(frames: FrameInput, seed: int = 0) -> IndependentDataset:
    """
    Uses the first d*floor(n/d) frames. Their indices are split by a seeded
    uniform random partition into d equal groups; group l supplies player l.
    """
    y = as_frame_array(frames)
    n, d = y.shape[0], y.shape[1]
    if d == 0 or n < d:
        raise InsufficientDataError(f"need at least {d} frames to build the independent dataset, got {n}",
                                    {"n_frames": n, "d": d})
    m = n // d
    rng = np.random.default_rng(seed)
    groups = rng.permutation(m * d).reshape(d, m)
    source = groups.T.copy()
    z = y[source, np.arange(d)[None, :], :]
    if n > m * d:
        logger.debug("Independent dataset: %d trailing frames unused", n - m * d)
    return IndependentDataset(z=z, source_index=source)


# ---------- Initialization ----------
def initial_pi(d: int, diagonal: float = 0.5) -> np.ndarray:
    if d == 1:
        return np.ones((1, 1))
    pi = np.full((d, d), (1.0 - diagonal) / (d - 1))
    np.fill_diagonal(pi, diagonal)
    return pi


def init_shared(frames: FrameInput, eps: float = EPS_SIGMA) -> SharedFit:
    """Component k at player k's empirical moments; pi[l, l] = 0.5, rest spread evenly (0.05 at d = 11)."""
    formation = naive_formation(frames, eps)
    return SharedFit(formation=formation, pi=initial_pi(formation.d))


# ---------- EM ----------
def _log_joint(z: np.ndarray, mu: np.ndarray, sigma: np.ndarray, pi: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        log_pi = np.log(pi)
    return role_log_density_matrix(z, mu, sigma) + log_pi[None, :, :]


def shared_log_likelihood(ds: IndependentDataset, fit: SharedFit) -> float:
    """Mean over constructed frames of sum_l log sum_k pi[l,k] N(z_jl; mu_k, sigma_k)."""
    lj = _log_joint(ds.z, fit.formation.means, fit.formation.covariances, fit.pi)
    return float(logsumexp(lj, axis=2).sum(axis=1).mean())


def _m_step(z: np.ndarray, resp: np.ndarray, point_ll: np.ndarray, eps: float):
    m, d = resp.shape[0], resp.shape[1]
    mass = resp.sum(axis=(0, 1))
    pts = z.reshape(-1, 2)
    r = resp.reshape(-1, d)

    mu = np.zeros((d, 2))
    sigma = np.zeros((d, 2, 2))
    pooled = None
    for k in range(d):
        if mass[k] <= EMPTY_COMPONENT_MASS * m:
            if pooled is None:
                centered = pts - pts.mean(axis=0)
                pooled = regularize_covariance(centered.T @ centered / pts.shape[0], eps)
            worst = int(np.argmin(point_ll.reshape(-1)))
            logger.warning("Shared GMM: component %d lost all responsibility, reseeding at point %d", k, worst)
            mu[k] = pts[worst]
            sigma[k] = pooled
            continue
        mu[k] = r[:, k] @ pts / mass[k]
        diff = pts - mu[k]
        sigma[k] = (r[:, k, None] * diff).T @ diff / mass[k]

    pi = resp.sum(axis=0) / m
    pi = pi / pi.sum(axis=1, keepdims=True)
    return mu, regularize_covariance(sigma, eps), pi


def fit_shared_gmm(
    ds: IndependentDataset,
    init: SharedFit,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    eps: float = EPS_SIGMA,
) -> SharedFit:
    """
    EM for the tied-component mixture.
    Trace holds the mean log-likelihood before the first update and after each one;
    stops when |change| < tol or after max_iter updates.
    """
    if init.formation.d != ds.d:
        raise ContractViolationError(f"init has {init.formation.d} roles but dataset has {ds.d} players")
    if max_iter < 1:
        raise ContractViolationError("max_iter must be >= 1")

    mu = init.formation.means
    sigma = init.formation.covariances
    pi = init.pi.copy()

    lj = _log_joint(ds.z, mu, sigma, pi)
    point_ll = logsumexp(lj, axis=2)
    trace = [float(point_ll.sum(axis=1).mean())]
    converged = False
    n_iter = 0

    for it in range(1, max_iter + 1):
        resp = np.exp(lj - point_ll[:, :, None])
        mu, sigma, pi = _m_step(ds.z, resp, point_ll, eps)
        n_iter = it

        lj = _log_joint(ds.z, mu, sigma, pi)
        point_ll = logsumexp(lj, axis=2)
        trace.append(float(point_ll.sum(axis=1).mean()))
        logger.debug("Shared GMM iter %d: mean loglik %.10f", it, trace[-1])
        if abs(trace[-1] - trace[-2]) < tol:
            converged = True
            break

    logger.info("Shared GMM finished after %d iterations (converged=%s, mean loglik %.6f)", n_iter, converged, trace[-1])
    return SharedFit(
        formation=Formation.from_arrays(mu, sigma),
        pi=pi,
        loglik_trace=trace,
        n_iter=n_iter,
        converged=converged,
    )


# ---------- Serialization ----------
def shared_to_dict(fit: SharedFit, seed: Optional[int] = None) -> Dict:
    return {
        "formation": formation_to_dict(fit.formation),
        "pi": [[float(v) for v in row] for row in fit.pi],
        "loglik_trace": [float(v) for v in fit.loglik_trace],
        "n_iter": int(fit.n_iter),
        "converged": bool(fit.converged),
        "seed": seed,
    }


def shared_from_dict(doc: Dict) -> SharedFit:
    return SharedFit(
        formation=formation_from_dict(doc["formation"]),
        pi=np.asarray(doc["pi"], dtype=float),
        loglik_trace=list(doc.get("loglik_trace", [])),
        n_iter=int(doc.get("n_iter", 0)),
        converged=bool(doc.get("converged", False)),
    )
