"""
perm_select.py
- Candidate permutations: every bijection whose entries in the shared-fit
  assignment matrix all clear p_thresh (depth-first search, identity forced in)
- Overlap bounds: a classifier separating observed flattened frames from their
  permuted copies; its error rate gives an upper confidence bound on the overlap
  between the frame distribution and its permuted version
- Two passes: plug-in QDA on all frames, then a Gaussian-mixture classifier
  trained on held-out frames for the survivors
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp
from scipy.stats import multivariate_normal, norm
from sklearn.mixture import GaussianMixture

from Gauss_core.errors import (
    CandidateExplosionError,
    ContractViolationError,
    InsufficientDataError,
    NumericError,
)
from Gauss_core.gauss_core import (
    EPS_SIGMA,
    FrameInput,
    Permutation,
    coordinate_index,
    flatten_frames,
    identity,
)
from Shared_gmm.shared_gmm import SharedFit

logger = logging.getLogger(__name__)

DEFAULT_P_THRESH = 0.025
DEFAULT_O_THRESH = 0.05
DEFAULT_ALPHA = 0.05
DEFAULT_GMM_COMPONENTS = 8
DEFAULT_MAX_CANDIDATES = 10_000
MIN_EVAL_FRAMES = 100


@dataclass(frozen=True)
class OverlapBound:
    error_rate: float
    n_eval: int
    alpha: float
    bound: float
    method: str = "qda"


@dataclass
class CandidateSet:
    perms: List[Permutation]
    provenance: List[Dict[str, Any]]
    discarded: List[Tuple[Permutation, Dict[str, Any]]] = field(default_factory=list)

    def __post_init__(self):
        if len(self.perms) != len(self.provenance):
            raise ContractViolationError("every candidate needs a provenance record")
        if not self.perms:
            raise ContractViolationError("candidate set is empty")
        d = self.perms[0].d
        if identity(d) not in self.perms:
            raise ContractViolationError("candidate set must contain the identity")
        if len(set(self.perms)) != len(self.perms):
            raise ContractViolationError("candidate set has duplicate permutations")

    @property
    def d(self) -> int:
        return self.perms[0].d

    def __len__(self) -> int:
        return len(self.perms)


@dataclass(frozen=True)
class SelectionConfig:
    p_thresh: float = DEFAULT_P_THRESH
    o_thresh: float = DEFAULT_O_THRESH
    alpha: float = DEFAULT_ALPHA
    k_components: int = DEFAULT_GMM_COMPONENTS
    seed: int = 0
    max_candidates: int = DEFAULT_MAX_CANDIDATES
    heldout_cap_factor: int = 4
    eps: float = EPS_SIGMA
    threads: int = 0


@dataclass(frozen=True, eq=False)
class QdaParams:
    mu1: np.ndarray
    sigma1: np.ndarray
    mu2: np.ndarray
    sigma2: np.ndarray


def normal_quantile(p: float) -> float:
    return float(norm.ppf(p))


def overlap_bound(error_rate: float, n_eval: int, alpha: float, method: str = "qda") -> OverlapBound:
    """bound = 2 * error_rate + z_(1 - alpha) / sqrt(2 n)."""
    bound = 2.0 * error_rate + normal_quantile(1.0 - alpha) / np.sqrt(2.0 * n_eval)
    return OverlapBound(error_rate=float(error_rate), n_eval=int(n_eval), alpha=float(alpha),
                        bound=float(bound), method=method)


# ---------- Candidates ----------
def candidates_from_pi(pi: np.ndarray, p_thresh: float = DEFAULT_P_THRESH,
                       max_candidates: int = DEFAULT_MAX_CANDIDATES) -> CandidateSet:
    pi = np.asarray(pi, dtype=float)
    d = pi.shape[0]
    if pi.shape != (d, d):
        raise ContractViolationError(f"pi must be square, got {pi.shape}")
    allowed = [np.flatnonzero(pi[l] >= p_thresh).tolist() for l in range(d)]

    found: List[Tuple[int, ...]] = []
    used = [False] * d
    current: List[int] = []

    def dfs(l: int) -> None:
        if l == d:
            found.append(tuple(current))
            if len(found) > max_candidates:
                raise CandidateExplosionError(
                    f"more than {max_candidates} candidate permutations at p_thresh={p_thresh}; raise the threshold",
                    {"p_thresh": p_thresh, "max_candidates": max_candidates},
                )
            return
        for k in allowed[l]:
            if used[k]:
                continue
            used[k] = True
            current.append(k)
            dfs(l + 1)
            current.pop()
            used[k] = False

    dfs(0)
    ident = tuple(range(d))
    maps = [ident] + [m for m in found if m != ident]
    perms = [Permutation(m) for m in maps]
    provenance = [{"min_pi_entry": float(min(pi[l, k] for l, k in enumerate(m)))} for m in maps]
    logger.info("Candidate search: %d permutations at p_thresh=%g", len(perms), p_thresh)
    return CandidateSet(perms=perms, provenance=provenance)


# ---------- Classifiers ----------
def _floor_spd(sigma: np.ndarray, eps: float) -> np.ndarray:
    sigma = 0.5 * (sigma + sigma.T)
    lam = float(np.linalg.eigvalsh(sigma)[0])
    if lam < eps:
        sigma = sigma + (eps - lam) * np.eye(sigma.shape[0])
    try:
        np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as e:
        raise NumericError("pooled covariance is singular after regularization") from e
    return sigma


def pooled_moments(frames_flat: np.ndarray, eps: float = EPS_SIGMA) -> Tuple[np.ndarray, np.ndarray]:
    mu = frames_flat.mean(axis=0)
    diff = frames_flat - mu
    return mu, _floor_spd(diff.T @ diff / frames_flat.shape[0], eps)


def qda_params(mu: np.ndarray, sigma: np.ndarray, q: Permutation, eps: float = EPS_SIGMA) -> QdaParams:
    """Class 2 is class 1 pushed through the coordinate-expanded permutation."""
    mu = np.asarray(mu, dtype=float)
    sigma = _floor_spd(np.asarray(sigma, dtype=float), eps)
    idx = coordinate_index(q)
    if mu.shape[0] != idx.shape[0]:
        raise ContractViolationError(f"mean has {mu.shape[0]} coordinates, permutation expects {idx.shape[0]}")
    return QdaParams(mu1=mu, sigma1=sigma, mu2=mu[idx], sigma2=sigma[np.ix_(idx, idx)])


def _error_rate(phi1: np.ndarray, phi2: np.ndarray) -> float:
    """phi >= 0 means class 1. phi1 scored on observed frames, phi2 on permuted copies."""
    n = phi1.shape[0]
    return float((np.count_nonzero(phi1 < 0) + np.count_nonzero(phi2 >= 0)) / (2.0 * n))


def _eval_subset(z: np.ndarray, split_seed: Optional[int], max_eval: Optional[int]) -> np.ndarray:
    if max_eval is None or z.shape[0] <= max_eval:
        return z
    rng = np.random.default_rng(split_seed)
    return z[np.sort(rng.choice(z.shape[0], size=max_eval, replace=False))]


def qda_error_rate(frames_flat: np.ndarray, q: Permutation, params: QdaParams, split_seed: Optional[int] = None,
                   alpha: float = DEFAULT_ALPHA, max_eval: Optional[int] = None) -> OverlapBound:
    z1 = _eval_subset(np.asarray(frames_flat, dtype=float), split_seed, max_eval)
    n = z1.shape[0]
    if n < MIN_EVAL_FRAMES:
        raise InsufficientDataError(f"overlap estimate needs at least {MIN_EVAL_FRAMES} frames, got {n}",
                                    {"n_eval": n})
    z2 = z1[:, coordinate_index(q)]
    g1 = multivariate_normal(params.mu1, params.sigma1)
    g2 = multivariate_normal(params.mu2, params.sigma2)
    phi1 = g1.logpdf(z1) - g2.logpdf(z1)
    phi2 = g1.logpdf(z2) - g2.logpdf(z2)
    return overlap_bound(_error_rate(np.atleast_1d(phi1), np.atleast_1d(phi2)), n, alpha, "qda")


def _mixture_logpdf(x: np.ndarray, weights: np.ndarray, means: np.ndarray, covs: np.ndarray) -> np.ndarray:
    comps = np.stack([
        np.log(w) + np.atleast_1d(multivariate_normal(m, c).logpdf(x))
        for w, m, c in zip(weights, means, covs)
    ], axis=1)
    return logsumexp(comps, axis=1)


def fit_frame_mixture(train_flat: np.ndarray, k_components: int = DEFAULT_GMM_COMPONENTS,
                      seed: int = 0, eps: float = EPS_SIGMA) -> GaussianMixture:
    train_flat = np.asarray(train_flat, dtype=float)
    k = max(1, min(int(k_components), train_flat.shape[0]))
    gm = GaussianMixture(n_components=k, covariance_type="full", reg_covar=eps, random_state=seed)
    gm.fit(train_flat)
    return gm


def mixture_error_rate(gm: GaussianMixture, eval_flat: np.ndarray, q: Permutation,
                       alpha: float = DEFAULT_ALPHA) -> OverlapBound:
    z1 = np.asarray(eval_flat, dtype=float)
    n = z1.shape[0]
    if n < MIN_EVAL_FRAMES:
        raise InsufficientDataError(f"overlap estimate needs at least {MIN_EVAL_FRAMES} frames, got {n}",
                                    {"n_eval": n})
    idx = coordinate_index(q)
    means2 = gm.means_[:, idx]
    covs2 = gm.covariances_[:, idx][:, :, idx]
    z2 = z1[:, idx]
    phi1 = (_mixture_logpdf(z1, gm.weights_, gm.means_, gm.covariances_)
            - _mixture_logpdf(z1, gm.weights_, means2, covs2))
    phi2 = (_mixture_logpdf(z2, gm.weights_, gm.means_, gm.covariances_)
            - _mixture_logpdf(z2, gm.weights_, means2, covs2))
    return overlap_bound(_error_rate(phi1, phi2), n, alpha, "gmm")


def gmm_bayes_error_rate(train_frames: FrameInput, eval_frames: FrameInput, q: Permutation,
                         k_components: int = DEFAULT_GMM_COMPONENTS, seed: int = 0,
                         alpha: float = DEFAULT_ALPHA,
                         train_index: Optional[Sequence[int]] = None,
                         eval_index: Optional[Sequence[int]] = None) -> OverlapBound:
    if train_index is not None and eval_index is not None:
        shared = set(int(i) for i in train_index) & set(int(i) for i in eval_index)
        if shared:
            raise ContractViolationError("mixture training frames overlap the evaluation frames",
                                         {"n_shared": len(shared)})
    gm = fit_frame_mixture(flatten_frames(train_frames), k_components, seed)
    return mixture_error_rate(gm, flatten_frames(eval_frames), q, alpha)


# ---------- Selection ----------
def _pool_map(fn, items: List, threads: int) -> List:
    if threads == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads or None) as pool:
        return list(pool.map(fn, items))


def _training_frames(frames: np.ndarray, heldout: Optional[np.ndarray], cap_factor: int, n_eval: int,
                     seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Returns (train, eval). Without held-out frames, even positions train and odd positions evaluate."""
    if heldout is None or heldout.shape[0] == 0:
        return frames[0::2], frames[1::2]
    cap = cap_factor * n_eval
    if heldout.shape[0] > cap:
        rng = np.random.default_rng(seed)
        heldout = heldout[np.sort(rng.choice(heldout.shape[0], size=cap, replace=False))]
    return heldout, frames


def select_permutations(frames: FrameInput, shared: SharedFit, cfg: Optional[SelectionConfig] = None,
                        heldout: Optional[FrameInput] = None) -> CandidateSet:
    cfg = cfg or SelectionConfig()
    cands = candidates_from_pi(shared.pi, cfg.p_thresh, cfg.max_candidates)
    ident = identity(cands.d)
    others = [i for i, p in enumerate(cands.perms) if p != ident]
    if not others:
        return cands

    flat = flatten_frames(frames)
    mu, sigma = pooled_moments(flat, cfg.eps)

    def qda_job(i: int) -> OverlapBound:
        q = cands.perms[i]
        return qda_error_rate(flat, q, qda_params(mu, sigma, q, cfg.eps), cfg.seed, cfg.alpha)

    provenance = [dict(p) for p in cands.provenance]
    discarded: List[Tuple[Permutation, Dict[str, Any]]] = []
    survivors: List[int] = []
    for i, b in zip(others, _pool_map(qda_job, others, cfg.threads)):
        provenance[i]["qda"] = b
        if b.bound < cfg.o_thresh:
            discarded.append((cands.perms[i], provenance[i]))
        else:
            survivors.append(i)
    logger.info("QDA pass: %d of %d non-identity candidates kept", len(survivors), len(others))

    if survivors:
        held = flatten_frames(heldout) if heldout is not None and len(heldout) else None
        train, evaluation = _training_frames(flat, held, cfg.heldout_cap_factor, flat.shape[0], cfg.seed)
        gm = fit_frame_mixture(train, cfg.k_components, cfg.seed, cfg.eps)

        def gmm_job(i: int) -> OverlapBound:
            return mixture_error_rate(gm, evaluation, cands.perms[i], cfg.alpha)

        kept: List[int] = []
        for i, b in zip(survivors, _pool_map(gmm_job, survivors, cfg.threads)):
            provenance[i]["gmm"] = b
            if b.bound < cfg.o_thresh:
                discarded.append((cands.perms[i], provenance[i]))
            else:
                kept.append(i)
        logger.info("Mixture pass: %d of %d candidates kept", len(kept), len(survivors))
        survivors = kept

    keep = [0] + survivors
    return CandidateSet(
        perms=[cands.perms[i] for i in keep],
        provenance=[provenance[i] for i in keep],
        discarded=discarded,
    )


# ---------- Serialization ----------
def _record(p: Permutation, prov: Dict[str, Any]) -> Dict[str, Any]:
    doc: Dict[str, Any] = {"map": list(p.map), "min_pi_entry": float(prov.get("min_pi_entry", 0.0))}
    for key in ("qda", "gmm"):
        b = prov.get(key)
        if b is not None:
            doc[key] = {"error_rate": b.error_rate, "n_eval": b.n_eval, "alpha": b.alpha,
                        "bound": b.bound, "method": b.method}
    return doc


def candidates_to_dict(cs: CandidateSet, config: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    return {
        "perms": [_record(p, prov) for p, prov in zip(cs.perms, cs.provenance)],
        "discarded": [_record(p, prov) for p, prov in cs.discarded],
        "config": dict(config or {}),
    }


def _provenance(rec: Dict[str, Any]) -> Dict[str, Any]:
    prov: Dict[str, Any] = {"min_pi_entry": float(rec.get("min_pi_entry", 0.0))}
    for key in ("qda", "gmm"):
        if rec.get(key):
            prov[key] = OverlapBound(**rec[key])
    return prov


def candidates_from_dict(doc: Dict[str, Any]) -> CandidateSet:
    return CandidateSet(
        perms=[Permutation(tuple(r["map"])) for r in doc["perms"]],
        provenance=[_provenance(r) for r in doc["perms"]],
        discarded=[(Permutation(tuple(r["map"])), _provenance(r)) for r in doc.get("discarded", [])],
    )
