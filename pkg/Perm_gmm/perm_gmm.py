"""
perm_gmm.py
- Multi-regime Gaussian mixture with hidden permutations, fitted by EM
- a frame y is drawn as: regime r ~ v, permutation Q ~ w_r, roles X_k ~ N(mu_rk, sigma_rk), y = Q X
- every mixture sum runs in log-space (scipy logsumexp)
- support is one shared candidate list; each regime keeps its own weights over it,
  weights below the prune level drop out (the identity never does)
- posterior metrics: average permutation, regime / permutation posteriors, no-swap probability
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from Gauss_core.errors import (
    ConfigError,
    ContractViolationError,
    InsufficientDataError,
    NumericError,
    RegimeCollapseError,
)
from Gauss_core.gauss_core import (
    EPS_SIGMA,
    Formation,
    FrameInput,
    Permutation,
    as_frame_array,
    compose,
    formation_from_dict,
    formation_to_dict,
    identity,
    inverse,
    naive_formation,
    regularize_covariance,
    role_log_density_matrix,
    to_matrix,
)
from Perm_select.perm_select import CandidateSet
from Shared_gmm.shared_gmm import SharedFit

logger = logging.getLogger(__name__)

DEFAULT_MAX_ITER = 200
DEFAULT_TOL = 1e-7
DEFAULT_PRUNE = 1e-10
COLLAPSE_FRACTION = 1e-8
WEIGHT_TOL = 1e-10
# frames * support * players per E-step chunk
CHUNK_BUDGET = 4_000_000


class InitMode(str, Enum):
    FROM_POSSESSION = "from_possession"
    CHRONOLOGICAL_SPLIT = "chronological_split"
    IDENTITY_HALF = "identity_half"


# ---------- Types ----------
@dataclass(frozen=True, eq=False)
class PermDistribution:
    support: Tuple[Permutation, ...]
    weights: np.ndarray

    def __post_init__(self):
        support = tuple(self.support)
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(support) == 0 or len(support) != weights.shape[0]:
            raise ContractViolationError("support and weights must be non-empty and of equal length")
        if len(set(support)) != len(support):
            raise ContractViolationError("permutation support has duplicates")
        if identity(support[0].d) not in support:
            raise ContractViolationError("permutation support must contain the identity")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > WEIGHT_TOL:
            raise ContractViolationError("permutation weights must be non-negative and sum to 1",
                                         {"sum": float(weights.sum())})
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "weights", weights)

    def weight_of(self, q: Permutation) -> float:
        try:
            return float(self.weights[self.support.index(q)])
        except ValueError:
            return 0.0


@dataclass(frozen=True, eq=False)
class Regime:
    formation: Formation
    perm_dist: PermDistribution
    v: float


@dataclass(frozen=True, eq=False)
class RegimeModel:
    regimes: Tuple[Regime, ...]
    loglik_trace: List[float] = field(default_factory=list)
    n_frames_fit: int = 0
    n_iter: int = 0
    converged: bool = False
    underflow_frames: int = 0

    def __post_init__(self):
        regimes = tuple(self.regimes)
        if not regimes:
            raise ContractViolationError("a model needs at least one regime")
        d = regimes[0].formation.d
        if any(r.formation.d != d or r.perm_dist.support[0].d != d for r in regimes):
            raise ContractViolationError("all regimes must share the role count")
        if abs(sum(r.v for r in regimes) - 1.0) > WEIGHT_TOL:
            raise ContractViolationError("regime probabilities must sum to 1")
        object.__setattr__(self, "regimes", regimes)

    @property
    def d(self) -> int:
        return self.regimes[0].formation.d

    @property
    def n_regimes(self) -> int:
        return len(self.regimes)

    @property
    def v(self) -> np.ndarray:
        return np.array([r.v for r in self.regimes])


@dataclass(frozen=True, eq=False)
class FramePosterior:
    v: np.ndarray                 # (l,)
    w: List[np.ndarray]           # per regime, weights over that regime's support


@dataclass(frozen=True, eq=False)
class Posteriors:
    """E-step output for a stack of frames over the union support."""
    support: Tuple[Permutation, ...]
    v: np.ndarray          # (n, l)
    w: np.ndarray          # (n, l, S)
    frame_loglik: np.ndarray  # (n,), -inf where underflow
    included: np.ndarray   # (n,) bool

    @property
    def n_excluded(self) -> int:
        return int(np.count_nonzero(~self.included))

    @property
    def mean_loglik(self) -> float:
        if not np.any(self.included):
            return float("-inf")
        return float(self.frame_loglik[self.included].mean())


# ---------- Support helpers ----------
def union_support(model: RegimeModel) -> Tuple[Tuple[Permutation, ...], np.ndarray]:
    """Union of the regimes' supports (identity first) and the (l, S) weight matrix over it."""
    d = model.d
    support: List[Permutation] = [identity(d)]
    for r in model.regimes:
        for q in r.perm_dist.support:
            if q not in support:
                support.append(q)
    pos = {q: s for s, q in enumerate(support)}
    w = np.zeros((model.n_regimes, len(support)))
    for i, r in enumerate(model.regimes):
        for q, wq in zip(r.perm_dist.support, r.perm_dist.weights):
            w[i, pos[q]] = wq
    return tuple(support), w


def _support_maps(support: Sequence[Permutation]) -> np.ndarray:
    return np.stack([q.as_array() for q in support])


def _build_model(formations: Sequence[Formation], v: np.ndarray, support: Sequence[Permutation],
                 w: np.ndarray, **kw) -> RegimeModel:
    regimes = []
    ident = identity(formations[0].d)
    for f, vr, wr in zip(formations, v, w):
        keep = [s for s, q in enumerate(support) if wr[s] > 0 or q == ident]
        weights = wr[keep] / wr[keep].sum()
        regimes.append(Regime(f, PermDistribution(tuple(support[s] for s in keep), weights), float(vr)))
    return RegimeModel(tuple(regimes), **kw)


# ---------- Initialization ----------
def _weights_from_pi(pi: np.ndarray, support: Sequence[Permutation]) -> np.ndarray:
    raw = np.array([min(pi[l, k] for l, k in enumerate(q.map)) for q in support], dtype=float)
    if not raw.sum() > 0:
        logger.warning("All candidate minima are zero; falling back to uniform permutation weights")
        return np.full(len(support), 1.0 / len(support))
    return raw / raw.sum()


def identity_half_weights(support: Sequence[Permutation]) -> np.ndarray:
    ident = identity(support[0].d)
    if len(support) == 1:
        return np.ones(1)
    rest = 0.5 / (len(support) - 1)
    return np.array([0.5 if q == ident else rest for q in support])


def init_one_regime(shared: SharedFit, cands: CandidateSet) -> RegimeModel:
    """Formation from the shared fit; w_Q proportional to the smallest pi entry Q uses."""
    if len(cands.perms) == 0:
        raise ContractViolationError("candidate set is empty")
    weights = _weights_from_pi(shared.pi, cands.perms)
    return RegimeModel((Regime(shared.formation, PermDistribution(tuple(cands.perms), weights), 1.0),))


def _possession_codes(frames: FrameInput, possession: Optional[Sequence]) -> Optional[np.ndarray]:
    from Data_loader.data_loader import Possession
    if possession is None:
        if isinstance(frames, np.ndarray) or not len(frames) or not hasattr(frames[0], "possession"):
            return None
        possession = [f.possession for f in frames]
    return np.array([Possession.parse(p).code for p in possession])


def init_multi_regime(
    frames: FrameInput,
    cands: CandidateSet,
    l: int,
    mode: InitMode = InitMode.CHRONOLOGICAL_SPLIT,
    shared: Optional[SharedFit] = None,
    possession: Optional[Sequence] = None,
    team_side: str = "home",
    subset_max_iter: int = 50,
    eps: float = EPS_SIGMA,
) -> RegimeModel:
    """
    from_possession: regime formations come from one-regime fits on the in-possession,
      out-of-possession (and, for l = 3, unassigned) frames.
    chronological_split: per-player moments of each chronological l-th of the frames.
    identity_half: chronological formations with w_I = 1/2, the rest spread evenly.
    """
    mode = InitMode(mode)
    if l < 2:
        raise ConfigError(f"multi-regime initialization needs at least 2 regimes, got {l}")
    y = as_frame_array(frames)
    support = tuple(cands.perms)
    if mode is InitMode.IDENTITY_HALF or shared is None:
        base_w = identity_half_weights(support)
    else:
        base_w = _weights_from_pi(shared.pi, support)

    if mode is InitMode.FROM_POSSESSION:
        codes = _possession_codes(frames, possession)
        if codes is None:
            raise ConfigError("possession labels are required for from_possession initialization")
        if l > 3:
            raise ConfigError("from_possession initialization supports at most 3 regimes")
        own, other = (0, 1) if team_side == "home" else (1, 0)
        groups = [own, other, 2][:l]
        formations = []
        for g in groups:
            sub = y[codes == g]
            if sub.shape[0] < 2:
                raise InsufficientDataError(f"possession group {g} has {sub.shape[0]} frames", {"group": int(g)})
            seed_formation = naive_formation(sub, eps)
            one = RegimeModel((Regime(seed_formation, PermDistribution(support, base_w), 1.0),))
            formations.append(fit(sub, one, max_iter=subset_max_iter, eps=eps).regimes[0].formation)
    else:
        if y.shape[0] < 2 * l:
            raise InsufficientDataError(f"{y.shape[0]} frames cannot be split into {l} parts")
        formations = [naive_formation(part, eps) for part in np.array_split(y, l)]

    v = np.full(l, 1.0 / l)
    return _build_model(formations, v, support, np.tile(base_w, (l, 1)))


# ---------- E-step ----------
def _chunk_size(n: int, s: int, d: int) -> int:
    return max(1, min(n, CHUNK_BUDGET // max(1, s * d)))


def _log_perm_densities(y: np.ndarray, formation: Formation, maps: np.ndarray) -> np.ndarray:
    """G[i, s] = log g(Q_s^T y_i) = sum_l L[i, l, map_s[l]]."""
    lmat = role_log_density_matrix(y, formation.means, formation.covariances)
    d = maps.shape[1]
    return lmat[:, np.arange(d)[None, :], maps].sum(axis=2)


def _e_chunk(y: np.ndarray, model: RegimeModel, maps: np.ndarray, log_w: np.ndarray, log_v: np.ndarray):
    g = np.stack([_log_perm_densities(y, r.formation, maps) for r in model.regimes], axis=1)  # (n, l, S)
    joint_w = g + log_w[None, :, :]
    regime_ll = logsumexp(joint_w, axis=2)                                     # (n, l)
    with np.errstate(invalid="ignore"):
        w = np.exp(joint_w - regime_ll[:, :, None])
    joint_v = regime_ll + log_v[None, :]
    frame_ll = logsumexp(joint_v, axis=1)
    with np.errstate(invalid="ignore"):
        v = np.exp(joint_v - frame_ll[:, None])
    return v, w, frame_ll


def e_step(frames: FrameInput, model: RegimeModel, threads: int = 1) -> Posteriors:
    y = as_frame_array(frames)
    if y.shape[1] != model.d:
        raise ContractViolationError(f"frames have {y.shape[1]} players, model has {model.d} roles")
    support, w_mat = union_support(model)
    maps = _support_maps(support)
    with np.errstate(divide="ignore"):
        log_w = np.log(w_mat)
        log_v = np.log(model.v)

    n = y.shape[0]
    step = _chunk_size(n, len(support), model.d)
    chunks = [y[a:a + step] for a in range(0, n, step)]
    if threads == 1 or len(chunks) <= 1:
        parts = [_e_chunk(c, model, maps, log_w, log_v) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=threads or None) as pool:
            parts = list(pool.map(lambda c: _e_chunk(c, model, maps, log_w, log_v), chunks))

    v = np.concatenate([p[0] for p in parts]) if parts else np.zeros((0, model.n_regimes))
    w = np.concatenate([p[1] for p in parts]) if parts else np.zeros((0, model.n_regimes, len(support)))
    frame_ll = np.concatenate([p[2] for p in parts]) if parts else np.zeros(0)

    included = np.isfinite(frame_ll)
    if not np.all(included):
        logger.warning("E-step: %d frames underflowed under every component and are excluded",
                       int(np.count_nonzero(~included)))
    v[~included] = model.v
    w_fallback = np.broadcast_to(w_mat, w.shape)
    w[~included] = w_fallback[~included]
    w = np.where(np.isfinite(w), w, 0.0)
    return Posteriors(support=support, v=v, w=w, frame_loglik=frame_ll, included=included)


# ---------- M-step ----------
def _prune(w: np.ndarray, support: Sequence[Permutation], prune: float) -> np.ndarray:
    ident_pos = [s for s, q in enumerate(support) if q.is_identity()]
    mask = w < prune
    mask[:, ident_pos] = False
    if np.any(mask & (w > 0)):
        logger.debug("Pruning %d permutation weights below %g", int(np.count_nonzero(mask & (w > 0))), prune)
    w = np.where(mask, 0.0, w)
    return w / w.sum(axis=1, keepdims=True)


def m_step(frames: FrameInput, posteriors: Posteriors, prune: float = DEFAULT_PRUNE,
           eps: float = EPS_SIGMA) -> RegimeModel:
    """
    v_r      = mean_i v_ir
    w_rQ     = sum_i v_ir w_irQ / sum_i v_ir
    mu_rk    = sum_i sum_l P_irlk y_il / sum_i v_ir
    sigma_rk = sum_i sum_l P_irlk (y_il - mu_rk)(y_il - mu_rk)^T / sum_i v_ir
    with P_irlk = sum_Q v_ir w_irQ [Q maps player l to role k].
    """
    y = as_frame_array(frames)
    keep = posteriors.included
    y = y[keep]
    v = posteriors.v[keep]
    w = posteriors.w[keep]
    n, d = y.shape[0], y.shape[1]
    if n == 0:
        raise InsufficientDataError("no frames left for the M-step")

    mass = v.sum(axis=0)                                         # (l,)
    for r, m in enumerate(mass):
        if m < COLLAPSE_FRACTION * n:
            raise RegimeCollapseError(r, float(m), n)

    gamma = v[:, :, None] * w                                   # (n, l, S)
    maps = _support_maps(posteriors.support)
    onehot = np.zeros((maps.shape[0], d, d))
    onehot[np.arange(maps.shape[0])[:, None], np.arange(d)[None, :], maps] = 1.0
    resp = np.einsum("irs,slk->irlk", gamma, onehot)            # (n, l, d, d)

    mu = np.einsum("irlk,ilc->rkc", resp, y) / mass[:, None, None]
    diff = y[:, None, :, None, :] - mu[None, :, None, :, :]     # (n, l, d_players, d_roles, 2)
    sigma = np.einsum("irlk,irlkc,irlke->rkce", resp, diff, diff) / mass[:, None, None, None]
    sigma = regularize_covariance(sigma, eps)

    v_new = mass / n
    w_new = _prune(gamma.sum(axis=0) / mass[:, None], posteriors.support, prune)
    formations = [Formation.from_arrays(mu[r], sigma[r]) for r in range(v.shape[1])]
    return _build_model(formations, v_new / v_new.sum(), posteriors.support, w_new,
                        n_frames_fit=n, underflow_frames=posteriors.n_excluded)


# ---------- Fit ----------
def fit(
    frames: FrameInput,
    init: RegimeModel,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    prune: float = DEFAULT_PRUNE,
    eps: float = EPS_SIGMA,
    threads: int = 1,
) -> RegimeModel:
    """
    Alternates e_step / m_step. The trace starts with the mean log-likelihood of
    `init` and gains one entry per update; stops when |change| < tol or after max_iter updates.
    """
    y = as_frame_array(frames)
    if y.shape[0] < 1:
        raise InsufficientDataError("fit needs at least one frame")
    if max_iter < 1:
        raise ContractViolationError("max_iter must be >= 1")

    model = init
    post = e_step(y, model, threads)
    trace = [post.mean_loglik]
    if not np.isfinite(trace[0]):
        raise NumericError("initial model gives no finite likelihood on any frame")
    converged = False
    n_iter = 0
    for it in range(1, max_iter + 1):
        model = m_step(y, post, prune, eps)
        n_iter = it
        post = e_step(y, model, threads)
        trace.append(post.mean_loglik)
        logger.debug("EM iter %d: mean loglik %.10f, support sizes %s", it, trace[-1],
                     [len(r.perm_dist.support) for r in model.regimes])
        if abs(trace[-1] - trace[-2]) < tol:
            converged = True
            break

    logger.info("Permutation EM: %d regimes, %d iterations, converged=%s, mean loglik %.6f",
                model.n_regimes, n_iter, converged, trace[-1])
    return RegimeModel(model.regimes, loglik_trace=trace, n_frames_fit=int(y.shape[0]), n_iter=n_iter,
                       converged=converged, underflow_frames=post.n_excluded)


def log_likelihood(frames: FrameInput, model: RegimeModel) -> float:
    """Mean per-frame log-likelihood over frames with a finite likelihood."""
    return e_step(frames, model).mean_loglik


# ---------- Posterior metrics ----------
def avg_permutation(model: RegimeModel, r: int) -> np.ndarray:
    if not 0 <= r < model.n_regimes:
        raise ContractViolationError(f"regime {r} out of range for {model.n_regimes} regimes")
    pd_ = model.regimes[r].perm_dist
    return sum(wq * to_matrix(q) for q, wq in zip(pd_.support, pd_.weights))


def role_swap_rates(model: RegimeModel, r: int) -> np.ndarray:
    """Per role, the probability that its own player is not the one occupying it."""
    return 1.0 - np.diag(avg_permutation(model, r))


def frame_regime_prob(model: RegimeModel, y: np.ndarray) -> np.ndarray:
    return e_step(np.asarray(y, dtype=float)[None, :, :], model).v[0]


def frame_perm_prob(model: RegimeModel, y: np.ndarray, r: int) -> np.ndarray:
    """Posterior weights over regime r's own support, in its order."""
    post = e_step(np.asarray(y, dtype=float)[None, :, :], model)
    pos = {q: s for s, q in enumerate(post.support)}
    idx = [pos[q] for q in model.regimes[r].perm_dist.support]
    return post.w[0, r, idx]


def posterior_identity(post: Posteriors) -> np.ndarray:
    """(n, l) posterior probability of the identity permutation within each regime."""
    s = next(i for i, q in enumerate(post.support) if q.is_identity())
    return post.w[:, :, s]


def no_swap_probability(model: RegimeModel, frames: Optional[FrameInput] = None,
                        method: str = "posterior") -> float:
    """
    posterior: mean over frames of sum_r v_ir w_ir,I.
    parameter: sum_r v_r w_r,I.
    """
    if method == "parameter":
        ident = identity(model.d)
        return float(sum(r.v * r.perm_dist.weight_of(ident) for r in model.regimes))
    if method != "posterior":
        raise ConfigError(f"unknown no-swap method {method!r}")
    if frames is None:
        raise ContractViolationError("posterior no-swap probability needs frames")
    post = e_step(frames, model)
    per_frame = (post.v * posterior_identity(post)).sum(axis=1)
    return float(per_frame[post.included].mean())


def aggregate_no_swap(values: Sequence[float], frame_counts: Sequence[int]) -> float:
    values = np.asarray(values, dtype=float)
    counts = np.asarray(frame_counts, dtype=float)
    if values.shape != counts.shape or counts.sum() <= 0:
        raise ContractViolationError("need one positive frame count per value")
    return float((values * counts).sum() / counts.sum())


# ---------- Symmetries and ordering ----------
def relabel_roles(model: RegimeModel, p: Permutation) -> RegimeModel:
    """
    New role k is old role p.map[k]; a permutation Q becomes compose(Q, inverse(p))
    with the same weight, so every frame keeps its likelihood.
    """
    p_inv = inverse(p)
    ident = identity(model.d)
    regimes = []
    for r in model.regimes:
        support = tuple(compose(q, p_inv) for q in r.perm_dist.support)
        weights = r.perm_dist.weights
        if ident not in support:
            support, weights = support + (ident,), np.append(weights, 0.0)
        regimes.append(Regime(r.formation.relabel(p.map), PermDistribution(support, weights), r.v))
    return RegimeModel(tuple(regimes), list(model.loglik_trace), model.n_frames_fit, model.n_iter, model.converged)


def order_regimes_by_overlap(model: RegimeModel) -> RegimeModel:
    """Regimes sorted by formation overlap index, smallest first."""
    from Form_metrics.form_metrics import formation_overlap_index
    order = sorted(range(model.n_regimes), key=lambda r: formation_overlap_index(model.regimes[r].formation))
    return RegimeModel(tuple(model.regimes[r] for r in order), list(model.loglik_trace), model.n_frames_fit,
                       model.n_iter, model.converged, model.underflow_frames)


# ---------- Serialization ----------
def model_to_dict(model: RegimeModel, metadata: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    return {
        "regimes": [
            {
                "v": float(r.v),
                "roles": formation_to_dict(r.formation)["roles"],
                "support": [list(q.map) for q in r.perm_dist.support],
                "weights": [float(x) for x in r.perm_dist.weights],
            }
            for r in model.regimes
        ],
        "loglik_trace": [float(x) for x in model.loglik_trace],
        "n_frames_fit": int(model.n_frames_fit),
        "n_iter": int(model.n_iter),
        "converged": bool(model.converged),
        "metadata": metadata,
    }


def model_from_dict(doc: Dict[str, Any]) -> RegimeModel:
    regimes = tuple(
        Regime(
            formation_from_dict({"roles": r["roles"]}),
            PermDistribution(tuple(Permutation(tuple(m)) for m in r["support"]), np.asarray(r["weights"])),
            float(r["v"]),
        )
        for r in doc["regimes"]
    )
    return RegimeModel(regimes, list(doc.get("loglik_trace", [])), int(doc.get("n_frames_fit", 0)),
                       int(doc.get("n_iter", 0)), bool(doc.get("converged", False)))
