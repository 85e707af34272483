"""
gauss_core.py
- Dense 2D Gaussian and permutation primitives shared by every estimator
- Permutation: index array, map[l] = k means player l occupies role k
- RoleGaussian / Formation: per-role 2D mean + SPD covariance
- closed-form 2x2 algebra (cofactor inverse, determinant, eigenvalue floor)
"""
import itertools
import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np

from Gauss_core.errors import ContractViolationError, NumericError

logger = logging.getLogger(__name__)

EPS_SIGMA = 1e-6
LOG_2PI = float(np.log(2.0 * np.pi))


# ---------- Permutations ----------
@dataclass(frozen=True)
class Permutation:
    map: Tuple[int, ...]

    def __post_init__(self):
        m = tuple(int(k) for k in self.map)
        if sorted(m) != list(range(len(m))):
            raise ContractViolationError(f"not a bijection on 0..{len(m) - 1}: {m}")
        object.__setattr__(self, "map", m)

    @property
    def d(self) -> int:
        return len(self.map)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.map, dtype=np.intp)

    def is_identity(self) -> bool:
        return all(k == l for l, k in enumerate(self.map))

    def __repr__(self) -> str:
        return f"Permutation({list(self.map)})"


def identity(d: int) -> Permutation:
    return Permutation(tuple(range(d)))


def inverse(q: Permutation) -> Permutation:
    inv = [0] * q.d
    for l, k in enumerate(q.map):
        inv[k] = l
    return Permutation(tuple(inv))


def compose(a: Permutation, b: Permutation) -> Permutation:
    """
    Permutation whose matrix is the product A @ B.
    Player l goes to role a.map[l] and that index is then mapped by b.
    """
    if a.d != b.d:
        raise ContractViolationError(f"cannot compose permutations of sizes {a.d} and {b.d}")
    return Permutation(tuple(b.map[a.map[l]] for l in range(a.d)))


def transposition(d: int, i: int, j: int) -> Permutation:
    m = list(range(d))
    m[i], m[j] = m[j], m[i]
    return Permutation(tuple(m))


def all_permutations(d: int) -> List[Permutation]:
    return [Permutation(p) for p in itertools.permutations(range(d))]


def to_matrix(q: Permutation) -> np.ndarray:
    m = np.zeros((q.d, q.d))
    m[np.arange(q.d), q.as_array()] = 1.0
    return m


def permutation_from_matrix(m: np.ndarray) -> Permutation:
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ContractViolationError(f"permutation matrix must be square, got shape {m.shape}")
    if not np.all((m == 0) | (m == 1)) or not np.all(m.sum(axis=0) == 1) or not np.all(m.sum(axis=1) == 1):
        raise ContractViolationError("matrix is not a permutation matrix")
    return Permutation(tuple(int(k) for k in np.argmax(m, axis=1)))


def apply_permutation(q: Permutation, y: np.ndarray) -> np.ndarray:
    """Computes Q^T y: row k of the result is the row of the player occupying role k.

    Works on a single frame (d, 2) or a stack of frames (n, d, 2).
    """
    y = np.asarray(y, dtype=float)
    inv = inverse(q).as_array()
    return y[..., inv, :]


def permute_players(q: Permutation, x: np.ndarray) -> np.ndarray:
    """Computes Q x (row l of the result is row q.map[l] of x); Y = Pi X in the generative model."""
    x = np.asarray(x, dtype=float)
    return x[..., q.as_array(), :]


def expand_to_coordinates(q: Permutation) -> np.ndarray:
    """Block-doubled 2d x 2d permutation matrix acting on flattened (x1, y1, x2, y2, ...) frames."""
    d = q.d
    big = np.zeros((2 * d, 2 * d))
    for k, l in enumerate(q.map):
        big[2 * k, 2 * l] = 1.0
        big[2 * k + 1, 2 * l + 1] = 1.0
    return big


def coordinate_index(q: Permutation) -> np.ndarray:
    """Index array equivalent of expand_to_coordinates: (Q~ z) == z[coordinate_index(q)]."""
    m = q.as_array()
    return np.stack([2 * m, 2 * m + 1], axis=1).ravel()


# ---------- Covariance helpers ----------
def min_eigenvalue_2x2(sigma: np.ndarray) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=float)
    a = sigma[..., 0, 0]
    b = 0.5 * (sigma[..., 0, 1] + sigma[..., 1, 0])
    c = sigma[..., 1, 1]
    return 0.5 * (a + c) - np.sqrt(0.25 * (a - c) ** 2 + b ** 2)


def regularize_covariance(sigma: np.ndarray, eps: float = EPS_SIGMA) -> np.ndarray:
    """Symmetrize and lift the smallest eigenvalue to eps when it falls below it.

    Accepts a single (2, 2) matrix or a stack (..., 2, 2).
    """
    sigma = np.array(sigma, dtype=float)
    sigma = 0.5 * (sigma + np.swapaxes(sigma, -1, -2))
    lam = min_eigenvalue_2x2(sigma)
    lift = np.where(lam < eps, eps - lam, 0.0)
    sigma[..., 0, 0] += lift
    sigma[..., 1, 1] += lift
    return sigma


def det_2x2(sigma: np.ndarray) -> np.ndarray:
    return sigma[..., 0, 0] * sigma[..., 1, 1] - sigma[..., 0, 1] * sigma[..., 1, 0]


def inv_2x2(sigma: np.ndarray) -> np.ndarray:
    det = det_2x2(sigma)
    if np.any(det <= 0) or not np.all(np.isfinite(det)):
        raise NumericError("covariance is not positive definite", {"det": np.atleast_1d(det).tolist()})
    inv = np.empty_like(sigma, dtype=float)
    inv[..., 0, 0] = sigma[..., 1, 1]
    inv[..., 1, 1] = sigma[..., 0, 0]
    inv[..., 0, 1] = -sigma[..., 0, 1]
    inv[..., 1, 0] = -sigma[..., 1, 0]
    return inv / det[..., None, None]


# ---------- Roles and formations ----------
@dataclass(frozen=True, eq=False)
class RoleGaussian:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).reshape(2)
        sigma = np.asarray(self.sigma, dtype=float).reshape(2, 2)
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
            raise NumericError("role parameters must be finite")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", regularize_covariance(sigma))


@dataclass(frozen=True, eq=False)
class Formation:
    roles: Tuple[RoleGaussian, ...]

    def __post_init__(self):
        roles = tuple(self.roles)
        if len(roles) == 0:
            raise ContractViolationError("a formation needs at least one role")
        object.__setattr__(self, "roles", roles)

    @property
    def d(self) -> int:
        return len(self.roles)

    @property
    def means(self) -> np.ndarray:
        return np.stack([r.mu for r in self.roles])

    @property
    def covariances(self) -> np.ndarray:
        return np.stack([r.sigma for r in self.roles])

    @classmethod
    def from_arrays(cls, mu: np.ndarray, sigma: np.ndarray) -> "Formation":
        mu = np.asarray(mu, dtype=float)
        sigma = np.asarray(sigma, dtype=float)
        if mu.ndim != 2 or mu.shape[1] != 2 or sigma.shape != (mu.shape[0], 2, 2):
            raise ContractViolationError(f"bad formation arrays: mu {mu.shape}, sigma {sigma.shape}")
        return cls(tuple(RoleGaussian(m, s) for m, s in zip(mu, sigma)))

    def relabel(self, order: Sequence[int]) -> "Formation":
        """New formation whose role k is this formation's role order[k]."""
        return Formation(tuple(self.roles[int(k)] for k in order))


def formation_to_dict(f: Formation) -> Dict:
    return {
        "roles": [
            {"mu": [float(v) for v in r.mu], "sigma": [[float(v) for v in row] for row in r.sigma]}
            for r in f.roles
        ]
    }


def formation_from_dict(doc: Dict) -> Formation:
    roles = doc.get("roles")
    if not roles:
        raise ContractViolationError("formation document has no roles")
    return Formation(tuple(RoleGaussian(r["mu"], r["sigma"]) for r in roles))


# ---------- Densities ----------
def logpdf_2d(points: np.ndarray, mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Bivariate normal log-density of points (..., 2) under one (mu, sigma)."""
    points = np.asarray(points, dtype=float)
    det = float(det_2x2(np.asarray(sigma, dtype=float)))
    if not det > 0:
        raise NumericError("covariance is not positive definite", {"det": det})
    a, b, c = sigma[0, 0], 0.5 * (sigma[0, 1] + sigma[1, 0]), sigma[1, 1]
    dx = points[..., 0] - mu[0]
    dy = points[..., 1] - mu[1]
    quad = (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det
    return -LOG_2PI - 0.5 * np.log(det) - 0.5 * quad


def gaussian_logpdf(x: np.ndarray, g: RoleGaussian) -> float:
    return float(logpdf_2d(np.asarray(x, dtype=float), g.mu, g.sigma))


def frame_log_density(y: np.ndarray, f: Formation) -> float:
    y = np.asarray(y, dtype=float)
    if y.shape != (f.d, 2):
        raise ContractViolationError(f"frame shape {y.shape} does not match formation with {f.d} roles")
    return float(sum(gaussian_logpdf(y[k], role) for k, role in enumerate(f.roles)))


def role_log_density_matrix(frames: np.ndarray, means: np.ndarray, covariances: np.ndarray) -> np.ndarray:
    """
    L[i, l, k] = log N(frames[i, l]; means[k], covariances[k]).
    frames: (n, d, 2); means: (d, 2); covariances: (d, 2, 2). Returns (n, d, d).
    """
    frames = np.asarray(frames, dtype=float)
    means = np.asarray(means, dtype=float)
    covariances = np.asarray(covariances, dtype=float)
    det = det_2x2(covariances)
    if np.any(~(det > 0)):
        raise NumericError("covariance is not positive definite", {"det": det.tolist()})
    inv = inv_2x2(covariances)
    diff = frames[:, :, None, :] - means[None, None, :, :]
    quad = np.einsum("ilkc,kce,ilke->ilk", diff, inv, diff)
    return -LOG_2PI - 0.5 * np.log(det)[None, None, :] - 0.5 * quad


# ---------- Frame arrays ----------
FrameInput = Union[np.ndarray, Sequence]


def as_frame_array(frames: FrameInput) -> np.ndarray:
    """Accepts an (n, d, 2) array or a sequence of objects with a `.y` (d, 2) attribute."""
    if isinstance(frames, np.ndarray):
        arr = frames.astype(float, copy=False)
    else:
        frames = list(frames)
        if not frames:
            return np.zeros((0, 0, 2))
        if hasattr(frames[0], "y"):
            arr = np.stack([np.asarray(f.y, dtype=float) for f in frames])
        else:
            arr = np.asarray(frames, dtype=float)
    if arr.ndim == 2 and arr.shape[-1] == 2:
        arr = arr[None, :, :]
    if arr.ndim != 3 or arr.shape[-1] != 2:
        raise ContractViolationError(f"frames must have shape (n, d, 2), got {arr.shape}")
    return arr


def empirical_moments(points: np.ndarray, eps: float = EPS_SIGMA) -> Tuple[np.ndarray, np.ndarray]:
    """MLE mean and (floored) covariance of an (m, 2) point cloud."""
    points = np.asarray(points, dtype=float)
    mu = points.mean(axis=0)
    diff = points - mu
    sigma = diff.T @ diff / points.shape[0]
    return mu, regularize_covariance(sigma, eps)


def naive_formation(frames: FrameInput, eps: float = EPS_SIGMA) -> Formation:
    """Per-player empirical mean and covariance, role k := player k."""
    arr = as_frame_array(frames)
    if arr.shape[0] == 0:
        raise ContractViolationError("naive formation needs at least one frame")
    moments = [empirical_moments(arr[:, k, :], eps) for k in range(arr.shape[1])]
    return Formation(tuple(RoleGaussian(mu, sigma) for mu, sigma in moments))


def flatten_frames(frames: FrameInput) -> np.ndarray:
    """(n, d, 2) -> (n, 2d) with coordinates ordered x1, y1, x2, y2, ..."""
    arr = as_frame_array(frames)
    return arr.reshape(arr.shape[0], -1)


def iter_permutation_maps(perms: Iterable[Permutation]) -> np.ndarray:
    return np.stack([p.as_array() for p in perms])
