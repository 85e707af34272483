"""
dashboard_generator.py
- Plot-ready tables (pandas DataFrames written as CSV); rendering is left to the caller
- formation ellipses, regime posterior timeline, average permutation heat-map table
"""
from typing import Dict

import numpy as np
import pandas as pd

from Gauss_core.gauss_core import Formation
from Perm_gmm.perm_gmm import RegimeModel, avg_permutation


# ---------- Helper ----------
def _ellipse(sigma: np.ndarray, n_std: float) -> Dict[str, float]:
    """Axis lengths and orientation of the n_std contour of a 2x2 covariance."""
    vals, vecs = np.linalg.eigh(sigma)
    major = vecs[:, 1]
    return {
        "width": float(2.0 * n_std * np.sqrt(max(vals[1], 0.0))),
        "height": float(2.0 * n_std * np.sqrt(max(vals[0], 0.0))),
        "angle_deg": float(np.degrees(np.arctan2(major[1], major[0]))),
    }


# ---------- Tables ----------
def formation_ellipses(formation: Formation, n_std: float = 1.0) -> pd.DataFrame:
    rows = []
    for k, role in enumerate(formation.roles):
        rows.append({"role": k, "mu_x": float(role.mu[0]), "mu_y": float(role.mu[1]), **_ellipse(role.sigma, n_std)})
    return pd.DataFrame(rows, columns=["role", "mu_x", "mu_y", "width", "height", "angle_deg"])


def regime_timeline(posteriors: pd.DataFrame) -> pd.DataFrame:
    """Wide posteriors table (t, v_0, v_1, ...) -> long (t, regime, probability)."""
    v_cols = [c for c in posteriors.columns if c.startswith("v_")]
    if "t" not in posteriors.columns or not v_cols:
        return pd.DataFrame(columns=["t", "regime", "probability"])
    long = posteriors.melt(id_vars=["t"], value_vars=v_cols, var_name="regime", value_name="probability")
    long["regime"] = long["regime"].str[2:].astype(int)
    return long.sort_values(["t", "regime"], kind="stable").reset_index(drop=True)


def avg_permutation_table(model: RegimeModel, r: int) -> pd.DataFrame:
    mat = avg_permutation(model, r)
    players, roles = np.meshgrid(np.arange(mat.shape[0]), np.arange(mat.shape[1]), indexing="ij")
    return pd.DataFrame({"player": players.ravel(), "role": roles.ravel(), "probability": mat.ravel()})
