"""
insight_engine.py
-----------------
Turns a fitted regime model into a report:
- regime weights, average permutation and role swap rates per regime
- no-swap probability (posterior and parameter readings)
- Pearson correlation of regime posteriors with possession indicators
- Bhattacharyya overlap comparison between a one-regime and a two-regime fit
- human-readable lines for `formlab report`
"""

from typing import Any, Dict, List, Optional, Sequence
import math

import numpy as np
import pandas as pd

from Data_loader.data_loader import Possession
from Form_metrics.form_metrics import formation_overlap_index
from Gauss_core.gauss_core import FrameInput, identity
from Perm_gmm.perm_gmm import (
    RegimeModel,
    avg_permutation,
    e_step,
    no_swap_probability,
    posterior_identity,
    role_swap_rates,
)


# ---------------------------------------------------
# Helper Functions
# ---------------------------------------------------

def _clean(x: float) -> Optional[float]:
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else float(x)


def possession_indicators(possession: Sequence, team_side: str = "home") -> pd.DataFrame:
    """One 0/1 column per possession state, named from the team's point of view."""
    codes = np.array([Possession.parse(p).code for p in possession])
    own, other = (0, 1) if team_side == "home" else (1, 0)
    return pd.DataFrame({
        "in_possession": (codes == own).astype(float),
        "out_of_possession": (codes == other).astype(float),
        "unassigned": (codes == 2).astype(float),
    })


def possession_correlation(v: np.ndarray, possession: Sequence, team_side: str = "home") -> pd.DataFrame:
    """Pearson correlation of each regime's posterior against each possession indicator."""
    v = np.asarray(v, dtype=float)
    ind = possession_indicators(possession, team_side)
    rows = []
    for r in range(v.shape[1]):
        col = pd.Series(v[:, r])
        row = {"regime": r}
        for name in ind.columns:
            row[name] = col.corr(ind[name]) if col.std() > 0 and ind[name].std() > 0 else float("nan")
        rows.append(row)
    return pd.DataFrame(rows, columns=["regime"] + list(ind.columns))


def bhattacharyya_comparison(one: RegimeModel, two: RegimeModel) -> Dict[str, Any]:
    """BC of the one-regime formation against both two-regime formations, ordered so bc_two[0] <= bc_two[1]."""
    bc1 = formation_overlap_index(one.regimes[0].formation)
    bc2 = sorted(formation_overlap_index(r.formation) for r in two.regimes)
    return {"bc_one": bc1, "bc_two": bc2, "differences": [b - bc1 for b in bc2]}


# ---------------------------------------------------
# Main Report Generator
# ---------------------------------------------------

def build_report(
    model: RegimeModel,
    frames: Optional[FrameInput] = None,
    possession: Optional[Sequence] = None,
    compare_model: Optional[RegimeModel] = None,
    team_side: str = "home",
) -> Dict[str, Any]:
    """Without frames only the parameter readings are filled; posterior fields stay None."""
    post = e_step(frames, model) if frames is not None else None
    ident_post = posterior_identity(post) if post is not None else None

    regimes = []
    for r, reg in enumerate(model.regimes):
        posterior_mean = None
        if post is not None and np.any(post.included):
            posterior_mean = float(ident_post[post.included, r].mean())
        regimes.append({
            "regime": r,
            "v": float(reg.v),
            "overlap_index": formation_overlap_index(reg.formation),
            "support_size": len(reg.perm_dist.support),
            "w_identity": reg.perm_dist.weight_of(identity(model.d)),
            "posterior_identity_mean": posterior_mean,
            "avg_permutation": avg_permutation(model, r).tolist(),
            "role_swap_rates": role_swap_rates(model, r).tolist(),
        })

    report: Dict[str, Any] = {
        "regimes": regimes,
        "no_swap_probability": None,
        "no_swap_parameter": no_swap_probability(model, method="parameter"),
        "n_frames": None,
        "underflow_frames": None,
        "possession_correlation": None,
        "bhattacharyya": None,
    }

    if post is not None:
        report["no_swap_probability"] = no_swap_probability(model, frames, "posterior")
        report["n_frames"] = int(post.v.shape[0])
        report["underflow_frames"] = post.n_excluded
        if possession is not None and len(possession) == post.v.shape[0]:
            table = possession_correlation(post.v, possession, team_side)
            report["possession_correlation"] = [
                {k: (int(v) if k == "regime" else _clean(v)) for k, v in row.items()}
                for row in table.to_dict("records")
            ]

    if compare_model is not None:
        pair = sorted([model, compare_model], key=lambda m: m.n_regimes)
        if pair[0].n_regimes == 1 and pair[1].n_regimes == 2:
            report["bhattacharyya"] = bhattacharyya_comparison(pair[0], pair[1])

    return report


def report_lines(report: Dict[str, Any]) -> List[str]:
    lines = []
    for reg in report["regimes"]:
        swaps = np.asarray(reg["role_swap_rates"])
        worst = int(np.argmax(swaps)) if swaps.size else 0
        lines.append(
            f"Regime {reg['regime']}: weight {reg['v']:.3f}, {reg['support_size']} permutations in support, "
            f"identity weight {reg['w_identity']:.3f}, overlap index {reg['overlap_index']:.4f}."
        )
        if swaps.size:
            lines.append(
                f"  Role {worst} is the most exchanged (swap rate {swaps[worst]:.3f}); "
                f"mean role swap rate {swaps.mean():.3f}."
            )

    if report.get("no_swap_probability") is None:
        lines.append(
            f"Average probability of no player-role swap (parameter reading): {report['no_swap_parameter']:.4f}."
        )
    else:
        lines.append(
            f"Average probability of no player-role swap: {report['no_swap_probability']:.4f} "
            f"(parameter reading {report['no_swap_parameter']:.4f}) over {report['n_frames']} frames."
        )

    if report.get("possession_correlation"):
        for row in report["possession_correlation"]:
            cells = ", ".join(
                f"{k.replace('_', ' ')} r = {v:.2f}" if v is not None else f"{k.replace('_', ' ')} r = n/a"
                for k, v in row.items() if k != "regime"
            )
            lines.append(f"Regime {row['regime']} posterior vs possession: {cells}.")

    bc = report.get("bhattacharyya")
    if bc:
        lines.append(
            f"Overlap index one regime {bc['bc_one']:.4f}; two regimes "
            f"{bc['bc_two'][0]:.4f} and {bc['bc_two'][1]:.4f}."
        )
    return lines
